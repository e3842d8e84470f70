//! The default 32-segment network, its six plans and the reference scenario.
//!
//! Two freeway directions of ten segments each, a four-segment arterial in
//! each direction and two off-ramp pairs that feed the last arterial
//! segment of each direction.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::associator::{PlanDefinition, PlanFile, PLAN_FORMAT_VERSION};
use crate::domain::{
    Edge, Minutes, NetworkDefinition, PlanId, Role, SegmentDefinition, SegmentId, NETWORK_FORMAT_VERSION,
};
use crate::predictor::PredictorSettings;

use super::spec::{Dynamics, IncidentScript, ScenarioSpec, SCENARIO_FORMAT_VERSION};

/// 05:30 to 20:55.
pub const DAY_WINDOW: [Minutes; 2] = [330, 1255];

/// Days of history before the engagement days.
pub const HISTORY_DAYS: u32 = 28;

const FREE_FLOW: [(Role, f64); 3] = [(Role::Freeway, 65.0), (Role::Arterial, 40.0), (Role::Ramp, 35.0)];

pub fn free_flow(role: Role) -> f64 {
    FREE_FLOW.iter().find(|(r, _)| *r == role).map(|(_, v)| *v).expect("every role listed")
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k:02}")).collect()
}

pub fn default_network() -> NetworkDefinition {
    let mut segments = Vec::new();
    let mut edges = Vec::new();
    let mut add_chain = |names: &[String], role: Role, x: f64| {
        for (k, name) in names.iter().enumerate() {
            segments.push(SegmentDefinition {
                id: SegmentId::from(name.as_str()),
                role,
                reference_speed: free_flow(role),
                display: Some([x, k as f64]),
            });
        }
        for w in names.windows(2) {
            edges.push(Edge {
                from: w[0].as_str().into(),
                to: w[1].as_str().into(),
            });
        }
    };
    add_chain(&ids("FN", 10), Role::Freeway, 0.0);
    add_chain(&ids("FS", 10), Role::Freeway, 1.0);
    add_chain(&ids("AN", 4), Role::Arterial, 3.0);
    add_chain(&ids("AS", 4), Role::Arterial, 4.0);
    add_chain(&["R1".into(), "R2".into()], Role::Ramp, 2.0);
    add_chain(&["R3".into(), "R4".into()], Role::Ramp, 2.5);
    for (from, to) in [("FN06", "R1"), ("R2", "AN04"), ("FS06", "R3"), ("R4", "AS04")] {
        edges.push(Edge {
            from: from.into(),
            to: to.into(),
        });
    }
    let targets = segments.iter().map(|s| s.id.clone()).collect();
    NetworkDefinition {
        format_version: NETWORK_FORMAT_VERSION,
        segments,
        upstream_edges: edges,
        targets,
    }
}

fn plan(id: &str, description: &str, incident: &[&str], arterial: &[&str]) -> PlanDefinition {
    PlanDefinition {
        id: id.into(),
        description: description.into(),
        incident_segments: incident.iter().map(|&s| s.into()).collect(),
        arterial_segments: arterial.iter().map(|&s| s.into()).collect(),
    }
}

pub fn default_plans() -> PlanFile {
    PlanFile {
        format_version: PLAN_FORMAT_VERSION,
        plans: vec![
            plan("A", "SB freeway north segment closed, favor SB arterial", &["FS03", "FS04", "FS05"], &["AS01", "AS02"]),
            plan("B", "NB freeway north segment closed, favor NB arterial", &["FN07", "FN08", "FN09"], &["AN03", "AN04"]),
            plan("C", "SB freeway south segment closed, favor SB arterial", &["FS07", "FS08", "FS09"], &["AS03", "AS04"]),
            plan("D", "NB freeway south segment closed, favor NB arterial", &["FN02", "FN03", "FN04"], &["AN01", "AN02"]),
            plan("E", "NB off-ramp queue, favor ramp discharge", &["R1", "R2"], &["AN04"]),
            plan("F", "SB off-ramp queue, favor ramp discharge", &["R3", "R4"], &["AS04"]),
        ],
    }
}

/// Arterial segments that absorb diverted traffic from `segment`.
pub fn parallel_arterial(segment: &str) -> Vec<SegmentId> {
    let pick = |a: &[&str]| a.iter().map(|&s| SegmentId::from(s)).collect();
    let k: u32 = segment.get(2..).and_then(|s| s.parse().ok()).unwrap_or(0);
    match &segment[..2.min(segment.len())] {
        "FN" if k <= 5 => pick(&["AN01", "AN02"]),
        "FN" => pick(&["AN03", "AN04"]),
        "FS" if k <= 5 => pick(&["AS01", "AS02"]),
        "FS" => pick(&["AS03", "AS04"]),
        _ if segment == "R1" || segment == "R2" => pick(&["AN04"]),
        _ if segment == "R3" || segment == "R4" => pick(&["AS04"]),
        _ => Vec::new(),
    }
}

fn engaged(day: u32, start: Minutes, duration: Minutes, segment: &str, alert_tail: Minutes, plan: &str) -> IncidentScript {
    IncidentScript {
        day,
        start,
        duration,
        segment: segment.into(),
        severity: 0.3,
        alert_delay: 20,
        closure_delay: 15,
        alert_tail,
        diversion: parallel_arterial(segment),
        plan: Some(PlanId::new(plan)),
    }
}

/// Four weeks of history with random unengaged incidents, then four
/// engagement days for plans A, C, D and F.
pub fn default_spec(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1c5);
    let start_date = NaiveDate::from_ymd_opt(2019, 3, 4).expect("valid date");
    let candidates: Vec<String> = ids("FN", 10)
        .into_iter()
        .chain(ids("FS", 10))
        .chain(["R1", "R2", "R3", "R4"].map(String::from))
        .collect();
    let mut incidents = Vec::new();
    for day in 0..HISTORY_DAYS {
        let weekend = day % 7 >= 5;
        let count = if weekend { rng.gen_range(0..=1) } else { rng.gen_range(1..=2) };
        for _ in 0..count {
            let segment = candidates[rng.gen_range(0..candidates.len())].clone();
            let duration = 5 * rng.gen_range(10..=18);
            let alert_delay = 5 * rng.gen_range(1..=4);
            let closure_delay = 5 * rng.gen_range(2..=4);
            incidents.push(IncidentScript {
                day,
                start: 5 * rng.gen_range(78..=222),
                duration,
                severity: rng.gen_range(0.25..0.8),
                alert_delay,
                closure_delay,
                alert_tail: if rng.gen_bool(0.3) { 5 } else { 0 },
                diversion: parallel_arterial(&segment),
                segment: SegmentId::from(segment.as_str()),
                plan: None,
            });
        }
    }
    let d = HISTORY_DAYS;
    incidents.push(engaged(d, 460, 70, "FS04", 0, "A"));
    incidents.push(engaged(d + 1, 990, 75, "FS08", 10, "C"));
    incidents.push(engaged(d + 2, 490, 70, "FN03", 0, "D"));
    incidents.push(engaged(d + 3, 1020, 65, "R4", 5, "F"));
    ScenarioSpec {
        format_version: SCENARIO_FORMAT_VERSION,
        seed,
        fixture: "default".into(),
        start_date,
        days: HISTORY_DAYS + 4,
        day_window: DAY_WINDOW,
        holidays: Vec::new(),
        dynamics: Dynamics::default(),
        incidents,
        weather: Vec::new(),
    }
}

/// Predictor settings sized for the fixture on a single core: a narrower
/// network, a larger step and more patience than the full-scale defaults.
pub fn fixture_predictor_settings(seed: u64) -> PredictorSettings {
    let mut s = PredictorSettings::default();
    s.model.hidden = 64;
    s.model.attention_hidden = 64;
    s.train.adam.lr = 0.002;
    s.train.max_epochs = 100;
    s.train.patience = 15;
    s.train.seed = seed;
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::associator::PlanKeyMatrix;
    use crate::domain::NetworkModel;

    #[test]
    fn fixture_is_consistent() {
        let net = NetworkModel::from_definition(default_network()).unwrap();
        assert_eq!(net.len(), 32);
        assert_eq!(net.targets().len(), 32);
        let keys = PlanKeyMatrix::build(&default_plans(), &net).unwrap();
        assert_eq!(keys.len(), 7);
        let an04 = net.require(&"AN04".into()).unwrap();
        let r2 = net.require(&"R2".into()).unwrap();
        assert!(net.upstream(an04).contains(&r2));
        let spec = default_spec(7);
        spec.validate(&net).unwrap();
        assert_eq!(spec, default_spec(7));
        assert_eq!(spec.incidents.iter().filter(|i| i.plan.is_some()).count(), 4);
    }
}
