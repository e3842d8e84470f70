//! Deterministic feed synthesis.

use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::associator::PlanFile;
use crate::domain::{
    Actor, EngagementAction, EngagementRecord, Minutes, NetworkDefinition, NetworkModel, Role, WeatherRecord,
    SPEED_STEP, WEATHER_STEP,
};
use crate::ingest::feeds::{read_engagements, write_engagements, ENGAGEMENTS_FILE};
use crate::ingest::{AlertRecord, Calendar, ClosureRecord, Feeds, SpeedRecord};

use super::fixture::{default_network, default_plans, free_flow};
use super::spec::{IncidentScript, ScenarioSpec};
use super::ScenarioError;

pub const NETWORK_FILE: &str = "network.json";
pub const PLANS_FILE: &str = "plans.json";
pub const CALENDAR_FILE: &str = "calendar.json";

/// Everything a scenario run writes to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioOutput {
    pub network: NetworkDefinition,
    pub plans: PlanFile,
    pub feeds: Feeds,
    pub engagements: Vec<EngagementRecord>,
    pub holidays: Vec<NaiveDate>,
}

#[derive(Serialize, Deserialize)]
struct CalendarFile {
    holidays: Vec<NaiveDate>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| ScenarioError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ScenarioError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(io(path))
}

impl ScenarioOutput {
    pub fn calendar(&self) -> Calendar {
        Calendar::new(self.holidays.iter().copied())
    }

    pub fn network_model(&self) -> Result<NetworkModel, ScenarioError> {
        Ok(NetworkModel::from_definition(self.network.clone())?)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        write_json(&dir.join(NETWORK_FILE), &self.network)?;
        write_json(&dir.join(PLANS_FILE), &self.plans)?;
        write_json(
            &dir.join(CALENDAR_FILE),
            &CalendarFile {
                holidays: self.holidays.clone(),
            },
        )?;
        self.feeds.write_dir(dir)?;
        write_engagements(&dir.join(ENGAGEMENTS_FILE), &self.engagements)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, ScenarioError> {
        let calendar: CalendarFile = read_json(&dir.join(CALENDAR_FILE))?;
        Ok(Self {
            network: read_json(&dir.join(NETWORK_FILE))?,
            plans: PlanFile::load(&dir.join(PLANS_FILE))?,
            feeds: Feeds::read_dir(dir)?,
            engagements: read_engagements(&dir.join(ENGAGEMENTS_FILE))?,
            holidays: calendar.holidays,
        })
    }
}

/// Reads the holiday list written next to a feed directory, if any.
pub fn read_calendar(dir: &Path) -> Result<Calendar, ScenarioError> {
    let path = dir.join(CALENDAR_FILE);
    if !path.exists() {
        return Ok(Calendar::default());
    }
    let file: CalendarFile = read_json(&path)?;
    Ok(Calendar::new(file.holidays))
}

/// Speed multiplier of one segment due to one incident.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Effect {
    pub segment: usize,
    pub onset: Minutes,
    pub factor: f64,
    pub clearance: Minutes,
    pub recovery: Minutes,
}

impl Effect {
    pub fn at(&self, t: Minutes) -> f64 {
        if t < self.onset || self.onset >= self.clearance {
            1.0
        } else if t < self.clearance {
            self.factor
        } else if t < self.clearance + self.recovery {
            let x = (t - self.clearance) as f64 / self.recovery as f64;
            self.factor + (1.0 - self.factor) * x
        } else {
            1.0
        }
    }
}

/// Upstream segments of the same role as `i`, by hop count (1-based).
fn same_role_upstream(network: &NetworkModel, i: usize, hops: u32) -> Vec<(u32, usize)> {
    let role = network.role(i);
    let mut out = Vec::new();
    let mut frontier = vec![i];
    let mut seen = vec![i];
    for h in 1..=hops {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in network.upstream(u) {
                if network.role(v) == role && !seen.contains(&v) {
                    seen.push(v);
                    next.push(v);
                    out.push((h, v));
                }
            }
        }
        frontier = next;
    }
    out
}

/// Absolute-time speed effects of one scripted incident.
pub fn incident_effects(spec: &ScenarioSpec, network: &NetworkModel, inc: &IncidentScript) -> Result<Vec<Effect>, ScenarioError> {
    let d = &spec.dynamics;
    let base = spec.day_start(inc.day);
    let t0 = base + inc.start;
    let clearance = base + inc.clearance();
    let seg = network.require(&inc.segment)?;
    let mut out = vec![Effect {
        segment: seg,
        onset: t0,
        factor: inc.severity,
        clearance,
        recovery: d.recovery,
    }];
    let hops = d.wave_hops;
    for (h, u) in same_role_upstream(network, seg, hops) {
        let steps = h.div_ceil(d.wave_speed);
        out.push(Effect {
            segment: u,
            onset: t0 + Minutes::from(steps) * SPEED_STEP,
            factor: inc.severity + (1.0 - inc.severity) * f64::from(h) / f64::from(hops + 1),
            clearance,
            recovery: d.recovery,
        });
    }
    for s in &inc.diversion {
        out.push(Effect {
            segment: network.require(s)?,
            onset: t0 + d.diversion_lag,
            factor: 1.0 - d.diversion_strength * (1.0 - inc.severity),
            clearance,
            recovery: d.recovery,
        });
    }
    Ok(out)
}

fn peak(tod: f64, center: f64, width: f64) -> f64 {
    (-((tod - center) / width).powi(2)).exp()
}

/// Recurrent-congestion speed multiplier.
pub fn demand_profile(spec: &ScenarioSpec, role: Role, tod: Minutes, off_day: bool) -> f64 {
    let d = &spec.dynamics;
    let role_scale = match role {
        Role::Freeway => 1.0,
        Role::Arterial => 0.7,
        Role::Ramp => 0.5,
    };
    let day_scale = if off_day { 0.3 } else { 1.0 };
    let tod = tod as f64;
    1.0 - role_scale
        * day_scale
        * (d.am_peak_depth * peak(tod, 465.0, 40.0) + d.pm_peak_depth * peak(tod, 1035.0, 60.0))
}

fn weather_for_day(spec: &ScenarioSpec, day: u32, rng: &mut ChaCha8Rng) -> Vec<WeatherRecord> {
    let base = spec.day_start(day);
    let first = spec.day_window[0] / WEATHER_STEP;
    let last = (spec.day_window[1] + WEATHER_STEP - 1) / WEATHER_STEP;
    let day_temp: f64 = rng.gen_range(-6.0..6.0);
    let mut raining = false;
    let mut was_wet = false;
    let mut out = Vec::new();
    for hour in first..=last {
        let noise: f64 = rng.sample(StandardNormal);
        raining = if raining { rng.gen_bool(0.7) } else { rng.gen_bool(0.04) };
        let precip = if raining { rng.gen_range(0.02..0.2) } else { 0.0 };
        let h = hour as f64;
        let mut w = WeatherRecord {
            timestamp: base + hour * WEATHER_STEP,
            temperature: 42.0 + day_temp + 9.0 * ((h - 9.0) / 24.0 * std::f64::consts::TAU).sin() + noise,
            humidity: (if raining { 92.0 } else { 62.0 } + 4.0 * noise).clamp(5.0, 100.0),
            wind_speed: rng.gen_range(2.0..12.0),
            pressure: 29.9 + 0.05 * noise,
            visibility: if raining { rng.gen_range(2.0..6.0) } else { 10.0 },
            precip_hourly: precip,
            pavement_wet: raining || was_wet,
        };
        was_wet = raining;
        for o in spec.weather.iter().filter(|o| o.day == day && Minutes::from(o.hour) == hour) {
            w.temperature = o.temperature.unwrap_or(w.temperature);
            w.humidity = o.humidity.unwrap_or(w.humidity);
            w.wind_speed = o.wind_speed.unwrap_or(w.wind_speed);
            w.pressure = o.pressure.unwrap_or(w.pressure);
            w.visibility = o.visibility.unwrap_or(w.visibility);
            w.precip_hourly = o.precip_hourly.unwrap_or(w.precip_hourly);
            w.pavement_wet = o.pavement_wet.unwrap_or(w.pavement_wet);
        }
        out.push(w);
    }
    out
}

pub fn generate(spec: &ScenarioSpec) -> Result<ScenarioOutput, ScenarioError> {
    if spec.fixture != "default" {
        return Err(ScenarioError::UnknownFixture(spec.fixture.clone()));
    }
    let definition = default_network();
    let network = NetworkModel::from_definition(definition.clone())?;
    spec.validate(&network)?;
    let d = &spec.dynamics;
    let n = network.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offsets: Vec<f64> = (0..n).map(|_| 1.0 + rng.gen_range(-0.03..0.03)).collect();
    let mut effects = Vec::new();
    for inc in &spec.incidents {
        effects.extend(incident_effects(spec, &network, inc)?);
    }
    let mut feeds = Feeds::default();
    let calendar = Calendar::new(spec.holidays.iter().copied());
    let stationary = d.noise_sigma / (1.0 - d.noise_phi * d.noise_phi).sqrt();
    for day in 0..spec.days {
        let weather = weather_for_day(spec, day, &mut rng);
        let base = spec.day_start(day);
        let date = spec.start_date + chrono::Days::new(u64::from(day));
        let off_day = matches!(date.weekday(), Weekday::Sat | Weekday::Sun) || calendar.is_holiday(date);
        let mut ar: Vec<f64> = (0..n)
            .map(|_| stationary * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let day_effects: Vec<&Effect> = effects
            .iter()
            .filter(|e| e.onset < base + 24 * 60 && e.clearance + e.recovery > base)
            .collect();
        let mut tod = spec.day_window[0];
        while tod <= spec.day_window[1] {
            let t = base + tod;
            let rain = weather
                .iter()
                .rev()
                .find(|w| w.timestamp <= t)
                .is_some_and(|w| w.precip_hourly > 0.0);
            for (i, a) in ar.iter_mut().enumerate() {
                let role = network.role(i);
                let mut v = free_flow(role) * offsets[i] * demand_profile(spec, role, tod, off_day);
                if rain {
                    v *= d.rain_factor;
                }
                let factor = day_effects
                    .iter()
                    .filter(|e| e.segment == i)
                    .map(|e| e.at(t))
                    .fold(1.0, f64::min);
                *a = d.noise_phi * *a + d.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                let meas = d.measurement_noise * rng.sample::<f64, _>(StandardNormal);
                let speed = (v * factor + *a + meas).max(2.0);
                feeds.speeds.push(SpeedRecord {
                    segment_id: network.segments()[i].clone(),
                    timestamp: t,
                    speed_mph: (speed * 100.0).round() / 100.0,
                    confidence_score: Some(30.0),
                    confidence_value: None,
                });
            }
            tod += SPEED_STEP;
        }
        feeds.weather.extend(weather);
    }
    let mut engagements = Vec::new();
    for inc in &spec.incidents {
        let base = spec.day_start(inc.day);
        let alert = |t: Minutes| AlertRecord {
            timestamp: base + t,
            segment_id: inc.segment.clone(),
            category: "accident".into(),
            reliability: Some(4),
        };
        let mut t = inc.first_alert();
        while t < inc.closure_open() {
            feeds.alerts.push(alert(t));
            t += SPEED_STEP;
        }
        let mut t = inc.closure_close();
        while t < inc.clearance() {
            feeds.alerts.push(alert(t));
            t += SPEED_STEP;
        }
        feeds.closures.push(ClosureRecord {
            open_timestamp: base + inc.closure_open(),
            close_timestamp: base + inc.closure_close(),
            segment_ids: vec![inc.segment.clone()],
            closure_type: "lane".into(),
        });
        if let Some(plan) = &inc.plan {
            engagements.push(EngagementRecord {
                timestamp: base + inc.first_alert() + SPEED_STEP,
                plan_id: plan.clone(),
                action: EngagementAction::Activate,
                actor: Actor::Operator,
            });
            engagements.push(EngagementRecord {
                timestamp: base + inc.clearance() + d.operator_stop_lag,
                plan_id: plan.clone(),
                action: EngagementAction::Stop,
                actor: Actor::Operator,
            });
        }
    }
    feeds.alerts.sort_by_key(|a| a.timestamp);
    feeds.closures.sort_by_key(|c| c.open_timestamp);
    engagements.sort_by_key(|e| e.timestamp);
    Ok(ScenarioOutput {
        network: definition,
        plans: default_plans(),
        feeds,
        engagements,
        holidays: spec.holidays.clone(),
    })
}
