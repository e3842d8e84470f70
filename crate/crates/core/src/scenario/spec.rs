//! Scenario description file.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{is_aligned, Minutes, NetworkModel, PlanId, SegmentId, SPEED_STEP};
use crate::ingest::calendar::from_datetime;

use super::{spec_err, ScenarioError};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// Traffic response parameters shared by every incident.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dynamics {
    /// Segments the slowdown wave travels upstream per 5-minute step.
    pub wave_speed: u32,
    /// Number of upstream segments reached by the wave.
    pub wave_hops: u32,
    /// Minutes until diverted traffic slows the arterial.
    pub diversion_lag: Minutes,
    /// Arterial speed factor is `1 - strength * (1 - severity)`.
    pub diversion_strength: f64,
    /// Minutes of linear recovery after clearance.
    pub recovery: Minutes,
    /// Minutes between clearance and the operator stopping the plan.
    pub operator_stop_lag: Minutes,
    /// AR(1) coefficient of per-segment speed fluctuations per step.
    pub noise_phi: f64,
    /// Innovation std of the fluctuations, mph.
    pub noise_sigma: f64,
    /// Independent per-record measurement noise, mph.
    pub measurement_noise: f64,
    pub am_peak_depth: f64,
    pub pm_peak_depth: f64,
    /// Speed factor while it rains.
    pub rain_factor: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            wave_speed: 1,
            wave_hops: 3,
            diversion_lag: 10,
            diversion_strength: 0.8,
            recovery: 20,
            operator_stop_lag: 15,
            noise_phi: 0.9,
            noise_sigma: 1.2,
            measurement_noise: 0.5,
            am_peak_depth: 0.15,
            pm_peak_depth: 0.2,
            rain_factor: 0.93,
        }
    }
}

fn default_alert_delay() -> Minutes {
    5
}

fn default_closure_delay() -> Minutes {
    15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidentScript {
    /// Day index from `start_date`.
    pub day: u32,
    /// Minute of day of onset.
    pub start: Minutes,
    pub duration: Minutes,
    pub segment: SegmentId,
    /// Speed factor on the incident segment, in (0, 1].
    pub severity: f64,
    #[serde(default = "default_alert_delay")]
    pub alert_delay: Minutes,
    /// Minutes from the first alert to the official closure.
    #[serde(default = "default_closure_delay")]
    pub closure_delay: Minutes,
    /// Minutes of renewed alerts after the closure is lifted.
    #[serde(default)]
    pub alert_tail: Minutes,
    /// Arterial segments receiving diverted traffic.
    #[serde(default)]
    pub diversion: Vec<SegmentId>,
    /// Plan the operators engage for this incident.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanId>,
}

impl IncidentScript {
    pub fn first_alert(&self) -> Minutes {
        self.start + self.alert_delay
    }

    pub fn closure_open(&self) -> Minutes {
        self.first_alert() + self.closure_delay
    }

    pub fn closure_close(&self) -> Minutes {
        self.start + self.duration - self.alert_tail
    }

    pub fn clearance(&self) -> Minutes {
        self.start + self.duration
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeatherOverride {
    pub day: u32,
    pub hour: u32,
    pub temperature: Option<f64>,
    pub humidity: Option<f64>,
    pub wind_speed: Option<f64>,
    pub pressure: Option<f64>,
    pub visibility: Option<f64>,
    pub precip_hourly: Option<f64>,
    pub pavement_wet: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub format_version: u32,
    pub seed: u64,
    /// Network fixture id; only `default` exists.
    pub fixture: String,
    pub start_date: NaiveDate,
    pub days: u32,
    /// Inclusive minute-of-day range with traffic records.
    pub day_window: [Minutes; 2],
    #[serde(default)]
    pub holidays: Vec<NaiveDate>,
    #[serde(default)]
    pub dynamics: Dynamics,
    #[serde(default)]
    pub incidents: Vec<IncidentScript>,
    #[serde(default)]
    pub weather: Vec<WeatherOverride>,
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec: Self = serde_json::from_str(&text).map_err(|source| ScenarioError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if spec.format_version != SCENARIO_FORMAT_VERSION {
            return Err(spec_err(
                "format_version",
                format!("expected {SCENARIO_FORMAT_VERSION}, found {}", spec.format_version),
            ));
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        let text = serde_json::to_string_pretty(self).expect("spec serializes");
        std::fs::write(path, text + "\n").map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Epoch minute of midnight of day `d`.
    pub fn day_start(&self, d: u32) -> Minutes {
        let date = self.start_date + chrono::Days::new(u64::from(d));
        from_datetime(date.and_hms_opt(0, 0, 0).expect("midnight"))
    }

    pub fn validate(&self, network: &NetworkModel) -> Result<(), ScenarioError> {
        if self.days == 0 {
            return Err(spec_err("days", "must be at least 1"));
        }
        let [a, b] = self.day_window;
        if !(0..24 * 60).contains(&a) || !(0..24 * 60).contains(&b) || a > b {
            return Err(spec_err("day_window", "expected 0 <= start <= end < 1440"));
        }
        if !is_aligned(a, SPEED_STEP) || !is_aligned(b, SPEED_STEP) {
            return Err(spec_err("day_window", "bounds must be multiples of 5"));
        }
        let d = &self.dynamics;
        if d.wave_speed == 0 {
            return Err(spec_err("dynamics.wave_speed", "must be positive"));
        }
        if !(0.0..1.0).contains(&d.noise_phi) {
            return Err(spec_err("dynamics.noise_phi", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&d.diversion_strength) {
            return Err(spec_err("dynamics.diversion_strength", "must lie in [0, 1]"));
        }
        if !(d.rain_factor > 0.0 && d.rain_factor <= 1.0) {
            return Err(spec_err("dynamics.rain_factor", "must lie in (0, 1]"));
        }
        for (name, v) in [
            ("dynamics.noise_sigma", d.noise_sigma),
            ("dynamics.measurement_noise", d.measurement_noise),
        ] {
            if !(v >= 0.0) {
                return Err(spec_err(name, "must be nonnegative"));
            }
        }
        for (name, v) in [
            ("dynamics.diversion_lag", d.diversion_lag),
            ("dynamics.recovery", d.recovery),
            ("dynamics.operator_stop_lag", d.operator_stop_lag),
        ] {
            if v < 0 || !is_aligned(v, SPEED_STEP) {
                return Err(spec_err(name, "must be a nonnegative multiple of 5"));
            }
        }
        for (k, inc) in self.incidents.iter().enumerate() {
            let f = |name: &str| format!("incidents[{k}].{name}");
            if inc.day >= self.days {
                return Err(spec_err(f("day"), "beyond scenario duration"));
            }
            if !(inc.severity > 0.0 && inc.severity <= 1.0) {
                return Err(spec_err(f("severity"), "must lie in (0, 1]"));
            }
            for (name, v) in [
                ("start", inc.start),
                ("duration", inc.duration),
                ("alert_delay", inc.alert_delay),
                ("closure_delay", inc.closure_delay),
                ("alert_tail", inc.alert_tail),
            ] {
                if v < 0 || !is_aligned(v, SPEED_STEP) {
                    return Err(spec_err(f(name), "must be a nonnegative multiple of 5"));
                }
            }
            if inc.start < a || inc.start + inc.duration >= b {
                return Err(spec_err(f("start"), "incident must end inside the day window"));
            }
            if inc.alert_delay + inc.closure_delay + inc.alert_tail >= inc.duration {
                return Err(spec_err(
                    f("duration"),
                    "alert_delay + closure_delay + alert_tail must be shorter than the incident",
                ));
            }
            network
                .require(&inc.segment)
                .map_err(|_| spec_err(f("segment"), format!("unknown segment `{}`", inc.segment)))?;
            for (j, s) in inc.diversion.iter().enumerate() {
                network
                    .require(s)
                    .map_err(|_| spec_err(format!("incidents[{k}].diversion[{j}]"), format!("unknown segment `{s}`")))?;
            }
            if inc.plan.as_ref().is_some_and(PlanId::is_null) {
                return Err(spec_err(f("plan"), "the null plan cannot be engaged"));
            }
        }
        let mut windows: Vec<(Minutes, Minutes, usize)> = self
            .incidents
            .iter()
            .enumerate()
            .filter(|(_, i)| i.plan.is_some())
            .map(|(k, i)| {
                let base = self.day_start(i.day);
                (base + i.first_alert() + SPEED_STEP, base + i.clearance() + d.operator_stop_lag, k)
            })
            .collect();
        windows.sort_unstable();
        for w in windows.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(spec_err(format!("incidents[{}].plan", w[1].2), "engagement overlaps another"));
            }
        }
        for (k, w) in self.weather.iter().enumerate() {
            if w.day >= self.days || w.hour >= 24 {
                return Err(spec_err(format!("weather[{k}]"), "day or hour out of range"));
            }
        }
        Ok(())
    }
}
