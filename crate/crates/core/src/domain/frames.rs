use std::fmt;

use serde::{Deserialize, Serialize};

use super::{is_aligned, DomainError, Minutes, NetworkModel, SPEED_STEP};

/// Observed speeds (mph) for every segment at one 5-minute bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedFrame {
    pub timestamp: Minutes,
    pub speeds: Vec<f64>,
}

impl SpeedFrame {
    pub fn new(timestamp: Minutes, speeds: Vec<f64>, model: &NetworkModel) -> Result<Self, DomainError> {
        if !is_aligned(timestamp, SPEED_STEP) {
            return Err(DomainError::Misaligned {
                timestamp,
                step: SPEED_STEP,
            });
        }
        if speeds.len() != model.len() {
            return Err(DomainError::FrameLength {
                timestamp,
                expected: model.len(),
                actual: speeds.len(),
            });
        }
        if let Some((index, &value)) = speeds
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(DomainError::BadSpeed {
                timestamp,
                index,
                value,
            });
        }
        Ok(Self { timestamp, speeds })
    }
}

/// Per-segment incident state: normal, user-reported alert, or official
/// closure. Ordered so that the fusion max-gate is `Ord::max`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum IncidentStatus {
    #[default]
    Normal = 0,
    Alert = 1,
    Closure = 2,
}

impl IncidentStatus {
    pub const ALL: [IncidentStatus; 3] = [Self::Normal, Self::Alert, Self::Closure];

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl From<IncidentStatus> for u8 {
    fn from(s: IncidentStatus) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for IncidentStatus {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Self::Normal),
            1 => Ok(Self::Alert),
            2 => Ok(Self::Closure),
            other => Err(format!("incident status must be 0, 1 or 2, got {other}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentStatusFrame {
    pub timestamp: Minutes,
    pub status: Vec<IncidentStatus>,
}

impl IncidentStatusFrame {
    pub fn normal(timestamp: Minutes, n: usize) -> Self {
        Self {
            timestamp,
            status: vec![IncidentStatus::Normal; n],
        }
    }
}

/// Field order of [`WeatherRecord::features`].
pub const WEATHER_FIELDS: [&str; 7] = [
    "temperature",
    "humidity",
    "wind_speed",
    "pressure",
    "visibility",
    "precip_hourly",
    "pavement_wet",
];

/// One hourly weather observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub timestamp: Minutes,
    /// °F
    pub temperature: f64,
    /// percent
    pub humidity: f64,
    /// mph
    pub wind_speed: f64,
    /// inHg
    pub pressure: f64,
    /// miles
    pub visibility: f64,
    /// inches
    pub precip_hourly: f64,
    pub pavement_wet: bool,
}

impl WeatherRecord {
    pub fn continuous(&self) -> [f64; 6] {
        [
            self.temperature,
            self.humidity,
            self.wind_speed,
            self.pressure,
            self.visibility,
            self.precip_hourly,
        ]
    }

    pub fn features(&self) -> [f64; 7] {
        let c = self.continuous();
        [c[0], c[1], c[2], c[3], c[4], c[5], if self.pavement_wet { 1.0 } else { 0.0 }]
    }

    pub fn from_continuous(timestamp: Minutes, c: [f64; 6], pavement_wet: bool) -> Self {
        Self {
            timestamp,
            temperature: c[0],
            humidity: c[1],
            wind_speed: c[2],
            pressure: c[3],
            visibility: c[4],
            precip_hourly: c[5],
            pavement_wet,
        }
    }
}

/// Label of the "no incident timing" plan.
pub const NULL_PLAN: &str = "NULL";

/// Signal plan label (`A`..`F` in the fixtures, or [`NULL_PLAN`]).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlanId(String);

impl PlanId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn null() -> Self {
        Self(NULL_PLAN.to_owned())
    }

    pub fn is_null(&self) -> bool {
        self.0 == NULL_PLAN
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PlanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PlanId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngagementAction {
    Activate,
    Stop,
    Override,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Model,
    Operator,
}

/// One line of the signal engagement log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementRecord {
    pub timestamp: Minutes,
    pub plan_id: PlanId,
    pub action: EngagementAction,
    pub actor: Actor,
}

impl EngagementRecord {
    /// Errors unless `records` are in nondecreasing time order.
    pub fn check_order(records: &[EngagementRecord]) -> Result<(), DomainError> {
        for w in records.windows(2) {
            if w[1].timestamp < w[0].timestamp {
                return Err(DomainError::OutOfOrder {
                    previous: w[0].timestamp,
                    next: w[1].timestamp,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn status_serializes_as_integer() {
        let frame = IncidentStatusFrame {
            timestamp: 5,
            status: vec![IncidentStatus::Normal, IncidentStatus::Closure],
        };
        let text = serde_json::to_string(&frame).unwrap();
        assert_eq!(text, r#"{"timestamp":5,"status":[0,2]}"#);
        assert!(serde_json::from_str::<IncidentStatusFrame>(r#"{"timestamp":5,"status":[3]}"#).is_err());
    }

    proptest! {
        #[test]
        fn max_gate_stays_in_alphabet(a in 0u8..3, b in 0u8..3) {
            let x = IncidentStatus::try_from(a).unwrap();
            let y = IncidentStatus::try_from(b).unwrap();
            let m = x.max(y);
            prop_assert!(IncidentStatus::ALL.contains(&m));
            prop_assert_eq!(m.code(), a.max(b));
        }
    }
}
