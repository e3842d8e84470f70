//! Core data types shared by every pipeline stage.
//!
//! All per-segment vectors are positional: entry `i` of any frame refers to
//! `NetworkModel::segments()[i]`. Timestamps are integer epoch minutes; speed
//! data lives on 5-minute bins and weather on 60-minute bins.

mod frames;
mod network;

pub use frames::{
    Actor, EngagementAction, EngagementRecord, IncidentStatus, IncidentStatusFrame, PlanId,
    SpeedFrame, WeatherRecord, NULL_PLAN, WEATHER_FIELDS,
};
pub use network::{
    validate_network, Edge, NetworkDefinition, NetworkModel, Role, SegmentDefinition, SegmentId,
    Violation, NETWORK_FORMAT_VERSION,
};

use thiserror::Error;

/// Epoch minutes.
pub type Minutes = i64;

/// Cadence of speed, incident and feature frames.
pub const SPEED_STEP: Minutes = 5;

/// Cadence of weather records.
pub const WEATHER_STEP: Minutes = 60;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("segment id must be non-empty")]
    EmptySegmentId,
    #[error("invalid network: {}", join_violations(.0))]
    InvalidNetwork(Vec<Violation>),
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("frame at t={timestamp} has {actual} entries, network has {expected} segments")]
    FrameLength {
        timestamp: Minutes,
        expected: usize,
        actual: usize,
    },
    #[error("timestamp {timestamp} is not aligned to {step}-minute bins")]
    Misaligned { timestamp: Minutes, step: Minutes },
    #[error("speed on segment #{index} at t={timestamp} is {value}, expected a finite positive value")]
    BadSpeed {
        timestamp: Minutes,
        index: usize,
        value: f64,
    },
    #[error("reference speed for segment #{index} is {value}, expected > 0")]
    BadReferenceSpeed { index: usize, value: f64 },
    #[error("records out of order: t={next} follows t={previous}")]
    OutOfOrder { previous: Minutes, next: Minutes },
    #[error("unsupported format_version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Returns true when `t` sits on a bin boundary of `step` minutes.
pub fn is_aligned(t: Minutes, step: Minutes) -> bool {
    t.rem_euclid(step) == 0
}
