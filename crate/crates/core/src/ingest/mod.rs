//! Feed parsing, cleaning and feature construction.

pub mod calendar;
pub mod feeds;
pub mod frames;
pub mod incidents;
pub mod scaler;
pub mod speed;
pub mod weather;

use std::path::PathBuf;

use crate::domain::{DomainError, Minutes};

pub use calendar::{time_features, Calendar, DayGroup, TIME_FEATURE_WIDTH};
pub use feeds::{AlertRecord, ClosureRecord, Feeds, SpeedRecord};
pub use frames::{build_frames, FeatureFrame, FrameScaler, IngestOptions, IngestOutput, LiveFrameBuilder, RawFrame};
pub use incidents::{fuse_incidents, interpolate_alert_gap, AlertEvent, ClosureEvent};
pub use scaler::{apply_scaler, MinMaxScaler};
pub use speed::{impute_speed, reference_speed, slowdown, tti};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("no observations to work from")]
    NoObservations,
    #[error("segment {0} has no valid speed observations")]
    SegmentWithoutData(String),
    #[error("{0} feed is empty")]
    EmptyFeed(&'static str),
    #[error("speeds must be positive (speed {speed}, reference {v_ref})")]
    NonPositiveSpeed { speed: f64, v_ref: f64 },
    #[error("cyclic index {index} outside period {period}")]
    CyclicRange { index: i64, period: u32 },
    #[error("no weather observations in range")]
    NoWeather,
    #[error("timestamp {0} is not on the 5-minute grid")]
    Misaligned(Minutes),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}: unsupported format_version {found}")]
    FormatVersion { path: PathBuf, found: u32 },
    #[error("{0}: missing format_version header")]
    MissingHeader(String),
}
