//! Synthetic network scenarios and the causal replay engine.

pub mod fixture;
pub mod generate;
pub mod loo;
pub mod replay;
pub mod report;
pub mod spec;

pub use fixture::{default_network, default_plans, default_spec, fixture_predictor_settings, DAY_WINDOW, HISTORY_DAYS};
pub use generate::{generate, read_calendar, ScenarioOutput, CALENDAR_FILE, NETWORK_FILE, PLANS_FILE};
pub use loo::{day_queries, first_alert_for, leave_one_out, train_associator, training_records, LooConfig, LooReport};
pub use replay::{
    FeedView, Forecaster, ModelForecaster, PersistenceForecaster, PlanScore, QueryBuilder,
    QueryStep, RecommendationEvent, Recommender, ReplaySession, timeline, Arrivals,
};
pub use report::{replay_report, PlanChange, ReplayReport};
pub use spec::{Dynamics, IncidentScript, ScenarioSpec, WeatherOverride, SCENARIO_FORMAT_VERSION};

use std::path::PathBuf;

use crate::associator::AssociatorError;
use crate::domain::{DomainError, Minutes};
use crate::ingest::IngestError;
use crate::predictor::PredictorError;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{field}: {reason}")]
    Spec { field: String, reason: String },
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("read a record stamped {read} at clock {now}")]
    Lookahead { read: Minutes, now: Minutes },
    #[error("model was trained for network {expected}, feeds use {found}")]
    NetworkMismatch { expected: String, found: String },
    #[error("no engagement windows in the log")]
    NoEngagements,
    #[error("replay produced no events")]
    EmptyReplay,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Associator(#[from] AssociatorError),
}

pub(crate) fn spec_err(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Spec {
        field: field.into(),
        reason: reason.into(),
    }
}
