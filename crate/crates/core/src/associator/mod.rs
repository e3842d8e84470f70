//! Plan association: plan keys, TTI queries, the 105 closeness metrics, the
//! pairwise ranking kernel and the dwell-limited transition rule.

pub mod evaluation;
pub mod metrics;
pub mod plans;
pub mod ranklr;
pub mod transition;

pub use evaluation::{engagement_windows, evaluate_recommendations, FoldReport, RecommendationEvaluation, Timeline, LEAD_SEARCH};
pub use metrics::{
    evaluate_metrics, feature_names, metric_precision, metric_rule, metric_similarity,
    MetricVector, Thresholds, TrafficQuery, METRIC_WIDTH, THRESHOLDS,
};
pub use plans::{PlanDefinition, PlanFile, PlanKeyMatrix, PLAN_FORMAT_VERSION};
pub use ranklr::{build_pairwise_dataset, loss_gradient, sigmoid, PairwiseDataset, RankConfig, RankModel, RankRecord};
pub use transition::{candidate, step_transition, PlanState, Step, TransitionEvent, DEFAULT_DWELL};

use std::path::PathBuf;

use crate::domain::{DomainError, Minutes};

#[derive(Debug, thiserror::Error)]
pub enum AssociatorError {
    #[error("threshold {0} must be a finite TTI of at least 1")]
    UnknownThreshold(f64),
    #[error("unknown plan `{0}`")]
    UnknownPlan(String),
    #[error("plan `{plan}`: {reason}")]
    InvalidPlan { plan: String, reason: String },
    #[error("query row has {got} entries, key has {expected}")]
    Width { got: usize, expected: usize },
    #[error("query has {0} rows, expected 7")]
    Rows(usize),
    #[error("TTI {0} is below 1")]
    BadTti(f64),
    #[error("pairwise dataset needs at least one positive and one negative sample")]
    EmptyDataset,
    #[error("engagement log is empty")]
    EmptyLog,
    #[error("no recommendation at {0}")]
    MissingStep(Minutes),
    #[error("rank model has {got} weights, expected {expected}")]
    ModelWidth { got: usize, expected: usize },
    #[error("rank model feature #{index} is `{found}`, expected `{expected}`")]
    FeatureName {
        index: usize,
        found: String,
        expected: String,
    },
    #[error("{path}: unsupported format_version {found}")]
    FormatVersion { path: PathBuf, found: u32 },
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
}
