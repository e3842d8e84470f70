//! Multi-horizon speed forecasting and its baselines.

pub mod baselines;
pub mod dataset;
pub mod fit;
pub mod metrics;
pub mod model;
pub mod train;

use crate::domain::Minutes;
use crate::numerics::NumericsError;

pub use baselines::{latest_observation, HistoricalAverage, LassoBaseline, LassoCvConfig, LassoFit};
pub use dataset::{inference_batch, temporal_block_split, FeatureToggles, IncidentAggregation, InputLayout, SequenceDataset, Split};
pub use fit::{comparison_table, fit_predictor, horizon_scores, model_forecasts, FittedPredictor, PredictorSettings};
pub use metrics::{mape, render_table, rmse, score, HorizonMetrics, Metric};
pub use model::{attend, ForecastSequence, ModelConfig, Seq2Seq};
pub use train::{train, EpochRecord, History, TrainConfig};

/// Forecast steps of 5 minutes each.
pub const HORIZON: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("attention over an empty encoder sequence")]
    EmptyEncoder,
    #[error("teacher sequence has {got} steps, {need} required")]
    ShortTeacher { got: usize, need: usize },
    #[error("frames out of order at {0}")]
    Unordered(Minutes),
    #[error("no same-weekday history for {0}")]
    NoHistory(Minutes),
    #[error("{got} samples, at least {need} required")]
    TooFewSamples { got: usize, need: usize },
    #[error("forecast of zero in MAPE denominator")]
    ZeroForecast,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
