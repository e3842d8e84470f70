//! Training and scoring on a frame sequence: scaler, windows, split, model.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::NetworkModel;
use crate::ingest::calendar::date_of;
use crate::ingest::{FrameScaler, RawFrame};

use super::baselines::{latest_observation, HistoricalAverage, LassoBaseline, LassoCvConfig};
use super::dataset::{temporal_block_split, FeatureToggles, InputLayout, SequenceDataset, Split};
use super::metrics::{score, HorizonMetrics};
use super::model::{ModelConfig, Seq2Seq};
use super::train::{train, EpochRecord, History, TrainConfig};
use super::PredictorError;

pub const LATEST_OBSERVATION: &str = "Latest-observation";
pub const HISTORICAL_AVERAGE: &str = "Historical-average";
pub const LASSO: &str = "LASSO";
pub const SEQ2SEQ: &str = "Seq2seq-attention";
pub const SEQ2SEQ_PLAIN: &str = "GRU-no-attention";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub toggles: FeatureToggles,
    /// Consecutive windows kept together by the split.
    pub block_len: usize,
    pub train_fraction: f64,
    /// Tail of the training share held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for PredictorSettings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            toggles: FeatureToggles::default(),
            block_len: 12,
            train_fraction: 0.8,
            validation_fraction: 0.1,
        }
    }
}

pub struct FittedPredictor {
    pub model: Seq2Seq,
    pub scaler: FrameScaler,
    pub dataset: SequenceDataset,
    pub split: Split,
    pub history: History,
}

/// Fits the scaler on frames outside `excluded_days`, windows every frame,
/// splits the windows of the remaining days and trains the model.
pub fn fit_predictor(
    network: &NetworkModel,
    frames: &[RawFrame],
    excluded_days: &BTreeSet<NaiveDate>,
    settings: &PredictorSettings,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<FittedPredictor, PredictorError> {
    let kept: Vec<&RawFrame> = frames
        .iter()
        .filter(|f| !excluded_days.contains(&date_of(f.timestamp)))
        .collect();
    let scaler = FrameScaler::fit(kept.iter().copied()).ok_or(PredictorError::EmptyDataset)?;
    let cfg = &settings.model;
    let layout = InputLayout::new(network, cfg.incident_aggregation, settings.toggles);
    let dataset = SequenceDataset::build(frames, &scaler, layout.clone(), cfg.lookback, cfg.horizon)?;
    let split = temporal_block_split(
        &dataset,
        excluded_days,
        settings.block_len,
        settings.train_fraction,
        settings.validation_fraction,
        settings.train.seed,
    );
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(PredictorError::TooFewSamples {
            got: split.train.len() + split.validation.len(),
            need: 2,
        });
    }
    let mut model = Seq2Seq::new(cfg.clone(), layout, settings.train.seed)?;
    let history = train(&mut model, &dataset, &split.train, &split.validation, &settings.train, on_epoch)?;
    Ok(FittedPredictor {
        model,
        scaler,
        dataset,
        split,
        history,
    })
}

/// Observed `[horizon][target]` speeds after window base `k`.
fn observed(data: &SequenceDataset, k: usize) -> Vec<Vec<f64>> {
    (1..=data.horizon).map(|h| data.target_mph[k + h].clone()).collect()
}

/// Model forecasts in mph for windows `ks`, `[sample][horizon][target]`.
pub fn model_forecasts(
    model: &Seq2Seq,
    scaler: &FrameScaler,
    data: &SequenceDataset,
    ks: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>, PredictorError> {
    let mut out = Vec::with_capacity(ks.len());
    for chunk in ks.chunks(256) {
        out.extend(model.predict_mph(&data.batch(chunk), scaler)?);
    }
    Ok(out)
}

/// Latest-observation and model rows over windows `ks`.
pub fn horizon_scores(
    model: &Seq2Seq,
    scaler: &FrameScaler,
    data: &SequenceDataset,
    ks: &[usize],
) -> Result<Vec<HorizonMetrics>, PredictorError> {
    let actual: Vec<_> = ks.iter().map(|&k| observed(data, k)).collect();
    let persistence: Vec<_> = ks
        .iter()
        .map(|&k| latest_observation(&data.target_mph[k], data.horizon))
        .collect();
    let name = if model.config.attention { SEQ2SEQ } else { SEQ2SEQ_PLAIN };
    Ok(vec![
        score(LATEST_OBSERVATION, &persistence, &actual)?,
        score(name, &model_forecasts(model, scaler, data, ks)?, &actual)?,
    ])
}

/// Every baseline on windows `ks` that have same-weekday history: latest
/// observation, historical average, LASSO fitted on `train_ks`, and each of
/// `models`. With less than a week of frames no window has that history; the
/// historical-average row is then left out and all of `ks` are scored.
pub fn comparison_table(
    data: &SequenceDataset,
    frames: &[RawFrame],
    train_ks: &[usize],
    ks: &[usize],
    lasso: Option<(usize, &LassoCvConfig)>,
    models: &[(&Seq2Seq, &FrameScaler)],
) -> Result<Vec<HorizonMetrics>, PredictorError> {
    let timestamps: Vec<_> = frames.iter().map(|f| f.timestamp).collect();
    let targets = &data.layout.targets;
    let speeds = frames
        .iter()
        .map(|f| targets.iter().map(|&i| f.speeds[i]).collect())
        .collect();
    let average = HistoricalAverage::new(&timestamps, speeds);
    let mut usable = Vec::new();
    let mut historical = Vec::new();
    for &k in ks {
        if let Ok(f) = average.forecast(data.base_time(k), data.horizon) {
            usable.push(k);
            historical.push(f);
        }
    }
    if usable.is_empty() {
        usable = ks.to_vec();
    }
    let actual: Vec<_> = usable.iter().map(|&k| observed(data, k)).collect();
    let persistence: Vec<_> = usable
        .iter()
        .map(|&k| latest_observation(&data.target_mph[k], data.horizon))
        .collect();
    let mut rows = vec![score(LATEST_OBSERVATION, &persistence, &actual)?];
    if !historical.is_empty() {
        rows.push(score(HISTORICAL_AVERAGE, &historical, &actual)?);
    }
    if let Some((lags, cfg)) = lasso {
        let fit = LassoBaseline::fit(data, train_ks, lags, cfg)?;
        let pred: Vec<_> = usable.iter().map(|&k| fit.forecast(data, k)).collect();
        rows.push(score(LASSO, &pred, &actual)?);
    }
    for (model, scaler) in models {
        let name = if model.config.attention { SEQ2SEQ } else { SEQ2SEQ_PLAIN };
        rows.push(score(name, &model_forecasts(model, scaler, data, &usable)?, &actual)?);
    }
    Ok(rows)
}
