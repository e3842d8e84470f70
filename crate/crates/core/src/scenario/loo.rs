//! Leave-one-engagement-out evaluation of the plan recommender.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::associator::{
    build_pairwise_dataset, engagement_windows, evaluate_recommendations, FoldReport, PlanKeyMatrix, RankConfig,
    RankModel, RankRecord, Thresholds, THRESHOLDS,
};
use crate::domain::{EngagementRecord, Minutes, NetworkModel, PlanId};
use crate::ingest::calendar::day_start;
use crate::ingest::{Calendar, Feeds};

use super::replay::{timeline, Forecaster, QueryBuilder, QueryStep, Recommender};
use super::ScenarioError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LooConfig {
    /// Minutes on either side of an engagement window whose queries are
    /// used as null-plan training records.
    pub margin: Minutes,
    /// Minutes before each window start left unlabelled: congestion is
    /// already building there and the operator simply has not acted yet.
    pub guard: Minutes,
    pub rank: RankConfig,
    pub thresholds: Thresholds,
    pub dwell: Minutes,
    /// Inclusive minute-of-day range replayed on each engagement day.
    pub day_window: [Minutes; 2],
}

impl Default for LooConfig {
    fn default() -> Self {
        Self {
            margin: 60,
            guard: 30,
            rank: RankConfig::default(),
            thresholds: THRESHOLDS,
            dwell: crate::associator::DEFAULT_DWELL,
            day_window: super::fixture::DAY_WINDOW,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub folds: Vec<FoldReport>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Nonzero kernel weights of each fold's model.
    pub nonzero_weights: Vec<usize>,
}

/// Labelled queries around each engagement window: the engaged plan inside
/// the window and the null plan within `margin` of it, except during the
/// `guard` minutes just before the window opens.
pub fn training_records(
    steps: &[QueryStep],
    windows: &[(PlanId, Minutes, Minutes)],
    margin: Minutes,
    guard: Minutes,
) -> Vec<RankRecord> {
    steps
        .iter()
        .filter_map(|s| {
            let t = s.timestamp;
            let near = windows.iter().find(|(_, a, b)| t >= a - margin && t < b + margin)?;
            if t < near.1 && t >= near.1 - guard {
                return None;
            }
            let engaged = if t >= near.1 && t < near.2 { near.0.clone() } else { PlanId::null() };
            Some(RankRecord {
                query: s.query.clone(),
                engaged,
            })
        })
        .collect()
}

/// Replays each engagement day once and caches the query steps.
pub fn day_queries(
    network: &NetworkModel,
    calendar: &Calendar,
    feeds: &Feeds,
    days: &[Minutes],
    window: [Minutes; 2],
    forecaster: &mut dyn FnMut() -> Box<dyn Forecaster>,
) -> Result<BTreeMap<Minutes, Vec<QueryStep>>, ScenarioError> {
    let mut out = BTreeMap::new();
    for &day in days {
        if out.contains_key(&day) {
            continue;
        }
        let mut qb = QueryBuilder::new(network.clone(), calendar.clone(), feeds, forecaster());
        out.insert(day, qb.run(day + window[0], day + window[1])?);
    }
    Ok(out)
}

/// Earliest alert on any incident segment of `plan` in `[from, to]`.
pub fn first_alert_for(keys: &PlanKeyMatrix, network: &NetworkModel, feeds: &Feeds, plan: &PlanId, from: Minutes, to: Minutes) -> Option<Minutes> {
    let p = keys.index_of(plan)?;
    let segs: Vec<_> = keys
        .segments_with(p, crate::associator::plans::KEY_INCIDENT)
        .into_iter()
        .map(|i| network.segments()[i].clone())
        .collect();
    feeds.first_alert(&segs, from, to)
}

/// Fits the ranker on every engagement window of `log`.
pub fn train_associator(
    network: &NetworkModel,
    calendar: &Calendar,
    keys: &PlanKeyMatrix,
    feeds: &Feeds,
    log: &[EngagementRecord],
    forecaster: &mut dyn FnMut() -> Box<dyn Forecaster>,
    cfg: &LooConfig,
) -> Result<RankModel, ScenarioError> {
    let windows = engagement_windows(log);
    if windows.is_empty() {
        return Err(ScenarioError::NoEngagements);
    }
    let days: Vec<Minutes> = windows.iter().map(|w| day_start(w.1)).collect();
    let queries = day_queries(network, calendar, feeds, &days, cfg.day_window, forecaster)?;
    let mut records = Vec::new();
    for (w, day) in windows.iter().zip(&days) {
        records.extend(training_records(&queries[day], std::slice::from_ref(w), cfg.margin, cfg.guard));
    }
    let data = build_pairwise_dataset(&records, keys, &cfg.thresholds)?;
    Ok(RankModel::train(&data, &cfg.rank)?)
}

/// Trains on every engagement window but one and tests on the held-out
/// window's day, for each window in turn.
pub fn leave_one_out(
    network: &NetworkModel,
    calendar: &Calendar,
    keys: &PlanKeyMatrix,
    feeds: &Feeds,
    log: &[EngagementRecord],
    forecaster: &mut dyn FnMut() -> Box<dyn Forecaster>,
    cfg: &LooConfig,
) -> Result<LooReport, ScenarioError> {
    let windows = engagement_windows(log);
    if windows.is_empty() {
        return Err(ScenarioError::NoEngagements);
    }
    let days: Vec<Minutes> = windows.iter().map(|w| day_start(w.1)).collect();
    let queries = day_queries(network, calendar, feeds, &days, cfg.day_window, forecaster)?;
    let mut folds = Vec::new();
    let mut nonzero = Vec::new();
    for (k, held) in windows.iter().enumerate() {
        let mut records = Vec::new();
        for (j, w) in windows.iter().enumerate() {
            if j != k && w.0 != held.0 {
                records.extend(training_records(&queries[&days[j]], std::slice::from_ref(w), cfg.margin, cfg.guard));
            }
        }
        let data = build_pairwise_dataset(&records, keys, &cfg.thresholds)?;
        let model = RankModel::train(&data, &cfg.rank)?;
        nonzero.push(model.nonzero());
        let mut rec = Recommender::new(keys.clone(), model, network, cfg.dwell);
        let events = rec.run(&queries[&days[k]])?;
        let day_log: Vec<EngagementRecord> = log
            .iter()
            .filter(|r| day_start(r.timestamp) == days[k])
            .cloned()
            .collect();
        let mut alerts = BTreeMap::new();
        if let Some(a) = first_alert_for(keys, network, feeds, &held.0, held.1 - super::report::ALERT_SEARCH, held.2) {
            alerts.insert(held.0.clone(), a);
        }
        let eval = evaluate_recommendations(&timeline(&events), &day_log, &alerts)?;
        folds.extend(eval.folds.into_iter().filter(|f| f.plan == held.0 && f.window_start == held.1));
    }
    let n = folds.len() as f64;
    Ok(LooReport {
        macro_precision: folds.iter().map(|f| f.precision.unwrap_or(0.0)).sum::<f64>() / n,
        macro_recall: folds.iter().map(|f| f.recall).sum::<f64>() / n,
        folds,
        nonzero_weights: nonzero,
    })
}
