//! Summary of a replay run, written next to its event stream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::associator::{engagement_windows, evaluate_recommendations, PlanKeyMatrix, RecommendationEvaluation};
use crate::domain::{EngagementRecord, Minutes, NetworkModel, PlanId};
use crate::ingest::Feeds;

use super::loo::first_alert_for;
use super::replay::{timeline, RecommendationEvent};
use super::ScenarioError;

/// How far before an engagement the first alert for its plan is searched.
pub const ALERT_SEARCH: Minutes = 180;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanChange {
    pub timestamp: Minutes,
    pub plan_id: PlanId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub start: Minutes,
    pub end: Minutes,
    pub steps: usize,
    pub changes: Vec<PlanChange>,
    /// Scored against engagements logged inside the replayed range; absent
    /// when there are none.
    pub evaluation: Option<RecommendationEvaluation>,
}

pub fn replay_report(
    events: &[RecommendationEvent],
    log: &[EngagementRecord],
    keys: &PlanKeyMatrix,
    network: &NetworkModel,
    feeds: &Feeds,
) -> Result<ReplayReport, ScenarioError> {
    let (start, end) = match (events.first(), events.last()) {
        (Some(a), Some(b)) => (a.timestamp, b.timestamp),
        _ => return Err(ScenarioError::EmptyReplay),
    };
    let changes = events
        .iter()
        .filter(|e| e.changed)
        .map(|e| PlanChange {
            timestamp: e.timestamp,
            plan_id: e.active_plan.clone(),
        })
        .collect();
    let inside: Vec<EngagementRecord> = log
        .iter()
        .filter(|r| r.timestamp >= start && r.timestamp <= end)
        .cloned()
        .collect();
    let windows = engagement_windows(&inside);
    let evaluation = if windows.is_empty() {
        None
    } else {
        let mut alerts = BTreeMap::new();
        for (plan, a, b) in &windows {
            if let Some(t) = first_alert_for(keys, network, feeds, plan, a - ALERT_SEARCH, *b) {
                alerts.entry(plan.clone()).or_insert(t);
            }
        }
        Some(evaluate_recommendations(&timeline(events), &inside, &alerts)?)
    };
    Ok(ReplayReport {
        start,
        end,
        steps: events.len(),
        changes,
        evaluation,
    })
}
