//! Precision, recall and lead time of a recommendation timeline against
//! the engagement log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{EngagementAction, EngagementRecord, Minutes, PlanId};

use super::AssociatorError;

/// How far before an engagement window a matching recommendation still
/// counts towards lead time.
pub const LEAD_SEARCH: Minutes = 60;

/// Active plan at each clock step, time-ordered.
pub type Timeline = Vec<(Minutes, PlanId)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub plan: PlanId,
    pub window_start: Minutes,
    pub window_end: Minutes,
    /// Matching steps over steps with any incident plan active; `None` if
    /// no incident plan was recommended inside the window.
    pub precision: Option<f64>,
    /// Matching steps over all steps of the window.
    pub recall: f64,
    pub first_recommendation: Option<Minutes>,
    pub first_alert: Option<Minutes>,
    /// Positive when the recommendation came before the alert.
    pub lead_time: Option<Minutes>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationEvaluation {
    pub folds: Vec<FoldReport>,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

/// Engagement windows `(plan, start, end)` of non-null plans. A window ends
/// at the next record of any kind.
pub fn engagement_windows(log: &[EngagementRecord]) -> Vec<(PlanId, Minutes, Minutes)> {
    let mut out = Vec::new();
    for (k, r) in log.iter().enumerate() {
        if r.action == EngagementAction::Stop || r.plan_id.is_null() {
            continue;
        }
        if let Some(next) = log[k + 1..].iter().find(|n| n.timestamp > r.timestamp) {
            out.push((r.plan_id.clone(), r.timestamp, next.timestamp));
        }
    }
    out
}

pub fn evaluate_recommendations(
    timeline: &[(Minutes, PlanId)],
    log: &[EngagementRecord],
    first_alerts: &BTreeMap<PlanId, Minutes>,
) -> Result<RecommendationEvaluation, AssociatorError> {
    if log.is_empty() {
        return Err(AssociatorError::EmptyLog);
    }
    EngagementRecord::check_order(log)?;
    let mut folds = Vec::new();
    for (plan, start, end) in engagement_windows(log) {
        let inside: Vec<&(Minutes, PlanId)> = timeline
            .iter()
            .filter(|(t, _)| *t >= start && *t < end)
            .collect();
        if inside.is_empty() {
            return Err(AssociatorError::MissingStep(start));
        }
        let hits = inside.iter().filter(|(_, p)| *p == plan).count();
        let active = inside.iter().filter(|(_, p)| !p.is_null()).count();
        let first_recommendation = timeline
            .iter()
            .find(|(t, p)| *t >= start - LEAD_SEARCH && *t < end && *p == plan)
            .map(|(t, _)| *t);
        let first_alert = first_alerts.get(&plan).copied();
        let lead_time = match (first_recommendation, first_alert) {
            (Some(r), Some(a)) => Some(a - r),
            _ => None,
        };
        folds.push(FoldReport {
            plan,
            window_start: start,
            window_end: end,
            precision: (active > 0).then(|| hits as f64 / active as f64),
            recall: hits as f64 / inside.len() as f64,
            first_recommendation,
            first_alert,
            lead_time,
        });
    }
    if folds.is_empty() {
        return Err(AssociatorError::EmptyLog);
    }
    let n = folds.len() as f64;
    Ok(RecommendationEvaluation {
        macro_precision: folds.iter().map(|f| f.precision.unwrap_or(0.0)).sum::<f64>() / n,
        macro_recall: folds.iter().map(|f| f.recall).sum::<f64>() / n,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Actor;

    fn rec(t: Minutes, plan: &str, action: EngagementAction) -> EngagementRecord {
        EngagementRecord {
            timestamp: t,
            plan_id: plan.into(),
            action,
            actor: Actor::Operator,
        }
    }

    fn log() -> Vec<EngagementRecord> {
        vec![
            rec(100, "A", EngagementAction::Activate),
            rec(150, "A", EngagementAction::Stop),
        ]
    }

    fn timeline(f: impl Fn(Minutes) -> &'static str) -> Timeline {
        (0..40).map(|k| (k * 5, PlanId::new(f(k * 5)))).collect()
    }

    #[test]
    fn identity_is_perfect() {
        let tl = timeline(|t| if (100..150).contains(&t) { "A" } else { "NULL" });
        let alerts = BTreeMap::from([(PlanId::new("A"), 95)]);
        let e = evaluate_recommendations(&tl, &log(), &alerts).unwrap();
        assert_eq!(e.macro_precision, 1.0);
        assert_eq!(e.macro_recall, 1.0);
        assert_eq!(e.folds[0].lead_time, Some(-5));
    }

    #[test]
    fn early_stop_lowers_recall_only() {
        let tl = timeline(|t| if (100..130).contains(&t) { "A" } else { "NULL" });
        let e = evaluate_recommendations(&tl, &log(), &BTreeMap::new()).unwrap();
        assert_eq!(e.folds[0].precision, Some(1.0));
        assert!((e.folds[0].recall - 0.6).abs() < 1e-12);
    }

    #[test]
    fn lead_time_definition() {
        let tl = timeline(|t| if (70..150).contains(&t) { "A" } else { "NULL" });
        let alerts = BTreeMap::from([(PlanId::new("A"), 100)]);
        let e = evaluate_recommendations(&tl, &log(), &alerts).unwrap();
        assert_eq!(e.folds[0].lead_time, Some(30));
    }

    #[test]
    fn wrong_plan_hurts_precision() {
        let tl = timeline(|t| if (100..125).contains(&t) { "A" } else if t >= 125 { "B" } else { "NULL" });
        let e = evaluate_recommendations(&tl, &log(), &BTreeMap::new()).unwrap();
        assert_eq!(e.folds[0].precision, Some(0.5));
    }

    #[test]
    fn empty_log_rejected() {
        assert!(matches!(
            evaluate_recommendations(&[], &[], &BTreeMap::new()),
            Err(AssociatorError::EmptyLog)
        ));
    }
}
