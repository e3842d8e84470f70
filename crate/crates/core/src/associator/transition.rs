//! Dwell-limited plan transitions.

use serde::{Deserialize, Serialize};

use crate::domain::{Minutes, PlanId};

use super::plans::PlanKeyMatrix;

pub const DEFAULT_DWELL: Minutes = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanState {
    pub active_plan: PlanId,
    /// Time of the last change; `None` before the first one.
    pub last_change: Option<Minutes>,
    pub dwell_minutes: Minutes,
}

impl PlanState {
    pub fn new(dwell_minutes: Minutes) -> Self {
        Self {
            active_plan: PlanId::null(),
            last_change: None,
            dwell_minutes,
        }
    }

    pub fn can_change(&self, now: Minutes) -> bool {
        self.last_change.is_none_or(|t| now - t >= self.dwell_minutes)
    }
}

impl Default for PlanState {
    fn default() -> Self {
        Self::new(DEFAULT_DWELL)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub timestamp: Minutes,
    pub from: PlanId,
    pub to: PlanId,
}

/// Outcome of one clock step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: PlanState,
    pub candidate: PlanId,
    pub dwell_blocked: bool,
    pub event: Option<TransitionEvent>,
}

/// Highest score; ties go to the incumbent, then to plan order.
pub fn candidate(scores: &[f64], keys: &PlanKeyMatrix, active: &PlanId) -> usize {
    let incumbent = keys.index_of(active);
    let mut best = incumbent.unwrap_or(0);
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || (s == scores[best] && Some(best) != incumbent && i < best) {
            best = i;
        }
    }
    best
}

pub fn step_transition(state: &PlanState, scores: &[f64], keys: &PlanKeyMatrix, now: Minutes) -> Step {
    assert_eq!(scores.len(), keys.len(), "scores must cover every plan");
    let cand = keys.plans()[candidate(scores, keys, &state.active_plan)].clone();
    if cand == state.active_plan {
        return Step {
            state: state.clone(),
            candidate: cand,
            dwell_blocked: false,
            event: None,
        };
    }
    if !state.can_change(now) {
        return Step {
            state: state.clone(),
            candidate: cand,
            dwell_blocked: true,
            event: None,
        };
    }
    let event = TransitionEvent {
        timestamp: now,
        from: state.active_plan.clone(),
        to: cand.clone(),
    };
    Step {
        state: PlanState {
            active_plan: cand.clone(),
            last_change: Some(now),
            dwell_minutes: state.dwell_minutes,
        },
        candidate: cand,
        dwell_blocked: false,
        event: Some(event),
    }
}
