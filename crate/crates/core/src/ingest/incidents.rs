//! Multi-source incident fusion.
//!
//! Crowd-sourced alerts arrive as points already snapped to a segment and
//! contribute status 1; official closures cover a set of segments for an
//! interval and contribute status 2. A per-segment max-gate merges them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{
    IncidentStatus, IncidentStatusFrame, Minutes, NetworkModel, SegmentId, SPEED_STEP,
};

use super::IngestError;

/// One alert observation, valid for the 5-minute bin containing `timestamp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub timestamp: Minutes,
    pub segment_id: SegmentId,
}

/// A closure active on `segment_ids` for `open_timestamp <= t < close_timestamp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureEvent {
    pub open_timestamp: Minutes,
    pub close_timestamp: Minutes,
    pub segment_ids: Vec<SegmentId>,
}

impl ClosureEvent {
    pub fn active_at(&self, t: Minutes) -> bool {
        self.open_timestamp <= t && t < self.close_timestamp
    }
}

/// Adds the middle segment between every pair of alerted segments whose
/// undirected hop distance is exactly two.
pub fn interpolate_alert_gap(alerted: &BTreeSet<usize>, model: &NetworkModel) -> BTreeSet<usize> {
    let mut out = alerted.clone();
    for &a in alerted {
        let near = model.undirected_neighbors(a);
        for &mid in near {
            for &b in model.undirected_neighbors(mid) {
                if b != a && alerted.contains(&b) && !near.contains(&b) {
                    out.insert(mid);
                }
            }
        }
    }
    out
}

/// Fused incident status of every segment at bin `t`.
pub fn fuse_incidents(
    alerts: &[AlertEvent],
    closures: &[ClosureEvent],
    t: Minutes,
    model: &NetworkModel,
) -> Result<IncidentStatusFrame, IngestError> {
    fuse_onto(&IncidentStatusFrame::normal(t, model.len()), alerts, closures, model)
}

/// Max-gates the sources active at `base.timestamp` onto an existing frame.
/// With no active sources the frame is returned unchanged.
pub fn fuse_onto(
    base: &IncidentStatusFrame,
    alerts: &[AlertEvent],
    closures: &[ClosureEvent],
    model: &NetworkModel,
) -> Result<IncidentStatusFrame, IngestError> {
    let t = base.timestamp;
    let mut alerted = BTreeSet::new();
    for a in alerts {
        let idx = model.require(&a.segment_id)?;
        if a.timestamp >= t && a.timestamp < t + SPEED_STEP {
            alerted.insert(idx);
        }
    }
    let alerted = interpolate_alert_gap(&alerted, model);

    let mut status = base.status.clone();
    for i in alerted {
        status[i] = status[i].max(IncidentStatus::Alert);
    }
    for c in closures {
        let active = c.active_at(t);
        for id in &c.segment_ids {
            let idx = model.require(id)?;
            if active {
                status[idx] = status[idx].max(IncidentStatus::Closure);
            }
        }
    }
    Ok(IncidentStatusFrame { timestamp: t, status })
}
