//! Speed-derived features: imputation, reference speed, travel time index and
//! back-of-queue slowdown.

use crate::domain::{NetworkModel, SpeedFrame};

use super::IngestError;

/// Quantile used for the free-flow reference speed.
pub const REFERENCE_QUANTILE: f64 = 0.85;

/// Forward-fills missing 5-minute observations of one segment. Leading gaps
/// take the first observation.
pub fn impute_speed(series: &[Option<f64>]) -> Result<Vec<f64>, IngestError> {
    let first = series
        .iter()
        .flatten()
        .next()
        .copied()
        .ok_or(IngestError::NoObservations)?;
    let mut last = first;
    Ok(series
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect())
}

/// Quantile by linear interpolation between order statistics at rank
/// `q * (n - 1)`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64, IngestError> {
    if values.is_empty() {
        return Err(IngestError::NoObservations);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Empirical free-flow speed of a segment: the 85th percentile of its
/// observed speeds.
pub fn reference_speed(observations: &[f64]) -> Result<f64, IngestError> {
    quantile(observations, REFERENCE_QUANTILE)
}

/// Travel time index `max(v_ref / v, 1)`.
pub fn tti(speed: f64, v_ref: f64) -> Result<f64, IngestError> {
    if !(speed > 0.0 && v_ref > 0.0) {
        return Err(IngestError::NonPositiveSpeed { speed, v_ref });
    }
    Ok((v_ref / speed).max(1.0))
}

/// Mean upstream speed minus own speed, floored at zero. Segments without
/// upstream neighbours report zero.
pub fn slowdown(frame: &SpeedFrame, model: &NetworkModel, segment: usize) -> f64 {
    slowdown_at(&frame.speeds, model, segment)
}

pub(crate) fn slowdown_at(speeds: &[f64], model: &NetworkModel, segment: usize) -> f64 {
    let ups = model.upstream(segment);
    if ups.is_empty() {
        return 0.0;
    }
    let mean = ups.iter().map(|&j| speeds[j]).sum::<f64>() / ups.len() as f64;
    (mean - speeds[segment]).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Edge, NetworkDefinition, Role, SegmentDefinition};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Independent quantile: walk sorted values until the fractional rank.
    fn brute_quantile(values: &[f64], q: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = q * (v.len() as f64 - 1.0);
        let mut k = 0;
        while (k + 1) as f64 <= pos {
            k += 1;
        }
        if k + 1 >= v.len() {
            return v[k];
        }
        v[k] * (1.0 - (pos - k as f64)) + v[k + 1] * (pos - k as f64)
    }

    fn star(up: &[f64], own: f64) -> (NetworkModel, SpeedFrame) {
        let mut segments = vec![SegmentDefinition {
            id: "X".into(),
            role: Role::Arterial,
            reference_speed: 60.0,
            display: None,
        }];
        let mut edges = Vec::new();
        for i in 0..up.len() {
            let id = format!("U{i}");
            segments.push(SegmentDefinition {
                id: id.as_str().into(),
                role: Role::Arterial,
                reference_speed: 60.0,
                display: None,
            });
            edges.push(Edge {
                from: id.as_str().into(),
                to: "X".into(),
            });
        }
        let model = NetworkModel::from_definition(NetworkDefinition {
            format_version: 1,
            segments,
            upstream_edges: edges,
            targets: vec!["X".into()],
        })
        .unwrap();
        let mut speeds = vec![own];
        speeds.extend_from_slice(up);
        let frame = SpeedFrame::new(0, speeds, &model).unwrap();
        (model, frame)
    }

    #[test]
    fn forward_fill_and_leading_gap() {
        assert_eq!(
            impute_speed(&[Some(60.0), None, None, Some(55.0)]).unwrap(),
            vec![60.0, 60.0, 60.0, 55.0]
        );
        assert_eq!(impute_speed(&[None, Some(40.0)]).unwrap(), vec![40.0, 40.0]);
        assert!(matches!(impute_speed(&[None, None]), Err(IngestError::NoObservations)));
        assert!(impute_speed(&[]).is_err());
    }

    #[test]
    fn reference_speed_examples() {
        let one_to_hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        let oracle = brute_quantile(&one_to_hundred, 0.85);
        assert_abs_diff_eq!(oracle, 85.15, epsilon = 1e-12);
        assert_abs_diff_eq!(reference_speed(&one_to_hundred).unwrap(), 85.15, epsilon = 1e-12);
        assert_eq!(reference_speed(&[60.0; 7]).unwrap(), 60.0);
        assert_abs_diff_eq!(brute_quantile(&[50.0, 70.0], 0.85), 67.0, epsilon = 1e-12);
        assert_abs_diff_eq!(reference_speed(&[70.0, 50.0]).unwrap(), 67.0, epsilon = 1e-12);
        assert!(reference_speed(&[]).is_err());
    }

    #[test]
    fn tti_examples() {
        assert_eq!(tti(30.0, 60.0).unwrap(), 2.0);
        assert_eq!(tti(70.0, 60.0).unwrap(), 1.0);
        assert_eq!(tti(60.0, 60.0).unwrap(), 1.0);
        assert!(tti(0.0, 60.0).is_err());
        assert!(tti(30.0, -1.0).is_err());
    }

    #[test]
    fn slowdown_examples() {
        let (m, f) = star(&[50.0, 40.0], 20.0);
        assert_eq!(slowdown(&f, &m, 0), 25.0);
        let (m, f) = star(&[30.0], 60.0);
        assert_eq!(slowdown(&f, &m, 0), 0.0);
        let (m, f) = star(&[], 55.0);
        assert_eq!(slowdown(&f, &m, 0), 0.0);
    }

    proptest! {
        #[test]
        fn tti_floor_and_monotone(a in 0.5f64..120.0, b in 0.5f64..120.0, vref in 10.0f64..90.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let t_lo = tti(lo, vref).unwrap();
            let t_hi = tti(hi, vref).unwrap();
            prop_assert!(t_hi >= 1.0 && t_lo >= 1.0);
            prop_assert!(t_hi <= t_lo);
        }

        #[test]
        fn quantile_matches_brute_force(values in proptest::collection::vec(0.0f64..100.0, 1..60)) {
            let q = quantile(&values, 0.85).unwrap();
            prop_assert!((q - brute_quantile(&values, 0.85)).abs() < 1e-9);
        }

        #[test]
        fn slowdown_permutation_invariant(ups in proptest::collection::vec(1.0f64..80.0, 1..6), own in 1.0f64..80.0, rot in 0usize..6) {
            let (m, f) = star(&ups, own);
            let mut rotated = ups.clone();
            rotated.rotate_left(rot % ups.len());
            let (m2, f2) = star(&rotated, own);
            let a = slowdown(&f, &m, 0);
            let b = slowdown(&f2, &m2, 0);
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
