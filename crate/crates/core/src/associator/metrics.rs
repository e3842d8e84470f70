//! Traffic queries and query-key closeness metrics.
//!
//! Layout of the 105-entry vector: index `h * 15 + t * 3 + m` for horizon
//! row `h` (0 = current), threshold `t` and metric `m` in the order
//! precision, rule, similarity.

use crate::domain::{Minutes, NetworkModel};
use crate::ingest::tti;
use crate::predictor::HORIZON;

use super::plans::{KEY_ARTERIAL, KEY_INCIDENT};
use super::AssociatorError;

/// TTI thresholds, one block of metrics each.
pub type Thresholds = [f64; 5];
pub const THRESHOLDS: Thresholds = [1.6, 2.0, 2.5, 5.0, 10.0];
pub const QUERY_ROWS: usize = HORIZON + 1;
pub const METRICS_PER_THRESHOLD: usize = 3;
pub const METRIC_WIDTH: usize = QUERY_ROWS * THRESHOLDS.len() * METRICS_PER_THRESHOLD;

const METRIC_NAMES: [&str; METRICS_PER_THRESHOLD] = ["precision", "rule", "similarity"];

/// Column names, e.g. `5min-2-similarity`.
pub fn feature_names(thresholds: &Thresholds) -> Vec<String> {
    let mut out = Vec::with_capacity(METRIC_WIDTH);
    for h in 0..QUERY_ROWS {
        for t in thresholds {
            for m in METRIC_NAMES {
                out.push(format!("{}min-{}-{}", h * 5, t, m));
            }
        }
    }
    out
}

/// Current TTI row followed by six forecast rows, over all segments.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficQuery {
    pub base_time: Minutes,
    rows: Vec<Vec<f64>>,
}

impl TrafficQuery {
    pub fn new(base_time: Minutes, rows: Vec<Vec<f64>>) -> Result<Self, AssociatorError> {
        if rows.len() != QUERY_ROWS {
            return Err(AssociatorError::Rows(rows.len()));
        }
        let width = rows[0].len();
        for r in &rows {
            if r.len() != width {
                return Err(AssociatorError::Width {
                    got: r.len(),
                    expected: width,
                });
            }
            if let Some(&v) = r.iter().find(|v| !(**v >= 1.0)) {
                return Err(AssociatorError::BadTti(v));
            }
        }
        Ok(Self { base_time, rows })
    }

    /// Builds the query from observed TTI and a speed forecast over the
    /// network's target segments (`forecast[h][target]`, mph). Segments that
    /// are not targets keep their current TTI on every forecast row.
    pub fn from_forecast(
        network: &NetworkModel,
        base_time: Minutes,
        current_tti: &[f64],
        forecast: &[Vec<f64>],
    ) -> Result<Self, AssociatorError> {
        if current_tti.len() != network.len() {
            return Err(AssociatorError::Width {
                got: current_tti.len(),
                expected: network.len(),
            });
        }
        if forecast.len() != HORIZON {
            return Err(AssociatorError::Rows(forecast.len() + 1));
        }
        let targets = network.targets();
        let mut rows = vec![current_tti.to_vec()];
        for step in forecast {
            if step.len() != targets.len() {
                return Err(AssociatorError::Width {
                    got: step.len(),
                    expected: targets.len(),
                });
            }
            let mut row = current_tti.to_vec();
            for (&i, &v) in targets.iter().zip(step) {
                row[i] = tti(v, network.reference_speed(i)).map_err(|_| AssociatorError::BadTti(v))?;
            }
            rows.push(row);
        }
        Self::new(base_time, rows)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricVector {
    pub values: Vec<f64>,
}

impl MetricVector {
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.values.iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

fn check(row: &[f64], key: &[u8], threshold: f64) -> Result<(), AssociatorError> {
    if !(threshold.is_finite() && threshold >= 1.0) {
        return Err(AssociatorError::UnknownThreshold(threshold));
    }
    if row.len() != key.len() {
        return Err(AssociatorError::Width {
            got: row.len(),
            expected: key.len(),
        });
    }
    Ok(())
}

fn is_null(key: &[u8]) -> bool {
    key.iter().all(|&k| k == 0)
}

/// Triggering precision. For a plan: 1 if any incident segment reaches the
/// threshold. For the null plan: share of segments below the threshold.
pub fn metric_precision(row: &[f64], key: &[u8], threshold: f64) -> Result<f64, AssociatorError> {
    check(row, key, threshold)?;
    if is_null(key) {
        if row.is_empty() {
            return Ok(1.0);
        }
        let neg = row.iter().filter(|&&v| v < threshold).count();
        return Ok(neg as f64 / row.len() as f64);
    }
    let hit = row
        .iter()
        .zip(key)
        .any(|(&v, &k)| k == KEY_INCIDENT && v >= threshold);
    Ok(f64::from(u8::from(hit)))
}

/// Rule metric: both an incident and an arterial segment at or above the
/// threshold. For the null plan: no segment at or above it.
pub fn metric_rule(row: &[f64], key: &[u8], threshold: f64) -> Result<f64, AssociatorError> {
    check(row, key, threshold)?;
    let positive = |value: u8| {
        row.iter()
            .zip(key)
            .any(|(&v, &k)| k == value && v >= threshold)
    };
    let out = if is_null(key) {
        !row.iter().any(|&v| v >= threshold)
    } else {
        positive(KEY_INCIDENT) && positive(KEY_ARTERIAL)
    };
    Ok(f64::from(u8::from(out)))
}

/// `1 / (1 + d)` where `d` is the distance between the binarized key and the
/// clipped, per-row min-max normalized query.
pub fn metric_similarity(row: &[f64], key: &[u8], threshold: f64) -> Result<f64, AssociatorError> {
    check(row, key, threshold)?;
    let clipped: Vec<f64> = row.iter().map(|&v| v.min(threshold)).collect();
    let lo = clipped.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = clipped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let d2: f64 = clipped
        .iter()
        .zip(key)
        .map(|(&v, &k)| {
            let q = if range > 0.0 { (v - lo) / range } else { 0.0 };
            let b = f64::from(u8::from(k > 0));
            (q - b) * (q - b)
        })
        .sum();
    Ok(1.0 / (1.0 + d2.sqrt()))
}

/// Full 105-entry metric vector of one query against one plan key.
pub fn evaluate_metrics(query: &TrafficQuery, key: &[u8], thresholds: &Thresholds) -> Result<MetricVector, AssociatorError> {
    let mut values = Vec::with_capacity(METRIC_WIDTH);
    for row in query.rows() {
        for &t in thresholds {
            values.push(metric_precision(row, key, t)?);
            values.push(metric_rule(row, key, t)?);
            values.push(metric_similarity(row, key, t)?);
        }
    }
    Ok(MetricVector { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn precision_examples() {
        let key = [1, 1, 2, 0];
        assert_eq!(metric_precision(&[3.0, 1.0, 1.0, 1.0], &key, 2.0).unwrap(), 1.0);
        assert_eq!(metric_precision(&[1.9, 1.5, 9.0, 9.0], &key, 2.0).unwrap(), 0.0);
        let row = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3.0, 3.0];
        assert!((metric_precision(&row, &[0; 10], 2.0).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            metric_precision(&[1.0], &[1], 0.5),
            Err(AssociatorError::UnknownThreshold(_))
        ));
    }

    #[test]
    fn rule_examples() {
        let key = [1, 2];
        assert_eq!(metric_rule(&[3.0, 2.5], &key, 2.0).unwrap(), 1.0);
        assert_eq!(metric_rule(&[3.0, 1.0], &key, 2.0).unwrap(), 0.0);
        assert_eq!(metric_rule(&[1.0, 1.0], &[0, 0], 2.0).unwrap(), 1.0);
        assert_eq!(metric_rule(&[1.0, 2.0], &[0, 0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(metric_similarity(&[1.0, 3.0], &[0, 1], 2.0).unwrap(), 1.0);
        // Normalized query [0, 1, 1] against key [0, 1, 0].
        assert_eq!(metric_similarity(&[1.0, 2.0, 2.0], &[0, 1, 0], 2.0).unwrap(), 0.5);
        assert_eq!(metric_similarity(&[1.0; 5], &[0; 5], 1.6).unwrap(), 1.0);
    }

    #[test]
    fn names_follow_layout() {
        let names = feature_names(&THRESHOLDS);
        assert_eq!(names.len(), 105);
        assert_eq!(names[0], "0min-1.6-precision");
        assert_eq!(names[15 + 3 + 2], "5min-2-similarity");
        assert_eq!(names[104], "30min-10-similarity");
        assert_eq!(feature_names(&[1.5, 2.0, 3.0, 4.0, 8.5])[0], "0min-1.5-precision");
    }

    #[test]
    fn uncongested_query_against_plan() {
        let q = TrafficQuery::new(0, vec![vec![1.0; 4]; 7]).unwrap();
        let x = evaluate_metrics(&q, &[1, 0, 2, 0], &THRESHOLDS).unwrap();
        assert_eq!(x.values.len(), METRIC_WIDTH);
        for (j, v) in x.values.iter().enumerate() {
            if j % 3 != 2 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn query_from_forecast() {
        use crate::predictor::dataset::tests::chain_network;
        let net = chain_network(3, &[2]);
        let v_ref = net.reference_speed(2);
        let forecast: Vec<Vec<f64>> = (1..=6).map(|h| vec![v_ref / (1.0 + h as f64)]).collect();
        let q = TrafficQuery::from_forecast(&net, 10, &[1.5, 1.0, 1.2], &forecast).unwrap();
        assert_eq!(q.rows()[0], vec![1.5, 1.0, 1.2]);
        assert_eq!(q.rows()[3][0], 1.5);
        assert!((q.rows()[3][2] - 4.0).abs() < 1e-12);
        assert!(TrafficQuery::new(0, vec![vec![0.5]; 7]).is_err());
        assert!(TrafficQuery::new(0, vec![vec![1.0]; 6]).is_err());
    }

    fn arb_query(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(1.0f64..12.0, n), 7)
    }

    fn arb_key(n: usize) -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..3, n)
    }

    proptest! {
        #[test]
        fn metrics_bounded(rows in arb_query(6), key in arb_key(6)) {
            let q = TrafficQuery::new(0, rows).unwrap();
            let x = evaluate_metrics(&q, &key, &THRESHOLDS).unwrap();
            prop_assert_eq!(x.values.len(), 105);
            for (j, &v) in x.values.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&v));
                if j % 3 == 2 {
                    prop_assert!(v > 0.0);
                }
            }
        }

        #[test]
        fn duplicate_rows_give_identical_blocks(row in prop::collection::vec(1.0f64..12.0, 5), key in arb_key(5)) {
            let q = TrafficQuery::new(0, vec![row; 7]).unwrap();
            let x = evaluate_metrics(&q, &key, &THRESHOLDS).unwrap();
            for h in 1..7 {
                prop_assert_eq!(&x.values[..15], &x.values[h * 15..(h + 1) * 15]);
            }
        }

        #[test]
        fn precision_monotone_in_incident_tti(
            row in prop::collection::vec(1.0f64..12.0, 5),
            key in arb_key(5),
            bump in 0.0f64..5.0,
            t in 0usize..5,
        ) {
            let before = metric_precision(&row, &key, THRESHOLDS[t]).unwrap();
            let mut raised = row.clone();
            for (v, &k) in raised.iter_mut().zip(&key) {
                if k == 1 {
                    *v += bump;
                }
            }
            prop_assert!(metric_precision(&raised, &key, THRESHOLDS[t]).unwrap() >= before);
        }
    }
}
