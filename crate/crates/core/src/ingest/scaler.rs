use serde::{Deserialize, Serialize};

/// Per-feature min-max scaling fitted on training data only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on rows of equal width. Returns `None` when there are no rows.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut iter = rows.into_iter();
        let first = iter.next()?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            assert_eq!(row.len(), min.len(), "scaler rows must share a width");
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Some(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// `(v - min) / (max - min)` clamped to `[0, 1]`; a degenerate range maps
    /// to 0.
    pub fn scale(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range <= 0.0 {
            return 0.0;
        }
        ((v - self.min[j]) / range).clamp(0.0, 1.0)
    }

    pub fn unscale(&self, j: usize, s: f64) -> f64 {
        self.min[j] + s * (self.max[j] - self.min[j])
    }

    pub fn scale_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.scale(j, v)).collect()
    }

    /// Restricts the scaler to the listed feature columns.
    pub fn select(&self, columns: &[usize]) -> Self {
        Self {
            min: columns.iter().map(|&j| self.min[j]).collect(),
            max: columns.iter().map(|&j| self.max[j]).collect(),
        }
    }
}

/// Scales a single value with explicit bounds.
pub fn apply_scaler(min: f64, max: f64, v: f64) -> f64 {
    MinMaxScaler {
        min: vec![min],
        max: vec![max],
    }
    .scale(0, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(apply_scaler(0.0, 100.0, 25.0), 0.25);
        assert_eq!(apply_scaler(60.0, 60.0, 60.0), 0.0);
        assert_eq!(apply_scaler(0.0, 100.0, 120.0), 1.0);
        assert_eq!(apply_scaler(0.0, 100.0, -5.0), 0.0);
    }

    proptest! {
        #[test]
        fn fit_then_apply_is_in_unit_range_and_invertible(rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..150.0, 3), 1..40)) {
            let s = MinMaxScaler::fit(rows.iter().map(|r| r.as_slice())).unwrap();
            for r in &rows {
                for (j, &v) in r.iter().enumerate() {
                    let x = s.scale(j, v);
                    prop_assert!((0.0..=1.0).contains(&x));
                    if s.max[j] > s.min[j] {
                        prop_assert!((s.unscale(j, x) - v).abs() <= 1e-12 * (1.0 + v.abs()));
                    }
                }
            }
        }
    }
}
