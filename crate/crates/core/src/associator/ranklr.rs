//! Pairwise rank logistic regression with an L1 penalty.
//!
//! Minimizes `sum_i log(1 + exp(-y_i w.x_i)) + C |w|_1` over difference
//! vectors with no intercept, by accelerated proximal gradient with
//! backtracking.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::PlanId;

use super::metrics::{evaluate_metrics, feature_names, Thresholds, TrafficQuery, METRIC_WIDTH, THRESHOLDS};
use super::plans::PlanKeyMatrix;
use super::AssociatorError;

pub const RANK_FORMAT_VERSION: u32 = 1;

/// A query together with the plan that was engaged for it.
#[derive(Clone, Debug)]
pub struct RankRecord {
    pub query: TrafficQuery,
    pub engaged: PlanId,
}

/// Difference vectors, row-major, with labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairwiseDataset {
    pub width: usize,
    /// Thresholds the metric vectors were evaluated at.
    pub thresholds: Thresholds,
    pub features: Vec<f64>,
    pub labels: Vec<bool>,
}

impl PairwiseDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn push(&mut self, x: &[f64], label: bool) {
        debug_assert_eq!(x.len(), self.width);
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }

    /// Share of samples whose score sign agrees with the label.
    pub fn ranking_accuracy(&self, w: &[f64]) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let ok = (0..self.len())
            .filter(|&i| {
                let z = dot(self.row(i), w);
                if self.labels[i] {
                    z > 0.0
                } else {
                    z < 0.0
                }
            })
            .count();
        ok as f64 / self.len() as f64
    }
}

/// Engaged-minus-other differences labelled 1, and their negations labelled 0.
pub fn build_pairwise_dataset(
    records: &[RankRecord],
    keys: &PlanKeyMatrix,
    thresholds: &Thresholds,
) -> Result<PairwiseDataset, AssociatorError> {
    let mut out = PairwiseDataset {
        width: METRIC_WIDTH,
        thresholds: *thresholds,
        ..PairwiseDataset::default()
    };
    let mut diff = vec![0.0; METRIC_WIDTH];
    for r in records {
        let engaged = keys.require(&r.engaged)?;
        let x: Vec<Vec<f64>> = (0..keys.len())
            .map(|p| evaluate_metrics(&r.query, keys.key(p), thresholds).map(|m| m.values))
            .collect::<Result<_, _>>()?;
        for (j, xj) in x.iter().enumerate() {
            if j == engaged {
                continue;
            }
            for ((d, a), b) in diff.iter_mut().zip(&x[engaged]).zip(xj) {
                *d = a - b;
            }
            out.push(&diff, true);
            for d in diff.iter_mut() {
                *d = -*d;
            }
            out.push(&diff, false);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankConfig {
    pub l1_penalty: f64,
    /// Largest optimality-condition violation accepted as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            l1_penalty: 1.0,
            tolerance: 1e-7,
            max_iterations: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankModel {
    pub weights: Vec<f64>,
    pub thresholds: Thresholds,
    pub l1_penalty: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Distance of `-grad` from the subdifferential of `c·|w|₁`.
fn kkt_violation(w: &[f64], grad: &[f64], c: f64) -> f64 {
    w.iter()
        .zip(grad)
        .map(|(&wj, &gj)| {
            if wj == 0.0 {
                (gj.abs() - c).max(0.0)
            } else {
                (gj + c * wj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// `log(1 + exp(-z))` without overflow.
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Logistic function with `sigmoid(z) + sigmoid(-z) == 1` exactly.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        1.0 - 1.0 / (1.0 + z.exp())
    }
}

struct Problem<'a> {
    data: &'a PairwiseDataset,
    signs: Vec<f64>,
}

impl Problem<'_> {
    fn loss(&self, w: &[f64]) -> f64 {
        (0..self.data.len())
            .map(|i| log1p_exp_neg(self.signs[i] * dot(self.data.row(i), w)))
            .sum()
    }

    fn loss_grad(&self, w: &[f64], g: &mut [f64]) -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut loss = 0.0;
        for i in 0..self.data.len() {
            let x = self.data.row(i);
            let m = self.signs[i] * dot(x, w);
            loss += log1p_exp_neg(m);
            let coef = -self.signs[i] * sigmoid(-m);
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += coef * xj;
            }
        }
        loss
    }

    /// Power-iteration estimate of the largest eigenvalue of `X^T X`.
    fn gram_norm(&self) -> f64 {
        let width = self.data.width;
        let mut v = vec![1.0 / (width as f64).sqrt(); width];
        let mut lambda = 0.0;
        for _ in 0..50 {
            let mut next = vec![0.0; width];
            for i in 0..self.data.len() {
                let x = self.data.row(i);
                let s = dot(x, &v);
                for (n, xj) in next.iter_mut().zip(x) {
                    *n += s * xj;
                }
            }
            let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = next.into_iter().map(|a| a / norm).collect();
        }
        lambda
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl RankModel {
    pub fn zeros(l1_penalty: f64) -> Self {
        Self {
            weights: vec![0.0; METRIC_WIDTH],
            thresholds: THRESHOLDS,
            l1_penalty,
            iterations: 0,
            converged: true,
        }
    }

    pub fn train(data: &PairwiseDataset, cfg: &RankConfig) -> Result<Self, AssociatorError> {
        if !data.labels.iter().any(|&l| l) || !data.labels.iter().any(|&l| !l) {
            return Err(AssociatorError::EmptyDataset);
        }
        let problem = Problem {
            data,
            signs: data.labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect(),
        };
        let width = data.width;
        let c = cfg.l1_penalty;
        let mut lipschitz = problem.gram_norm() / 4.0;
        if lipschitz == 0.0 {
            return Ok(Self {
                weights: vec![0.0; width],
                thresholds: data.thresholds,
                l1_penalty: c,
                iterations: 0,
                converged: true,
            });
        }
        let mut w = vec![0.0; width];
        let mut y = w.clone();
        let mut t = 1.0f64;
        let mut grad = vec![0.0; width];
        let mut next = vec![0.0; width];
        let objective = |w: &[f64], loss: f64| loss + c * w.iter().map(|v| v.abs()).sum::<f64>();
        let mut current = objective(&w, problem.loss(&w));
        let mut converged = false;
        let mut it = 0;
        while it < cfg.max_iterations {
            it += 1;
            let fy = problem.loss_grad(&y, &mut grad);
            loop {
                for j in 0..width {
                    next[j] = soft_threshold(y[j] - grad[j] / lipschitz, c / lipschitz);
                }
                let mut lin = 0.0;
                let mut quad = 0.0;
                for j in 0..width {
                    let d = next[j] - y[j];
                    lin += grad[j] * d;
                    quad += d * d;
                }
                if problem.loss(&next) <= fy + lin + 0.5 * lipschitz * quad + 1e-12 * fy.abs() {
                    break;
                }
                lipschitz *= 2.0;
            }
            let value = objective(&next, problem.loss_grad(&next, &mut grad));
            // A plain step (t == 1, y == w) is always accepted: near the
            // optimum rounding alone can make it look like an increase, and
            // retrying it would repeat the same step forever.
            let restart = value > current && t > 1.0;
            if restart {
                // Drop momentum and retake a plain proximal step from w.
                y.copy_from_slice(&w);
                t = 1.0;
                continue;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            for j in 0..width {
                y[j] = next[j] + (t - 1.0) / t_next * (next[j] - w[j]);
            }
            w.copy_from_slice(&next);
            t = t_next;
            current = value;
            if kkt_violation(&w, &grad, c) < cfg.tolerance {
                converged = true;
                break;
            }
        }
        Ok(Self {
            weights: w,
            thresholds: data.thresholds,
            l1_penalty: c,
            iterations: it,
            converged,
        })
    }

    pub fn score_vector(&self, x: &[f64]) -> f64 {
        dot(x, &self.weights)
    }

    /// Probability that `x` is an engaged-minus-other difference.
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.score_vector(x))
    }

    /// Score of every plan in key-matrix order.
    pub fn score_plans(&self, query: &TrafficQuery, keys: &PlanKeyMatrix) -> Result<Vec<f64>, AssociatorError> {
        (0..keys.len())
            .map(|p| evaluate_metrics(query, keys.key(p), &self.thresholds).map(|m| m.dot(&self.weights)))
            .collect()
    }

    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }

    pub fn save(&self, path: &Path) -> Result<(), AssociatorError> {
        let file = RankFile {
            format_version: RANK_FORMAT_VERSION,
            l1_penalty: self.l1_penalty,
            thresholds: self.thresholds,
            features: feature_names(&self.thresholds)
                .into_iter()
                .zip(&self.weights)
                .map(|(name, &weight)| RankFeature { name, weight })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file).expect("rank model serializes");
        std::fs::write(path, text + "\n").map_err(|source| AssociatorError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AssociatorError> {
        let text = std::fs::read_to_string(path).map_err(|source| AssociatorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: RankFile = serde_json::from_str(&text).map_err(|source| AssociatorError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if file.format_version != RANK_FORMAT_VERSION {
            return Err(AssociatorError::FormatVersion {
                path: path.to_path_buf(),
                found: file.format_version,
            });
        }
        if file.features.len() != METRIC_WIDTH {
            return Err(AssociatorError::ModelWidth {
                got: file.features.len(),
                expected: METRIC_WIDTH,
            });
        }
        for (index, (f, expected)) in file.features.iter().zip(feature_names(&file.thresholds)).enumerate() {
            if f.name != expected {
                return Err(AssociatorError::FeatureName {
                    index,
                    found: f.name.clone(),
                    expected,
                });
            }
        }
        Ok(Self {
            weights: file.features.iter().map(|f| f.weight).collect(),
            thresholds: file.thresholds,
            l1_penalty: file.l1_penalty,
            iterations: 0,
            converged: true,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RankFile {
    format_version: u32,
    l1_penalty: f64,
    thresholds: Thresholds,
    features: Vec<RankFeature>,
}

#[derive(Serialize, Deserialize)]
struct RankFeature {
    name: String,
    weight: f64,
}

/// Gradient of the summed log loss at `w`.
pub fn loss_gradient(data: &PairwiseDataset, w: &[f64]) -> Vec<f64> {
    let problem = Problem {
        data,
        signs: data.labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect(),
    };
    let mut g = vec![0.0; data.width];
    problem.loss_grad(w, &mut g);
    g
}
