//! Reference forecasters: historical average, persistence and LASSO.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Minutes, SPEED_STEP};

use super::dataset::SequenceDataset;
use super::PredictorError;

const WEEK: Minutes = 7 * 24 * 60;
/// Same-weekday profiles averaged over this many preceding weeks.
pub const HISTORY_WEEKS: i64 = 4;

/// Day-of-week speed profiles averaged over the trailing 28 days.
#[derive(Clone, Debug)]
pub struct HistoricalAverage {
    index: HashMap<Minutes, usize>,
    speeds: Vec<Vec<f64>>,
}

impl HistoricalAverage {
    pub fn new(timestamps: &[Minutes], speeds: Vec<Vec<f64>>) -> Self {
        Self {
            index: timestamps.iter().enumerate().map(|(i, &t)| (t, i)).collect(),
            speeds,
        }
    }

    /// Mean of the observations exactly 1..=4 weeks before `target`. The
    /// value depends on the target time only, not on how far ahead it is
    /// requested.
    pub fn at(&self, target: Minutes) -> Result<Vec<f64>, PredictorError> {
        let found: Vec<&Vec<f64>> = (1..=HISTORY_WEEKS)
            .filter_map(|w| self.index.get(&(target - w * WEEK)).map(|&i| &self.speeds[i]))
            .collect();
        let first = found.first().ok_or(PredictorError::NoHistory(target))?;
        let mut mean = vec![0.0; first.len()];
        for s in &found {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v;
            }
        }
        let n = found.len() as f64;
        Ok(mean.into_iter().map(|m| m / n).collect())
    }

    /// `[horizon][segment]` forecast from `base`.
    pub fn forecast(&self, base: Minutes, horizon: usize) -> Result<Vec<Vec<f64>>, PredictorError> {
        (1..=horizon as Minutes).map(|h| self.at(base + h * SPEED_STEP)).collect()
    }
}

/// Persistence: the current speed at every horizon.
pub fn latest_observation(current: &[f64], horizon: usize) -> Vec<Vec<f64>> {
    vec![current.to_vec(); horizon]
}

/// Solution of `min (1/2n)‖y − Xw − b‖² + α‖w‖₁` with unpenalised intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl LassoFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Raw sums over a set of feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct XMoments {
    pub n: f64,
    pub sx: Vec<f64>,
    /// Row-major `d × d` sum of outer products.
    pub sxx: Vec<f64>,
}

/// Raw sums involving one response.
#[derive(Clone, Debug, PartialEq)]
pub struct YMoments {
    pub sy: f64,
    pub syy: f64,
    pub sxy: Vec<f64>,
}

impl XMoments {
    pub fn zeros(d: usize) -> Self {
        Self {
            n: 0.0,
            sx: vec![0.0; d],
            sxx: vec![0.0; d * d],
        }
    }

    pub fn dim(&self) -> usize {
        self.sx.len()
    }

    /// Accumulates the upper triangle only; call [`XMoments::symmetrize`] after.
    pub fn push(&mut self, x: &[f64]) {
        let d = self.dim();
        self.n += 1.0;
        for j in 0..d {
            let xj = x[j];
            self.sx[j] += xj;
            if xj == 0.0 {
                continue;
            }
            let row = &mut self.sxx[j * d..(j + 1) * d];
            for k in j..d {
                row[k] += xj * x[k];
            }
        }
    }

    pub fn symmetrize(&mut self) {
        let d = self.dim();
        for j in 0..d {
            for k in 0..j {
                self.sxx[j * d + k] = self.sxx[k * d + j];
            }
        }
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        Self {
            n: self.n + sign * other.n,
            sx: self.sx.iter().zip(&other.sx).map(|(a, b)| a + sign * b).collect(),
            sxx: self.sxx.iter().zip(&other.sxx).map(|(a, b)| a + sign * b).collect(),
        }
    }
}

impl YMoments {
    pub fn zeros(d: usize) -> Self {
        Self {
            sy: 0.0,
            syy: 0.0,
            sxy: vec![0.0; d],
        }
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        self.sy += y;
        self.syy += y * y;
        for (s, v) in self.sxy.iter_mut().zip(x) {
            *s += v * y;
        }
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        Self {
            sy: self.sy + sign * other.sy,
            syy: self.syy + sign * other.syy,
            sxy: self.sxy.iter().zip(&other.sxy).map(|(a, b)| a + sign * b).collect(),
        }
    }
}

/// Centered problem: Gram `G = Xcᵀ Xc / n`, `c = Xcᵀ yc / n`.
struct Centered {
    gram: Vec<f64>,
    c: Vec<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(x: &XMoments, y: &YMoments) -> Centered {
    let d = x.dim();
    let n = x.n;
    let x_mean: Vec<f64> = x.sx.iter().map(|s| s / n).collect();
    let y_mean = y.sy / n;
    let mut gram = vec![0.0; d * d];
    for j in 0..d {
        for k in 0..d {
            gram[j * d + k] = x.sxx[j * d + k] / n - x_mean[j] * x_mean[k];
        }
    }
    let c = (0..d).map(|j| y.sxy[j] / n - x_mean[j] * y_mean).collect();
    Centered {
        gram,
        c,
        x_mean,
        y_mean,
    }
}

fn soft_threshold(v: f64, a: f64) -> f64 {
    if v > a {
        v - a
    } else if v < -a {
        v + a
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on the covariance form, warm-started from `w`.
fn coordinate_descent(p: &Centered, alpha: f64, w: &mut [f64], tol: f64, max_sweeps: usize) {
    let d = w.len();
    // q = G w
    let mut q = vec![0.0; d];
    for (k, &wk) in w.iter().enumerate() {
        if wk != 0.0 {
            for j in 0..d {
                q[j] += p.gram[j * d + k] * wk;
            }
        }
    }
    for _ in 0..max_sweeps {
        let mut max_delta: f64 = 0.0;
        for j in 0..d {
            let gjj = p.gram[j * d + j];
            if gjj <= 1e-14 {
                if w[j] != 0.0 {
                    let delta = -w[j];
                    w[j] = 0.0;
                    for i in 0..d {
                        q[i] += p.gram[i * d + j] * delta;
                    }
                }
                continue;
            }
            let rho = p.c[j] - q[j] + gjj * w[j];
            let next = soft_threshold(rho, alpha) / gjj;
            let delta = next - w[j];
            if delta != 0.0 {
                w[j] = next;
                for i in 0..d {
                    q[i] += p.gram[i * d + j] * delta;
                }
                max_delta = max_delta.max(delta.abs() * gjj.sqrt());
            }
        }
        if max_delta < tol {
            break;
        }
    }
}

const CD_TOL: f64 = 1e-11;
const CD_MAX_SWEEPS: usize = 100_000;

fn finish(p: &Centered, w: Vec<f64>, alpha: f64) -> LassoFit {
    let intercept = p.y_mean - p.x_mean.iter().zip(&w).map(|(m, v)| m * v).sum::<f64>();
    LassoFit {
        weights: w,
        intercept,
        alpha,
    }
}

/// Residual sum of squares of `fit` on a set described by moments.
fn rss(x: &XMoments, y: &YMoments, fit: &LassoFit) -> f64 {
    let d = x.dim();
    let b = fit.intercept;
    let active: Vec<usize> = (0..d).filter(|&j| fit.weights[j] != 0.0).collect();
    let w = &fit.weights;
    let wsx: f64 = active.iter().map(|&j| w[j] * x.sx[j]).sum();
    let wsxy: f64 = active.iter().map(|&j| w[j] * y.sxy[j]).sum();
    let mut quad = 0.0;
    for &j in &active {
        for &k in &active {
            quad += w[j] * w[k] * x.sxx[j * d + k];
        }
    }
    (y.syy - 2.0 * (b * y.sy + wsxy) + x.n * b * b + 2.0 * b * wsx + quad).max(0.0)
}

fn moments_of(x: &[Vec<f64>], y: &[f64]) -> (XMoments, YMoments) {
    let d = x.first().map_or(0, Vec::len);
    let mut xm = XMoments::zeros(d);
    let mut ym = YMoments::zeros(d);
    for (row, &v) in x.iter().zip(y) {
        xm.push(row);
        ym.push(row, v);
    }
    xm.symmetrize();
    (xm, ym)
}

/// Smallest α at which every weight is zero: `max_j |Xcᵀ yc|_j / n`.
pub fn alpha_max(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let (xm, ym) = moments_of(x, y);
    let p = center(&xm, &ym);
    p.c.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn lasso_fit(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<LassoFit, PredictorError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(PredictorError::EmptyDataset);
    }
    let (xm, ym) = moments_of(x, y);
    Ok(fit_moments(&xm, &ym, alpha, None))
}

fn fit_moments(x: &XMoments, y: &YMoments, alpha: f64, warm: Option<&[f64]>) -> LassoFit {
    let p = center(x, y);
    let mut w = warm.map_or_else(|| vec![0.0; x.dim()], <[f64]>::to_vec);
    coordinate_descent(&p, alpha, &mut w, CD_TOL, CD_MAX_SWEEPS);
    finish(&p, w, alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoCvConfig {
    pub folds: usize,
    pub n_alphas: usize,
    /// Smallest grid value as a fraction of `alpha_max`.
    pub min_ratio: f64,
    /// Pick the largest α whose CV error is within one standard error of the minimum.
    pub one_standard_error: bool,
}

impl Default for LassoCvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            n_alphas: 20,
            min_ratio: 1e-3,
            one_standard_error: true,
        }
    }
}

/// Logarithmic grid from `hi` down to `hi * ratio`.
pub fn alpha_grid(hi: f64, ratio: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![hi];
    }
    (0..n)
        .map(|i| hi * ratio.powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Cross-validated fit from per-fold moments (folds are disjoint and cover
/// the training data).
pub fn lasso_cv_moments(folds_x: &[XMoments], folds_y: &[YMoments], cfg: &LassoCvConfig) -> Result<LassoFit, PredictorError> {
    let k = folds_x.len();
    if k < 2 || folds_y.len() != k {
        return Err(PredictorError::Config("cross-validation needs at least two folds".into()));
    }
    let mut tx = folds_x[0].clone();
    let mut ty = folds_y[0].clone();
    for f in 1..k {
        tx = tx.combine(&folds_x[f], 1.0);
        ty = ty.combine(&folds_y[f], 1.0);
    }
    if tx.n < (2 * k) as f64 {
        return Err(PredictorError::TooFewSamples {
            got: tx.n as usize,
            need: 2 * k,
        });
    }
    let full = center(&tx, &ty);
    let hi = full.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if hi <= 0.0 {
        return Ok(finish(&full, vec![0.0; tx.dim()], 0.0));
    }
    let grid = alpha_grid(hi, cfg.min_ratio, cfg.n_alphas);
    let mut errors = vec![vec![0.0; k]; grid.len()];
    for f in 0..k {
        let trx = tx.combine(&folds_x[f], -1.0);
        let tr_y = ty.combine(&folds_y[f], -1.0);
        let p = center(&trx, &tr_y);
        let mut w = vec![0.0; tx.dim()];
        for (a, &alpha) in grid.iter().enumerate() {
            coordinate_descent(&p, alpha, &mut w, CD_TOL, CD_MAX_SWEEPS);
            let fit = finish(&p, w.clone(), alpha);
            errors[a][f] = rss(&folds_x[f], &folds_y[f], &fit) / folds_x[f].n.max(1.0);
        }
    }
    let stats: Vec<(f64, f64)> = errors
        .iter()
        .map(|e| {
            let m = e.iter().sum::<f64>() / k as f64;
            let var = e.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (k - 1) as f64;
            (m, (var / k as f64).sqrt())
        })
        .collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| stats[a].0.total_cmp(&stats[b].0))
        .expect("non-empty grid");
    let chosen = if cfg.one_standard_error {
        let limit = stats[best].0 + stats[best].1;
        // Grid is decreasing, so the first index within the limit is the largest α.
        (0..=best).find(|&a| stats[a].0 <= limit).unwrap_or(best)
    } else {
        best
    };
    let mut w = vec![0.0; tx.dim()];
    for &alpha in &grid[..=chosen] {
        coordinate_descent(&full, alpha, &mut w, CD_TOL, CD_MAX_SWEEPS);
    }
    Ok(finish(&full, w, grid[chosen]))
}

/// Cross-validated fit on explicit rows, folds being contiguous blocks.
pub fn lasso_cv(x: &[Vec<f64>], y: &[f64], cfg: &LassoCvConfig) -> Result<LassoFit, PredictorError> {
    if x.len() != y.len() {
        return Err(PredictorError::EmptyDataset);
    }
    if x.len() < 2 * cfg.folds {
        return Err(PredictorError::TooFewSamples {
            got: x.len(),
            need: 2 * cfg.folds,
        });
    }
    let d = x[0].len();
    let mut fx = vec![XMoments::zeros(d); cfg.folds];
    let mut fy = vec![YMoments::zeros(d); cfg.folds];
    for (i, (row, &v)) in x.iter().zip(y).enumerate() {
        let f = i * cfg.folds / x.len();
        fx[f].push(row);
        fy[f].push(row, v);
    }
    for m in &mut fx {
        m.symmetrize();
    }
    lasso_cv_moments(&fx, &fy, cfg)
}

/// One cross-validated LASSO per (horizon, target) on lagged features.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LassoBaseline {
    pub lags: usize,
    /// `[horizon][target]`.
    pub fits: Vec<Vec<LassoFit>>,
}

impl LassoBaseline {
    pub fn fit(data: &SequenceDataset, train_ks: &[usize], lags: usize, cfg: &LassoCvConfig) -> Result<Self, PredictorError> {
        let lags = lags.clamp(1, data.lookback);
        if train_ks.len() < 2 * cfg.folds {
            return Err(PredictorError::TooFewSamples {
                got: train_ks.len(),
                need: 2 * cfg.folds,
            });
        }
        let rows: Vec<Vec<f64>> = train_ks.iter().map(|&k| data.lagged_features(k, lags)).collect();
        let d = rows[0].len();
        let fold_of = |i: usize| i * cfg.folds / rows.len();
        let mut fx = vec![XMoments::zeros(d); cfg.folds];
        for (i, r) in rows.iter().enumerate() {
            fx[fold_of(i)].push(r);
        }
        for m in &mut fx {
            m.symmetrize();
        }
        let n_targets = data.layout.targets.len();
        let jobs: Vec<(usize, usize)> = (0..data.horizon).flat_map(|h| (0..n_targets).map(move |t| (h, t))).collect();
        use rayon::prelude::*;
        let fitted: Vec<LassoFit> = jobs
            .par_iter()
            .map(|&(h, t)| {
                let mut fy = vec![YMoments::zeros(d); cfg.folds];
                for (i, (r, &k)) in rows.iter().zip(train_ks).enumerate() {
                    fy[fold_of(i)].push(r, data.target_mph[k + h + 1][t]);
                }
                lasso_cv_moments(&fx, &fy, cfg)
            })
            .collect::<Result<_, _>>()?;
        let mut fits = vec![Vec::with_capacity(n_targets); data.horizon];
        for ((h, _), f) in jobs.into_iter().zip(fitted) {
            fits[h].push(f);
        }
        Ok(Self { lags, fits })
    }

    /// `[horizon][target]` forecast in mph for window base `k`.
    pub fn forecast(&self, data: &SequenceDataset, k: usize) -> Vec<Vec<f64>> {
        let x = data.lagged_features(k, self.lags);
        self.fits
            .iter()
            .map(|row| row.iter().map(|f| f.predict(&x)).collect())
            .collect()
    }
}
