//! Forecast error measures and the model × horizon report.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::domain::SPEED_STEP;

use super::PredictorError;

fn check(pred: &[f64], actual: &[f64]) -> Result<(), PredictorError> {
    if pred.len() != actual.len() {
        return Err(PredictorError::Config(format!(
            "{} predictions for {} observations",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, PredictorError> {
    check(pred, actual)?;
    let s: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// Mean of `|A − F| / F`: the forecast, not the observation, is the
/// denominator. Returned as a fraction.
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<f64, PredictorError> {
    check(pred, actual)?;
    let mut s = 0.0;
    for (&f, &a) in pred.iter().zip(actual) {
        if f == 0.0 {
            return Err(PredictorError::ZeroForecast);
        }
        s += (a - f).abs() / f;
    }
    Ok(s / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub model: String,
    /// mph per horizon.
    pub rmse: Vec<f64>,
    /// Fraction per horizon.
    pub mape: Vec<f64>,
}

/// Scores `[sample][horizon][target]` forecasts against observations of the
/// same shape.
pub fn score(model: &str, pred: &[Vec<Vec<f64>>], actual: &[Vec<Vec<f64>>]) -> Result<HorizonMetrics, PredictorError> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    let horizon = pred[0].len();
    let mut out = HorizonMetrics {
        model: model.to_string(),
        rmse: Vec::with_capacity(horizon),
        mape: Vec::with_capacity(horizon),
    };
    for h in 0..horizon {
        let p: Vec<f64> = pred.iter().flat_map(|s| s[h].iter().copied()).collect();
        let a: Vec<f64> = actual.iter().flat_map(|s| s[h].iter().copied()).collect();
        out.rmse.push(rmse(&p, &a)?);
        out.mape.push(mape(&p, &a)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Rmse,
    Mape,
}

/// Plain-text table with one row per model and one column per horizon.
pub fn render_table(title: &str, rows: &[HorizonMetrics], metric: Metric) -> String {
    let horizon = rows.first().map_or(0, |r| r.rmse.len());
    let name_w = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = write!(s, "{:<name_w$}", "Model");
    for h in 1..=horizon {
        let _ = write!(s, " {:>8}", format!("{} min", h as i64 * SPEED_STEP));
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:<name_w$}", r.model);
        let vals = match metric {
            Metric::Rmse => r.rmse.clone(),
            Metric::Mape => r.mape.iter().map(|v| v * 100.0).collect(),
        };
        for v in vals {
            let _ = write!(s, " {:>8.3}", v);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(rmse(&[50.0, 50.0], &[40.0, 60.0]).unwrap(), 10.0);
        assert_eq!(mape(&[50.0], &[40.0]).unwrap(), 0.2);
        assert_eq!(rmse(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(mape(&[0.0], &[1.0]), Err(PredictorError::ZeroForecast)));
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn table_layout() {
        let rows = vec![HorizonMetrics {
            model: "Latest-observation".into(),
            rmse: vec![3.5, 6.0],
            mape: vec![0.05, 0.1],
        }];
        let t = render_table("RMSE (mph)", &rows, Metric::Rmse);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[1].contains("5 min") && lines[1].contains("10 min"));
        assert!(lines[2].starts_with("Latest-observation") && lines[2].ends_with("6.000"));
        assert!(render_table("MAPE (%)", &rows, Metric::Mape).contains("10.000"));
    }
}
