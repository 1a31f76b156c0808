//! Evaluation metrics: forecast error measures, threshold-based anomaly
//! extraction with quantile threshold selection, and detection /
//! classification scores.
//!
//! Conventions: sMAPE uses the 200-scaled form and lets zero-denominator
//! terms contribute zero while still dividing by the full count; MAPE skips
//! zero targets and reports how many were skipped; MASE scales by the
//! in-sample seasonal-naive error; OWA averages the sMAPE and MASE ratios
//! against a baseline forecast.

use crate::error::{FantfError, Result};

fn check_pair(name: &str, y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(FantfError::Dimension(format!(
            "{name}: series lengths differ: {} vs {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(FantfError::UndefinedMetric(format!("{name}: empty series")));
    }
    Ok(())
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair("mse", y, yhat)?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / y.len() as f64)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair("mae", y, yhat)?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / y.len() as f64)
}

/// Symmetric MAPE in percent, `200/n * sum |yhat - y| / (|y| + |yhat|)`.
/// Terms with `|y| + |yhat| = 0` contribute zero. Always in `[0, 200]`.
pub fn smape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair("smape", y, yhat)?;
    let mut sum = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        let denom = a.abs() + b.abs();
        if denom > 0.0 {
            sum += (a - b).abs() / denom;
        }
    }
    Ok(200.0 * sum / y.len() as f64)
}

/// MAPE in percent over targets with `y != 0`; returns the value and how
/// many zero targets were skipped. All-zero targets are an error.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<(f64, usize)> {
    check_pair("mape", y, yhat)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (a, b) in y.iter().zip(yhat) {
        if *a != 0.0 {
            sum += ((a - b) / a).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(FantfError::UndefinedMetric(
            "mape: every target is zero".into(),
        ));
    }
    Ok((100.0 * sum / used as f64, y.len() - used))
}

/// Mean absolute error scaled by the in-sample seasonal-naive error with
/// period `m`: `mean|yhat - y| / mean_{t >= m} |ins[t] - ins[t-m]|`.
pub fn mase(y: &[f64], yhat: &[f64], insample: &[f64], m: usize) -> Result<f64> {
    check_pair("mase", y, yhat)?;
    if m == 0 {
        return Err(FantfError::Parameter("mase: period m must be >= 1".into()));
    }
    if insample.len() <= m {
        return Err(FantfError::UndefinedMetric(format!(
            "mase: in-sample series of length {} cannot support period {m}",
            insample.len()
        )));
    }
    let num = mae(y, yhat)?;
    let mut den = 0.0;
    for t in m..insample.len() {
        den += (insample[t] - insample[t - m]).abs();
    }
    den /= (insample.len() - m) as f64;
    if den == 0.0 {
        return Err(FantfError::UndefinedMetric(
            "mase: in-sample naive error is zero".into(),
        ));
    }
    Ok(num / den)
}

/// Overall weighted average: `0.5 * (smape/smape_b + mase/mase_b)` where
/// the `_b` values score the baseline forecast on the same targets.
pub fn owa(
    y: &[f64],
    yhat: &[f64],
    baseline: &[f64],
    insample: &[f64],
    m: usize,
) -> Result<f64> {
    let s = smape(y, yhat)?;
    let s_b = smape(y, baseline)?;
    if s_b == 0.0 {
        return Err(FantfError::UndefinedMetric(
            "owa: baseline smape is zero".into(),
        ));
    }
    let q = mase(y, yhat, insample, m)?;
    let q_b = mase(y, baseline, insample, m)?;
    if q_b == 0.0 {
        return Err(FantfError::UndefinedMetric(
            "owa: baseline mase is zero".into(),
        ));
    }
    Ok(0.5 * (s / s_b + q / q_b))
}

/// Indices `t` with `|actual[t] - predicted[t]| > epsilon` (strict).
pub fn detect_anomalies(actual: &[f64], predicted: &[f64], epsilon: f64) -> Result<Vec<usize>> {
    check_pair("detect_anomalies", actual, predicted)?;
    if !epsilon.is_finite() {
        return Err(FantfError::Parameter(format!(
            "detect_anomalies: epsilon must be finite, got {epsilon}"
        )));
    }
    Ok(actual
        .iter()
        .zip(predicted)
        .enumerate()
        .filter(|(_, (a, p))| (*a - *p).abs() > epsilon)
        .map(|(t, _)| t)
        .collect())
}

/// Quantile of `scores` by linear interpolation between order statistics:
/// at rank `(n-1) * q`. `q` must lie in `[0, 1]`.
pub fn select_epsilon(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(FantfError::UndefinedMetric(
            "select_epsilon: no scores".into(),
        ));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(FantfError::Parameter(format!(
            "select_epsilon: quantile must be in [0, 1], got {q}"
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(FantfError::Numeric(
            "select_epsilon: non-finite score".into(),
        ));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let mut v = sorted[lo];
    if frac > 0.0 {
        v += frac * (sorted[lo + 1] - sorted[lo]);
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall/F1 of a predicted anomaly mask against the truth mask.
/// Degenerate denominators yield zero rather than an error, so a detector
/// that finds nothing scores 0.
pub fn detection_scores(pred: &[bool], truth: &[bool]) -> Result<DetectionScores> {
    if pred.len() != truth.len() {
        return Err(FantfError::Dimension(format!(
            "detection_scores: mask lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(DetectionScores {
        precision,
        recall,
        f1,
    })
}

/// Point-adjusted prediction mask: if any point of a contiguous true
/// anomaly segment is predicted, the whole segment counts as detected.
/// Predictions outside true segments pass through unchanged.
pub fn point_adjust(pred: &[bool], truth: &[bool]) -> Result<Vec<bool>> {
    if pred.len() != truth.len() {
        return Err(FantfError::Dimension(format!(
            "point_adjust: mask lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut adjusted = pred.to_vec();
    let n = truth.len();
    let mut t = 0;
    while t < n {
        if truth[t] {
            let start = t;
            while t < n && truth[t] {
                t += 1;
            }
            if pred[start..t].iter().any(|&p| p) {
                for a in adjusted[start..t].iter_mut() {
                    *a = true;
                }
            }
        } else {
            t += 1;
        }
    }
    Ok(adjusted)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(FantfError::Dimension(format!(
            "accuracy: lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(FantfError::UndefinedMetric("accuracy: no labels".into()));
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / pred.len() as f64)
}
