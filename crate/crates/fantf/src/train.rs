//! Training and evaluation: losses, the Adam optimizer, the epoch loop and
//! per-task evaluators.
//!
//! Determinism: for a fixed seed the whole pipeline is bit-reproducible.
//! Batch order is reshuffled every epoch with a generator seeded
//! `seed ^ epoch`, and score noise / dropout draw from a stream derived
//! from the seed, so two runs with equal seeds take identical steps.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::data::{Normalizer, SeriesDataset, WindowSet};
use crate::error::{FantfError, Result};
use crate::metrics;
use crate::model::{Model, Task};
use crate::rng::{derive_seed, RngState};
use crate::tensor::{Tape, Tensor};

/// Batch size used when running inference over a whole window set.
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Mae,
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            _ => Err(FantfError::Config(format!(
                "unknown loss '{s}' (expected mse, mae or cross_entropy)"
            ))),
        }
    }
}

/// Loss between a model output and a same-shaped series target.
pub fn series_loss(tape: &Tape, kind: LossKind, output: &Tensor, target: &Tensor) -> Result<Tensor> {
    match kind {
        LossKind::Mse => {
            let diff = tape.sub(output, target)?;
            tape.mean_all(&tape.mul(&diff, &diff)?)
        }
        LossKind::Mae => {
            let diff = tape.sub(output, target)?;
            tape.mean_all(&tape.abs(&diff)?)
        }
        LossKind::CrossEntropy => Err(FantfError::Contract(
            "series_loss: cross-entropy needs class labels".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optional global gradient-norm ceiling applied before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FantfError::Parameter(format!("adam: lr {} invalid", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(FantfError::Parameter(format!(
                    "adam: {name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(FantfError::Parameter(format!("adam: eps {} invalid", self.eps)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(FantfError::Parameter(format!(
                    "adam: clip_norm must be positive and finite, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction. Parameters are replaced by fresh tensors on
/// every step; moment buffers are keyed by position in the parameter list,
/// which therefore must stay stable across steps.
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// One update over `params` using the gradients left by the last
    /// backward pass. A parameter the loss never touched keeps a zero
    /// gradient; a non-finite gradient is an error naming the parameter.
    pub fn step(&mut self, params: Vec<(String, &mut Tensor)>) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(FantfError::Contract(format!(
                "adam: parameter list changed size: {} vs {}",
                self.m.len(),
                params.len()
            )));
        }
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(params.len());
        for (name, p) in &params {
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
            if g.len() != p.len() {
                return Err(FantfError::Contract(format!(
                    "adam: gradient size mismatch for {name}"
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(FantfError::Numeric(format!(
                    "adam: non-finite gradient for parameter {name}"
                )));
            }
            grads.push(g);
        }
        if let Some(clip) = self.config.clip_norm {
            let norm = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let scale = clip / norm;
                for g in grads.iter_mut() {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        self.t += 1;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for (i, (_, p)) in params.into_iter().enumerate() {
            let mut data = p.data().to_vec();
            for j in 0..data.len() {
                let g = grads[i][j];
                self.m[i][j] = b1 * self.m[i][j] + (1.0 - b1) * g;
                self.v[i][j] = b2 * self.v[i][j] + (1.0 - b2) * g * g;
                let mhat = self.m[i][j] / bias1;
                let vhat = self.v[i][j] / bias2;
                data[j] -= self.config.lr * mhat / (vhat.sqrt() + self.config.eps);
            }
            *p = Tensor::param(p.shape(), data)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub adam: AdamConfig,
    /// Print a progress line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch, weighted by batch size.
    pub loss: f64,
}

/// Runs the optimization loop over `windows`, mutating the model in place,
/// and returns one loss record per epoch.
pub fn train(model: &mut Model, windows: &WindowSet, config: &TrainConfig) -> Result<Vec<EpochStats>> {
    if config.epochs == 0 {
        return Err(FantfError::Parameter("train: epochs must be >= 1".into()));
    }
    if config.batch_size == 0 {
        return Err(FantfError::Parameter("train: batch_size must be >= 1".into()));
    }
    if windows.is_empty() {
        return Err(FantfError::Data("train: no training windows".into()));
    }
    match (model.config.task, config.loss) {
        (Task::Classify, LossKind::CrossEntropy) => {}
        (Task::Classify, _) => {
            return Err(FantfError::Config(
                "train: classification requires the cross_entropy loss".into(),
            ))
        }
        (_, LossKind::CrossEntropy) => {
            return Err(FantfError::Config(
                "train: cross_entropy only applies to classification".into(),
            ))
        }
        _ => {}
    }
    let mut adam = Adam::new(config.adam.clone())?;
    let mut noise_rng = RngState::new(derive_seed(config.seed, 1));
    let mut stats = Vec::with_capacity(config.epochs);
    let n = windows.len();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        RngState::new(config.seed ^ epoch as u64).shuffle(&mut order);
        let mut weighted = 0.0;
        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let x = windows.input_batch(batch)?;
            let out = model.forward(&tape, &x, &mut noise_rng, true)?;
            let loss = match model.config.task {
                Task::Classify => {
                    let labels = windows.label_batch(batch)?;
                    tape.cross_entropy_logits(&out.output, &labels)?
                }
                _ => {
                    let target = windows.series_target_batch(batch)?;
                    series_loss(&tape, config.loss, &out.output, &target)?
                }
            };
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(FantfError::Numeric(format!(
                    "train: loss diverged at epoch {epoch}"
                )));
            }
            weighted += value * batch.len() as f64;
            tape.backward(&loss)?;
            adam.step(model.params_mut())?;
        }
        let epoch_loss = weighted / n as f64;
        if config.verbose {
            eprintln!("epoch {}/{} loss {epoch_loss:.6}", epoch + 1, config.epochs);
        }
        stats.push(EpochStats {
            epoch,
            loss: epoch_loss,
        });
    }
    Ok(stats)
}

/// Runs the model over every window in evaluation mode and returns the
/// flattened outputs.
fn forward_all(model: &Model, windows: &WindowSet) -> Result<Vec<f64>> {
    let mut rng = RngState::new(0); // unused outside training mode
    let all: Vec<usize> = (0..windows.len()).collect();
    let mut out = Vec::new();
    for chunk in all.chunks(EVAL_BATCH) {
        let tape = Tape::new();
        let x = windows.input_batch(chunk)?;
        let f = model.forward(&tape, &x, &mut rng, false)?;
        out.extend_from_slice(f.output.data());
    }
    Ok(out)
}

/// Cyclic seasonal-naive forecast from an input window (original units,
/// `[L, N]` row-major): step `j` predicts the value `m` steps before the
/// forecast start, wrapping within the last `m` observations.
pub fn seasonal_naive_forecast(
    window: &[f64],
    lookback: usize,
    n_variates: usize,
    horizon: usize,
    m: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(horizon * n_variates);
    for j in 0..horizon {
        let t = lookback - m + (j % m);
        out.extend_from_slice(&window[t * n_variates..(t + 1) * n_variates]);
    }
    out
}

#[derive(Debug)]
pub struct ForecastEvaluation {
    /// mse, mae, smape, and (when defined) mape, mase, owa.
    pub metrics: BTreeMap<String, f64>,
    /// Zero targets excluded from the MAPE mean.
    pub mape_skipped: usize,
    /// `[W, H, N]` predictions in original units.
    pub predictions: Vec<f64>,
    /// `[W, H, N]` ground truth in original units.
    pub targets: Vec<f64>,
}

/// Scores forecasts in original units. Pooled metrics (MSE, MAE, sMAPE,
/// MAPE) treat every forecast point alike; scaled metrics (MASE, OWA) are
/// computed per variate against its own in-sample history with seasonal
/// period `m`, then averaged. The OWA baseline is the seasonal-naive
/// forecast from each window. Metrics whose denominators degenerate
/// (all-zero targets, constant history) are omitted rather than failing
/// the run.
pub fn evaluate_forecast(
    model: &Model,
    windows: &WindowSet,
    norm: &Normalizer,
    original: &SeriesDataset,
    insample_rows: Range<usize>,
    m: usize,
) -> Result<ForecastEvaluation> {
    let (l, h, n) = (windows.lookback, windows.horizon, windows.n_variates);
    if m == 0 || m > l {
        return Err(FantfError::Parameter(format!(
            "evaluate: seasonal period {m} must be in [1, lookback {l}]"
        )));
    }
    if h == 0 {
        return Err(FantfError::Contract(
            "evaluate_forecast: windows carry no forecast targets".into(),
        ));
    }
    let w = windows.len();
    let raw = forward_all(model, windows)?;
    let mut predictions = raw;
    for (i, p) in predictions.iter_mut().enumerate() {
        *p = norm.invert(*p, i % n);
    }
    let all: Vec<usize> = (0..w).collect();
    let mut targets = windows.series_target_batch(&all)?.data().to_vec();
    for (i, t) in targets.iter_mut().enumerate() {
        *t = norm.invert(*t, i % n);
    }
    let mut naive = Vec::with_capacity(w * h * n);
    for wi in 0..w {
        let mut window = windows.input_batch(&[wi])?.data().to_vec();
        for (i, x) in window.iter_mut().enumerate() {
            *x = norm.invert(*x, i % n);
        }
        naive.extend(seasonal_naive_forecast(&window, l, n, h, m));
    }

    let mut out = BTreeMap::new();
    out.insert("mse".to_string(), metrics::mse(&targets, &predictions)?);
    out.insert("mae".to_string(), metrics::mae(&targets, &predictions)?);
    out.insert("smape".to_string(), metrics::smape(&targets, &predictions)?);
    let mut mape_skipped = 0;
    match metrics::mape(&targets, &predictions) {
        Ok((v, skipped)) => {
            out.insert("mape".to_string(), v);
            mape_skipped = skipped;
        }
        Err(FantfError::UndefinedMetric(_)) => {}
        Err(e) => return Err(e),
    }

    let stripe = |all: &[f64], v: usize| -> Vec<f64> {
        all.iter()
            .skip(v)
            .step_by(n)
            .copied()
            .collect()
    };
    let mut mase_sum = 0.0;
    let mut owa_sum = 0.0;
    let mut scaled_ok = true;
    for v in 0..n {
        let ins = original.column_range(v, insample_rows.clone());
        let y = stripe(&targets, v);
        let yh = stripe(&predictions, v);
        let yb = stripe(&naive, v);
        match (
            metrics::mase(&y, &yh, &ins, m),
            metrics::owa(&y, &yh, &yb, &ins, m),
        ) {
            (Ok(q), Ok(o)) => {
                mase_sum += q;
                owa_sum += o;
            }
            (Err(FantfError::UndefinedMetric(_)), _) | (_, Err(FantfError::UndefinedMetric(_))) => {
                scaled_ok = false;
                break;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    if scaled_ok {
        out.insert("mase".to_string(), mase_sum / n as f64);
        out.insert("owa".to_string(), owa_sum / n as f64);
    }
    Ok(ForecastEvaluation {
        metrics: out,
        mape_skipped,
        predictions,
        targets,
    })
}

#[derive(Debug)]
pub struct ClassificationEvaluation {
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_total: usize,
    pub predicted: Vec<usize>,
}

pub fn evaluate_classification(model: &Model, windows: &WindowSet) -> Result<ClassificationEvaluation> {
    let logits = forward_all(model, windows)?;
    let c = model.config.n_classes;
    let all: Vec<usize> = (0..windows.len()).collect();
    let truth = windows.label_batch(&all)?;
    let mut predicted = Vec::with_capacity(windows.len());
    for row in logits.chunks(c) {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        predicted.push(best);
    }
    let accuracy = metrics::accuracy(&predicted, &truth)?;
    let n_correct = predicted
        .iter()
        .zip(&truth)
        .filter(|(p, t)| p == t)
        .count();
    Ok(ClassificationEvaluation {
        accuracy,
        n_correct,
        n_total: truth.len(),
        predicted,
    })
}

#[derive(Debug)]
pub struct AnomalyEvaluation {
    /// Score threshold selected from the validation quantile.
    pub epsilon: f64,
    /// Absolute steps in the test range whose score exceeds the threshold.
    pub flagged: Vec<usize>,
    /// Number of test steps that received a score.
    pub scored_steps: usize,
    /// precision, recall, f1, f1_adjusted — present when truth is known.
    pub metrics: BTreeMap<String, f64>,
}

/// Mean reconstruction score per absolute step: the squared residual in
/// normalized units, averaged over variates and over every window that
/// covers the step. In the single-variate case thresholding this score is
/// equivalent to thresholding the absolute deviation.
fn per_step_scores(model: &Model, windows: &WindowSet) -> Result<BTreeMap<usize, f64>> {
    let (l, n) = (windows.lookback, windows.n_variates);
    let out = forward_all(model, windows)?;
    let all: Vec<usize> = (0..windows.len()).collect();
    let inputs = windows.input_batch(&all)?;
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (w, &start) in windows.starts.iter().enumerate() {
        for i in 0..l {
            let base = (w * l + i) * n;
            let mut score = 0.0;
            for v in 0..n {
                let r = out[base + v] - inputs.data()[base + v];
                score += r * r;
            }
            score /= n as f64;
            let e = acc.entry(start + i).or_insert((0.0, 0));
            e.0 += score;
            e.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(t, (sum, count))| (t, sum / count as f64))
        .collect())
}

/// Selects the threshold as the `q`-quantile of validation scores, flags
/// test steps whose score strictly exceeds it, and — when a ground-truth
/// mask is supplied — reports raw and point-adjusted detection scores
/// over the full test range (unscored steps count as not flagged).
pub fn evaluate_anomaly(
    model: &Model,
    val_windows: &WindowSet,
    test_windows: &WindowSet,
    test_rows: Range<usize>,
    q: f64,
    truth: Option<&[bool]>,
) -> Result<AnomalyEvaluation> {
    let val_scores: Vec<f64> = per_step_scores(model, val_windows)?
        .into_values()
        .collect();
    let epsilon = metrics::select_epsilon(&val_scores, q)?;
    let test_scores = per_step_scores(model, test_windows)?;
    let scored_steps = test_scores.len();
    let flagged: Vec<usize> = test_scores
        .iter()
        .filter(|(_, &s)| s > epsilon)
        .map(|(&t, _)| t)
        .collect();
    let mut out = BTreeMap::new();
    if let Some(mask) = truth {
        if mask.len() < test_rows.end {
            return Err(FantfError::Dimension(format!(
                "evaluate_anomaly: truth mask of {} steps does not cover rows {test_rows:?}",
                mask.len()
            )));
        }
        let pred: Vec<bool> = test_rows
            .clone()
            .map(|t| test_scores.get(&t).map(|&s| s > epsilon).unwrap_or(false))
            .collect();
        let truth_slice: Vec<bool> = test_rows.clone().map(|t| mask[t]).collect();
        let raw = metrics::detection_scores(&pred, &truth_slice)?;
        let adjusted =
            metrics::detection_scores(&metrics::point_adjust(&pred, &truth_slice)?, &truth_slice)?;
        out.insert("precision".to_string(), raw.precision);
        out.insert("recall".to_string(), raw.recall);
        out.insert("f1".to_string(), raw.f1);
        out.insert("f1_adjusted".to_string(), adjusted.f1);
    }
    Ok(AnomalyEvaluation {
        epsilon,
        flagged,
        scored_steps,
        metrics: out,
    })
}
