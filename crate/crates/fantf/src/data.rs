//! Datasets: CSV ingestion, per-variate normalization, chronological
//! splits, window extraction and seeded synthetic generators.
//!
//! A dataset is a dense `[T, N]` grid of f64 values (time-major), plus
//! optional per-step class labels and an optional ground-truth anomaly
//! mask. Splits cut the time axis; windows never cross a split boundary,
//! and the normalizer is fitted on the training rows only, so later rows
//! cannot leak into the statistics.

use std::ops::Range;
use std::path::Path;

use crate::error::{FantfError, Result};
use crate::rng::{derive_seed, RngState};
use crate::tensor::Tensor;

/// Smallest per-variate scale the normalizer will divide by.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SeriesDataset {
    n_variates: usize,
    /// Row-major `[T, N]`.
    values: Vec<f64>,
    /// Per-step class labels (classification datasets).
    pub step_labels: Option<Vec<usize>>,
    /// Per-step ground-truth anomaly mask (synthetic anomaly datasets).
    pub anomaly_mask: Option<Vec<bool>>,
}

impl SeriesDataset {
    pub fn new(n_variates: usize, values: Vec<f64>) -> Result<Self> {
        if n_variates == 0 {
            return Err(FantfError::Data("dataset: no variates".into()));
        }
        if values.is_empty() || values.len() % n_variates != 0 {
            return Err(FantfError::Data(format!(
                "dataset: {} values do not form whole rows of {n_variates}",
                values.len()
            )));
        }
        Ok(SeriesDataset {
            n_variates,
            values,
            step_labels: None,
            anomaly_mask: None,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() / self.n_variates
    }

    pub fn n_variates(&self) -> usize {
        self.n_variates
    }

    pub fn value(&self, t: usize, v: usize) -> f64 {
        self.values[t * self.n_variates + v]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_variates..(t + 1) * self.n_variates]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One variate's values over a row range, e.g. the in-sample series
    /// for scaled forecast errors.
    pub fn column_range(&self, v: usize, range: Range<usize>) -> Vec<f64> {
        range.map(|t| self.value(t, v)).collect()
    }
}

/// A loaded CSV plus the number of rows dropped for non-finite values.
#[derive(Debug)]
pub struct CsvLoad {
    pub dataset: SeriesDataset,
    pub skipped_rows: usize,
}

/// Reads a CSV of one row per time step, one numeric column per variate.
/// With `timestamp_col`, the first column is ignored. A first line whose
/// numeric fields do not all parse is treated as a header. Rows containing
/// non-finite values (nan/inf) are skipped and counted; anything else that
/// fails to parse is an error naming the line.
pub fn load_csv(path: &Path, timestamp_col: bool) -> Result<CsvLoad> {
    let text = std::fs::read_to_string(path).map_err(|e| FantfError::io_at(path, e))?;
    let mut values = Vec::new();
    let mut n_variates = 0usize;
    let mut skipped_rows = 0usize;
    let mut saw_data = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if timestamp_col {
            if fields.len() < 2 {
                return Err(FantfError::Data(format!(
                    "{}: line {line_no}: expected a timestamp plus at least one value",
                    path.display()
                )));
            }
            fields.remove(0);
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if !saw_data => continue, // header line
            Err(_) => {
                let bad = fields
                    .iter()
                    .find(|f| f.parse::<f64>().is_err())
                    .expect("some field failed");
                return Err(FantfError::Data(format!(
                    "{}: line {line_no}: cannot parse '{bad}' as a number",
                    path.display()
                )));
            }
        };
        if !saw_data {
            n_variates = row.len();
            saw_data = true;
        } else if row.len() != n_variates {
            return Err(FantfError::Data(format!(
                "{}: line {line_no}: expected {n_variates} values, found {}",
                path.display(),
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            skipped_rows += 1;
            continue;
        }
        values.extend(row);
    }
    if values.is_empty() {
        return Err(FantfError::Data(format!(
            "{}: no usable data rows",
            path.display()
        )));
    }
    Ok(CsvLoad {
        dataset: SeriesDataset::new(n_variates, values)?,
        skipped_rows,
    })
}

/// Per-variate affine standardization `(x - mean) / std`, fitted on a row
/// range (the training split) with the population standard deviation,
/// floored at [`STD_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(ds: &SeriesDataset, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > ds.n_steps() {
            return Err(FantfError::Data(format!(
                "normalizer: fit range {rows:?} invalid for {} steps",
                ds.n_steps()
            )));
        }
        let n = ds.n_variates();
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for t in rows.clone() {
            for v in 0..n {
                mean[v] += ds.value(t, v);
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        let mut std = vec![0.0; n];
        for t in rows {
            for v in 0..n {
                let d = ds.value(t, v) - mean[v];
                std[v] += d * d;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / count).sqrt().max(STD_FLOOR);
        }
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, x: f64, v: usize) -> f64 {
        (x - self.mean[v]) / self.std[v]
    }

    pub fn invert(&self, z: f64, v: usize) -> f64 {
        z * self.std[v] + self.mean[v]
    }

    pub fn apply_dataset(&self, ds: &SeriesDataset) -> Result<SeriesDataset> {
        if self.mean.len() != ds.n_variates() {
            return Err(FantfError::Dimension(format!(
                "normalizer: fitted for {} variates, dataset has {}",
                self.mean.len(),
                ds.n_variates()
            )));
        }
        let n = ds.n_variates();
        let values = ds
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| self.apply(x, i % n))
            .collect();
        let mut out = SeriesDataset::new(n, values)?;
        out.step_labels = ds.step_labels.clone();
        out.anomaly_mask = ds.anomaly_mask.clone();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Cuts `[0, n_steps)` into train/val/test: the first `floor(n * train)`
/// rows, the next `floor(n * val)` rows, and the remainder.
pub fn chronological_split(n_steps: usize, train_frac: f64, val_frac: f64) -> Result<SplitRanges> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(FantfError::Parameter(format!(
            "split: need train > 0, val > 0, train + val < 1; got {train_frac} and {val_frac}"
        )));
    }
    let train_end = (n_steps as f64 * train_frac).floor() as usize;
    let val_end = train_end + (n_steps as f64 * val_frac).floor() as usize;
    let split = SplitRanges {
        train: 0..train_end,
        val: train_end..val_end,
        test: val_end..n_steps,
    };
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(FantfError::Data(format!(
            "split: {n_steps} steps leave an empty split \
             (train {:?}, val {:?}, test {:?})",
            split.train, split.val, split.test
        )));
    }
    Ok(split)
}

/// Like [`chronological_split`] but with boundaries snapped down to
/// multiples of `unit`, so fixed-length segments (e.g. labeled windows)
/// are never cut in half.
pub fn chronological_split_aligned(
    n_steps: usize,
    train_frac: f64,
    val_frac: f64,
    unit: usize,
) -> Result<SplitRanges> {
    if unit == 0 || n_steps % unit != 0 {
        return Err(FantfError::Parameter(format!(
            "split: {n_steps} steps is not a whole number of segments of {unit}"
        )));
    }
    let raw = chronological_split(n_steps, train_frac, val_frac)?;
    let snap = |x: usize| x / unit * unit;
    let split = SplitRanges {
        train: 0..snap(raw.train.end),
        val: snap(raw.train.end)..snap(raw.val.end),
        test: snap(raw.val.end)..n_steps,
    };
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(FantfError::Data(format!(
            "split: snapping to segments of {unit} leaves an empty split"
        )));
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Input `[L, N]`, target = the next `horizon` rows.
    Forecast,
    /// Input `[L, N]`, target = the step label (must be constant over the
    /// window).
    Classify,
    /// Input `[L, N]`, target = the input itself.
    Reconstruct,
}

#[derive(Debug, Clone)]
pub enum WindowTargets {
    /// `[W, H, N]` forecast targets.
    Series(Vec<f64>),
    /// `[W]` class labels.
    Labels(Vec<usize>),
    /// Reconstruction: the inputs are their own targets.
    SameAsInput,
}

/// Fixed-length windows cut from one split of a dataset.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub lookback: usize,
    /// Zero for classification and reconstruction windows.
    pub horizon: usize,
    pub n_variates: usize,
    /// `[W, L, N]` flattened inputs.
    pub inputs: Vec<f64>,
    pub targets: WindowTargets,
    /// Absolute start row of each window in the source dataset.
    pub starts: Vec<usize>,
}

/// Cuts windows from `rows`, starting at `rows.start` and stepping by
/// `stride`; a window (plus its forecast target, if any) must fit entirely
/// inside `rows`. The number of windows is
/// `floor((len - lookback - horizon) / stride) + 1` when that span fits.
pub fn make_windows(
    ds: &SeriesDataset,
    rows: Range<usize>,
    lookback: usize,
    horizon: usize,
    stride: usize,
    kind: WindowKind,
) -> Result<WindowSet> {
    if lookback == 0 || stride == 0 {
        return Err(FantfError::Parameter(
            "windows: lookback and stride must be >= 1".into(),
        ));
    }
    if kind == WindowKind::Forecast && horizon == 0 {
        return Err(FantfError::Parameter(
            "windows: forecasting needs horizon >= 1".into(),
        ));
    }
    if rows.end > ds.n_steps() {
        return Err(FantfError::Data(format!(
            "windows: rows {rows:?} exceed {} steps",
            ds.n_steps()
        )));
    }
    let horizon = match kind {
        WindowKind::Forecast => horizon,
        _ => 0,
    };
    let n = ds.n_variates();
    let span = lookback + horizon;
    let mut inputs = Vec::new();
    let mut starts = Vec::new();
    let mut series_targets = Vec::new();
    let mut labels = Vec::new();
    let mut t0 = rows.start;
    while t0 + span <= rows.end {
        for t in t0..t0 + lookback {
            inputs.extend_from_slice(ds.row(t));
        }
        match kind {
            WindowKind::Forecast => {
                for t in t0 + lookback..t0 + span {
                    series_targets.extend_from_slice(ds.row(t));
                }
            }
            WindowKind::Classify => {
                let step_labels = ds.step_labels.as_ref().ok_or_else(|| {
                    FantfError::Data("windows: dataset has no class labels".into())
                })?;
                let label = step_labels[t0];
                if step_labels[t0..t0 + lookback].iter().any(|&l| l != label) {
                    return Err(FantfError::Data(format!(
                        "windows: window at row {t0} spans a class boundary"
                    )));
                }
                labels.push(label);
            }
            WindowKind::Reconstruct => {}
        }
        starts.push(t0);
        t0 += stride;
    }
    if starts.is_empty() {
        return Err(FantfError::Data(format!(
            "windows: range {rows:?} is too short for lookback {lookback} + horizon {horizon}"
        )));
    }
    let targets = match kind {
        WindowKind::Forecast => WindowTargets::Series(series_targets),
        WindowKind::Classify => WindowTargets::Labels(labels),
        WindowKind::Reconstruct => WindowTargets::SameAsInput,
    };
    Ok(WindowSet {
        lookback,
        horizon,
        n_variates: n,
        inputs,
        targets,
        starts,
    })
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    fn window_values(&self, w: usize) -> &[f64] {
        let stride = self.lookback * self.n_variates;
        &self.inputs[w * stride..(w + 1) * stride]
    }

    /// Stacks the chosen windows into a `[B, L, N]` input tensor.
    pub fn input_batch(&self, idx: &[usize]) -> Result<Tensor> {
        if idx.is_empty() {
            return Err(FantfError::Contract("input_batch: empty batch".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * self.lookback * self.n_variates);
        for &w in idx {
            data.extend_from_slice(self.window_values(w));
        }
        Tensor::new(&[idx.len(), self.lookback, self.n_variates], data)
    }

    /// Stacks the chosen windows' forecast targets into `[B, H, N]`, or the
    /// inputs themselves for reconstruction windows.
    pub fn series_target_batch(&self, idx: &[usize]) -> Result<Tensor> {
        match &self.targets {
            WindowTargets::Series(all) => {
                let stride = self.horizon * self.n_variates;
                let mut data = Vec::with_capacity(idx.len() * stride);
                for &w in idx {
                    data.extend_from_slice(&all[w * stride..(w + 1) * stride]);
                }
                Tensor::new(&[idx.len(), self.horizon, self.n_variates], data)
            }
            WindowTargets::SameAsInput => self.input_batch(idx),
            WindowTargets::Labels(_) => Err(FantfError::Contract(
                "series_target_batch: classification windows carry labels".into(),
            )),
        }
    }

    pub fn label_batch(&self, idx: &[usize]) -> Result<Vec<usize>> {
        match &self.targets {
            WindowTargets::Labels(all) => Ok(idx.iter().map(|&w| all[w]).collect()),
            _ => Err(FantfError::Contract(
                "label_batch: these windows carry no labels".into(),
            )),
        }
    }
}

/// Seeded synthetic datasets.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticSpec {
    /// Per variate, a sum of two sinusoids (periods 64 and 16 steps) with
    /// seeded phases, plus gaussian noise.
    SineMix {
        n_variates: usize,
        n_steps: usize,
        noise_std: f64,
    },
    /// Linear trend plus one seasonal sinusoid plus gaussian noise.
    TrendSeason {
        n_variates: usize,
        n_steps: usize,
        period: usize,
        noise_std: f64,
    },
    /// Smooth base series with rare three-step spike segments injected
    /// into one random variate each; the truth mask marks spike steps.
    /// `rate` is the per-step probability of starting a spike and
    /// `amplitude` is in units of the base series' standard deviation.
    AnomalySpikes {
        n_variates: usize,
        n_steps: usize,
        rate: f64,
        amplitude: f64,
    },
    /// Contiguous labeled segments of `window_len` steps; class 0 segments
    /// hold `f0` sinusoid cycles per window, class 1 segments `f1`, with
    /// seeded phases and mild noise.
    TwoClass {
        n_variates: usize,
        n_windows: usize,
        window_len: usize,
        f0: f64,
        f1: f64,
    },
}

/// Number of steps a spike segment covers.
pub const SPIKE_LEN: usize = 3;

fn sine_mix_base(n_variates: usize, n_steps: usize, noise_std: f64, rng: &mut RngState) -> Vec<f64> {
    let mut phases = Vec::with_capacity(n_variates * 2);
    for _ in 0..n_variates * 2 {
        phases.push(rng.uniform(0.0, std::f64::consts::TAU));
    }
    let mut values = Vec::with_capacity(n_steps * n_variates);
    for t in 0..n_steps {
        for v in 0..n_variates {
            let slow = (std::f64::consts::TAU * (v + 1) as f64 * t as f64 / 64.0
                + phases[2 * v])
                .sin();
            let fast = (std::f64::consts::TAU * (v + 1) as f64 * t as f64 / 16.0
                + phases[2 * v + 1])
                .sin();
            let noise = if noise_std > 0.0 {
                noise_std * rng.next_gaussian()
            } else {
                0.0
            };
            values.push(slow + 0.5 * fast + noise);
        }
    }
    values
}

/// Generates a dataset from a spec, bit-reproducibly for a given seed.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> Result<SeriesDataset> {
    match *spec {
        SyntheticSpec::SineMix {
            n_variates,
            n_steps,
            noise_std,
        } => {
            if noise_std < 0.0 {
                return Err(FantfError::Parameter("sine_mix: noise_std < 0".into()));
            }
            let mut rng = RngState::new(seed);
            let values = sine_mix_base(n_variates, n_steps, noise_std, &mut rng);
            SeriesDataset::new(n_variates, values)
        }
        SyntheticSpec::TrendSeason {
            n_variates,
            n_steps,
            period,
            noise_std,
        } => {
            if period == 0 {
                return Err(FantfError::Parameter("trend_season: period 0".into()));
            }
            if noise_std < 0.0 {
                return Err(FantfError::Parameter("trend_season: noise_std < 0".into()));
            }
            let mut rng = RngState::new(seed);
            let mut slopes = Vec::with_capacity(n_variates);
            let mut phases = Vec::with_capacity(n_variates);
            for _ in 0..n_variates {
                slopes.push(rng.uniform(-2.0, 2.0));
                phases.push(rng.uniform(0.0, std::f64::consts::TAU));
            }
            let mut values = Vec::with_capacity(n_steps * n_variates);
            for t in 0..n_steps {
                for v in 0..n_variates {
                    let trend = slopes[v] * t as f64 / n_steps.max(1) as f64;
                    let season =
                        (std::f64::consts::TAU * t as f64 / period as f64 + phases[v]).sin();
                    let noise = if noise_std > 0.0 {
                        noise_std * rng.next_gaussian()
                    } else {
                        0.0
                    };
                    values.push(trend + season + noise);
                }
            }
            SeriesDataset::new(n_variates, values)
        }
        SyntheticSpec::AnomalySpikes {
            n_variates,
            n_steps,
            rate,
            amplitude,
        } => {
            if !(0.0..0.2).contains(&rate) {
                return Err(FantfError::Parameter(format!(
                    "anomaly_spikes: rate must be in [0, 0.2), got {rate}"
                )));
            }
            if amplitude <= 0.0 {
                return Err(FantfError::Parameter(
                    "anomaly_spikes: amplitude must be > 0".into(),
                ));
            }
            // the base stream is independent of the injection stream, so
            // changing the rate never changes the underlying series
            let mut base_rng = RngState::new(derive_seed(seed, 0));
            let mut inject_rng = RngState::new(derive_seed(seed, 1));
            let mut values = sine_mix_base(n_variates, n_steps, 0.02, &mut base_rng);
            let sigma = {
                let n = values.len() as f64;
                let mean: f64 = values.iter().sum::<f64>() / n;
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
            };
            let mut mask = vec![false; n_steps];
            let mut t = 0;
            while t < n_steps {
                if inject_rng.next_f64() < rate {
                    let end = (t + SPIKE_LEN).min(n_steps);
                    let v = inject_rng.next_below(n_variates);
                    let sign = if inject_rng.next_f64() < 0.5 { 1.0 } else { -1.0 };
                    for s in t..end {
                        values[s * n_variates + v] += sign * amplitude * sigma;
                        mask[s] = true;
                    }
                    t = end;
                } else {
                    t += 1;
                }
            }
            let mut ds = SeriesDataset::new(n_variates, values)?;
            ds.anomaly_mask = Some(mask);
            Ok(ds)
        }
        SyntheticSpec::TwoClass {
            n_variates,
            n_windows,
            window_len,
            f0,
            f1,
        } => {
            if window_len == 0 || n_windows == 0 {
                return Err(FantfError::Parameter(
                    "two_class: need windows of positive length".into(),
                ));
            }
            if f0 == f1 {
                return Err(FantfError::Parameter(
                    "two_class: class frequencies must differ".into(),
                ));
            }
            let mut rng = RngState::new(seed);
            let mut values = Vec::with_capacity(n_windows * window_len * n_variates);
            let mut labels = Vec::with_capacity(n_windows * window_len);
            for _ in 0..n_windows {
                let class = usize::from(rng.next_f64() < 0.5);
                let freq = if class == 0 { f0 } else { f1 };
                let mut phases = Vec::with_capacity(n_variates);
                for _ in 0..n_variates {
                    phases.push(rng.uniform(0.0, std::f64::consts::TAU));
                }
                for t in 0..window_len {
                    for &phase in &phases {
                        let angle =
                            std::f64::consts::TAU * freq * t as f64 / window_len as f64 + phase;
                        values.push(angle.sin() + 0.05 * rng.next_gaussian());
                    }
                    labels.push(class);
                }
            }
            let mut ds = SeriesDataset::new(n_variates, values)?;
            ds.step_labels = Some(labels);
            Ok(ds)
        }
    }
}
