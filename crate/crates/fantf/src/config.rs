//! Experiment configuration: a flat `key = value` file with dotted
//! namespaces (`data.*`, `model.*`, `fuzz.*`, `train.*`, `eval.*`,
//! `checkpoint.*`).
//!
//! Blank lines and `#` comment lines are ignored. Every key has a default;
//! unknown or duplicate keys are errors, so typos fail loudly instead of
//! silently running with defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::error::{FantfError, Result};
use crate::fuzz::FuzzinessMode;
use crate::model::{ModelConfig, Task, TokenMode};
use crate::train::{AdamConfig, LossKind};

/// Shortest f64 text that parses back to the same bits.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

struct KvReader {
    values: BTreeMap<String, (String, usize)>,
    used: BTreeSet<String>,
}

impl KvReader {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(FantfError::Config(format!(
                    "line {line_no}: expected 'key = value', got '{line}'"
                )));
            };
            let key = k.trim().to_string();
            let value = v.trim().to_string();
            if key.is_empty() {
                return Err(FantfError::Config(format!("line {line_no}: empty key")));
            }
            if let Some((_, first)) = values.insert(key.clone(), (value, line_no)) {
                return Err(FantfError::Config(format!(
                    "line {line_no}: duplicate key '{key}' (first set on line {first})"
                )));
            }
        }
        Ok(KvReader {
            values,
            used: BTreeSet::new(),
        })
    }

    fn get(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.values.get(key).map(|(v, _)| v.clone())
    }

    fn str_or(&mut self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or_else(|| default.to_string())
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                FantfError::Config(format!("{key}: cannot parse '{v}' as a number"))
            }),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                FantfError::Config(format!("{key}: cannot parse '{v}' as a non-negative integer"))
            }),
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                FantfError::Config(format!("{key}: cannot parse '{v}' as a non-negative integer"))
            }),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.get(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(FantfError::Config(format!(
                "{key}: expected true or false, got '{v}'"
            ))),
        }
    }

    fn opt_path(&mut self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<String> = self
            .values
            .keys()
            .filter(|k| !self.used.contains(*k))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(FantfError::Config(format!(
                "unknown key(s): {}",
                unknown.join(", ")
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Csv(PathBuf),
    SineMix,
    TrendSeason,
    AnomalySpikes,
    TwoClass,
}

impl DataSource {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("csv:") {
            if path.is_empty() {
                return Err(FantfError::Config("data.source: empty csv path".into()));
            }
            return Ok(DataSource::Csv(PathBuf::from(path)));
        }
        match s {
            "synthetic:sine_mix" => Ok(DataSource::SineMix),
            "synthetic:trend_season" => Ok(DataSource::TrendSeason),
            "synthetic:anomaly_spikes" => Ok(DataSource::AnomalySpikes),
            "synthetic:two_class" => Ok(DataSource::TwoClass),
            _ => Err(FantfError::Config(format!(
                "data.source: unknown source '{s}' (expected csv:PATH or \
                 synthetic:{{sine_mix,trend_season,anomaly_spikes,two_class}})"
            ))),
        }
    }

    pub fn as_string(&self) -> String {
        match self {
            DataSource::Csv(p) => format!("csv:{}", p.display()),
            DataSource::SineMix => "synthetic:sine_mix".into(),
            DataSource::TrendSeason => "synthetic:trend_season".into(),
            DataSource::AnomalySpikes => "synthetic:anomaly_spikes".into(),
            DataSource::TwoClass => "synthetic:two_class".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub timestamp_col: bool,
    pub n_steps: usize,
    pub n_variates: usize,
    pub noise_std: f64,
    pub period: usize,
    pub rate: f64,
    pub amplitude: f64,
    pub n_windows: usize,
    pub f0: f64,
    pub f1: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub stride: usize,
}

/// Model hyperparameters minus the variate count, which is only known
/// once the data has been loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub depth: usize,
    pub d_ff: usize,
    pub dropout_p: f64,
    pub causal: bool,
    pub token_mode: TokenMode,
    pub n_classes: usize,
    pub ln_eps: f64,
    pub fuzziness: FuzzinessMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub adam: AdamConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    /// Seasonal period of the naive baseline and the MASE scaling.
    pub seasonal_m: usize,
    /// Validation-score quantile used as the anomaly threshold.
    pub quantile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub checkpoint_save: Option<PathBuf>,
    pub checkpoint_load: Option<PathBuf>,
}

fn read_fuzz(r: &mut KvReader) -> Result<FuzzinessMode> {
    let mode = r.str_or("fuzz.mode", "learnable_delta_gaussian");
    // read every knob up front so a knob set for a different mode is
    // "known but unused" rather than an unknown-key error
    let sigma = r.f64_or("fuzz.sigma", 1.0)?;
    let c = r.f64_or("fuzz.c", 0.0)?;
    let scale = r.f64_or("fuzz.scale", 1.0)?;
    let slope = r.f64_or("fuzz.slope", 1.0)?;
    let theta1 = r.f64_or("fuzz.theta1", 0.0)?;
    let theta2 = r.f64_or("fuzz.theta2", 1.0)?;
    let a = r.f64_or("fuzz.a", -1.0)?;
    let b = r.f64_or("fuzz.b", 1.0)?;
    let mode = match mode.as_str() {
        "none" => FuzzinessMode::None,
        "learnable_delta_gaussian" => FuzzinessMode::LearnableDeltaGaussian { sigma },
        "gaussian_membership" => FuzzinessMode::GaussianMembership { c, sigma },
        "scaled_sigmoid" => FuzzinessMode::ScaledSigmoid { scale, slope },
        "learnable_sigmoid" => FuzzinessMode::LearnableSigmoid { theta1, theta2 },
        "uniform" => FuzzinessMode::Uniform { a, b },
        other => {
            return Err(FantfError::Config(format!(
                "fuzz.mode: unknown mode '{other}'"
            )))
        }
    };
    mode.validate()?;
    Ok(mode)
}

/// The mode name plus only the knobs that mode actually uses.
pub fn fuzz_kv(mode: &FuzzinessMode) -> Vec<(String, String)> {
    let kv = |k: &str, v: f64| (format!("fuzz.{k}"), fmt_f64(v));
    let mut out = vec![(
        "fuzz.mode".to_string(),
        match mode {
            FuzzinessMode::None => "none",
            FuzzinessMode::LearnableDeltaGaussian { .. } => "learnable_delta_gaussian",
            FuzzinessMode::GaussianMembership { .. } => "gaussian_membership",
            FuzzinessMode::ScaledSigmoid { .. } => "scaled_sigmoid",
            FuzzinessMode::LearnableSigmoid { .. } => "learnable_sigmoid",
            FuzzinessMode::Uniform { .. } => "uniform",
        }
        .to_string(),
    )];
    match *mode {
        FuzzinessMode::None => {}
        FuzzinessMode::LearnableDeltaGaussian { sigma } => out.push(kv("sigma", sigma)),
        FuzzinessMode::GaussianMembership { c, sigma } => {
            out.push(kv("c", c));
            out.push(kv("sigma", sigma));
        }
        FuzzinessMode::ScaledSigmoid { scale, slope } => {
            out.push(kv("scale", scale));
            out.push(kv("slope", slope));
        }
        FuzzinessMode::LearnableSigmoid { theta1, theta2 } => {
            out.push(kv("theta1", theta1));
            out.push(kv("theta2", theta2));
        }
        FuzzinessMode::Uniform { a, b } => {
            out.push(kv("a", a));
            out.push(kv("b", b));
        }
    }
    out
}

impl ExperimentConfig {
    /// Parses a config file; `seed_override` (the CLI `--seed`) wins over
    /// the `seed` key.
    pub fn from_text(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut r = KvReader::parse(text)?;
        let task = Task::parse(&r.str_or("task", "forecast"))?;
        let mut seed = r.u64_or("seed", 42)?;
        if let Some(s) = seed_override {
            seed = s;
        }

        let data = DataConfig {
            source: DataSource::parse(&r.str_or("data.source", "synthetic:sine_mix"))?,
            timestamp_col: r.bool_or("data.timestamp_col", false)?,
            n_steps: r.usize_or("data.n_steps", 512)?,
            n_variates: r.usize_or("data.n_variates", 2)?,
            noise_std: r.f64_or("data.noise_std", 0.05)?,
            period: r.usize_or("data.period", 24)?,
            rate: r.f64_or("data.rate", 0.02)?,
            amplitude: r.f64_or("data.amplitude", 5.0)?,
            n_windows: r.usize_or("data.n_windows", 200)?,
            f0: r.f64_or("data.f0", 1.0)?,
            f1: r.f64_or("data.f1", 3.0)?,
            train_frac: r.f64_or("data.train_frac", 0.7)?,
            val_frac: r.f64_or("data.val_frac", 0.15)?,
            stride: r.usize_or("data.stride", 1)?,
        };

        let model = ModelSettings {
            lookback: r.usize_or("model.lookback", 16)?,
            horizon: r.usize_or("model.horizon", 4)?,
            d_model: r.usize_or("model.d_model", 16)?,
            n_heads: r.usize_or("model.n_heads", 2)?,
            depth: r.usize_or("model.depth", 1)?,
            d_ff: r.usize_or("model.d_ff", 32)?,
            dropout_p: r.f64_or("model.dropout", 0.1)?,
            causal: r.bool_or("model.causal", false)?,
            token_mode: TokenMode::parse(&r.str_or("model.token_mode", "variate"))?,
            n_classes: r.usize_or("model.n_classes", 2)?,
            ln_eps: r.f64_or("model.ln_eps", 1e-5)?,
            fuzziness: read_fuzz(&mut r)?,
        };

        let loss = match r.get("train.loss") {
            Some(s) => LossKind::parse(&s)?,
            None => match task {
                Task::Classify => LossKind::CrossEntropy,
                _ => LossKind::Mse,
            },
        };
        let clip_norm = match r.get("train.clip_norm").as_deref() {
            None | Some("none") => None,
            Some(v) => Some(v.parse::<f64>().map_err(|_| {
                FantfError::Config(format!(
                    "train.clip_norm: expected a number or 'none', got '{v}'"
                ))
            })?),
        };
        let train = TrainSettings {
            epochs: r.usize_or("train.epochs", 50)?,
            batch_size: r.usize_or("train.batch_size", 32)?,
            loss,
            adam: AdamConfig {
                lr: r.f64_or("train.lr", 1e-3)?,
                beta1: r.f64_or("train.beta1", 0.9)?,
                beta2: r.f64_or("train.beta2", 0.999)?,
                eps: r.f64_or("train.eps", 1e-8)?,
                clip_norm,
            },
        };

        let eval = EvalSettings {
            seasonal_m: r.usize_or("eval.seasonal_m", 1)?,
            quantile: r.f64_or("eval.quantile", 0.99)?,
        };

        let checkpoint_save = r.opt_path("checkpoint.save");
        let checkpoint_load = r.opt_path("checkpoint.load");
        r.finish()?;

        train.adam.validate()?;
        Ok(ExperimentConfig {
            task,
            seed,
            data,
            model,
            train,
            eval,
            checkpoint_save,
            checkpoint_load,
        })
    }

    /// Assembles the full model configuration once the variate count is
    /// known.
    pub fn model_config(&self, n_variates: usize) -> ModelConfig {
        ModelConfig {
            n_variates,
            lookback: self.model.lookback,
            horizon: self.model.horizon,
            d_model: self.model.d_model,
            n_heads: self.model.n_heads,
            depth: self.model.depth,
            d_ff: self.model.d_ff,
            dropout_p: self.model.dropout_p,
            causal: self.model.causal,
            token_mode: self.model.token_mode,
            task: self.task,
            n_classes: self.model.n_classes,
            ln_eps: self.model.ln_eps,
            fuzziness: self.model.fuzziness.clone(),
        }
    }

    /// The fully-resolved configuration as sorted key/value text — every
    /// default filled in, suitable for echoing into results and hashing.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task", self.task.as_str().into());
        put("seed", self.seed.to_string());
        put("data.source", self.data.source.as_string());
        put("data.timestamp_col", self.data.timestamp_col.to_string());
        put("data.n_steps", self.data.n_steps.to_string());
        put("data.n_variates", self.data.n_variates.to_string());
        put("data.noise_std", fmt_f64(self.data.noise_std));
        put("data.period", self.data.period.to_string());
        put("data.rate", fmt_f64(self.data.rate));
        put("data.amplitude", fmt_f64(self.data.amplitude));
        put("data.n_windows", self.data.n_windows.to_string());
        put("data.f0", fmt_f64(self.data.f0));
        put("data.f1", fmt_f64(self.data.f1));
        put("data.train_frac", fmt_f64(self.data.train_frac));
        put("data.val_frac", fmt_f64(self.data.val_frac));
        put("data.stride", self.data.stride.to_string());
        put("model.lookback", self.model.lookback.to_string());
        put("model.horizon", self.model.horizon.to_string());
        put("model.d_model", self.model.d_model.to_string());
        put("model.n_heads", self.model.n_heads.to_string());
        put("model.depth", self.model.depth.to_string());
        put("model.d_ff", self.model.d_ff.to_string());
        put("model.dropout", fmt_f64(self.model.dropout_p));
        put("model.causal", self.model.causal.to_string());
        put("model.token_mode", self.model.token_mode.as_str().into());
        put("model.n_classes", self.model.n_classes.to_string());
        put("model.ln_eps", fmt_f64(self.model.ln_eps));
        for (k, v) in fuzz_kv(&self.model.fuzziness) {
            m.insert(k, v);
        }
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("train.epochs", self.train.epochs.to_string());
        put("train.batch_size", self.train.batch_size.to_string());
        put("train.loss", self.train.loss.as_str().into());
        put("train.lr", fmt_f64(self.train.adam.lr));
        put("train.beta1", fmt_f64(self.train.adam.beta1));
        put("train.beta2", fmt_f64(self.train.adam.beta2));
        put("train.eps", fmt_f64(self.train.adam.eps));
        put(
            "train.clip_norm",
            self.train
                .adam
                .clip_norm
                .map(fmt_f64)
                .unwrap_or_else(|| "none".to_string()),
        );
        put("eval.seasonal_m", self.eval.seasonal_m.to_string());
        put("eval.quantile", fmt_f64(self.eval.quantile));
        if let Some(p) = &self.checkpoint_save {
            put("checkpoint.save", p.display().to_string());
        }
        if let Some(p) = &self.checkpoint_load {
            put("checkpoint.load", p.display().to_string());
        }
        m
    }

    /// SHA-256 over the sorted resolved lines.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.resolved() {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Serializes a model configuration as sorted `key=value` lines — the
/// plain-text header embedded in checkpoints.
pub fn model_config_to_kv(c: &ModelConfig) -> String {
    let mut m = BTreeMap::new();
    m.insert("n_variates".to_string(), c.n_variates.to_string());
    m.insert("lookback".to_string(), c.lookback.to_string());
    m.insert("horizon".to_string(), c.horizon.to_string());
    m.insert("d_model".to_string(), c.d_model.to_string());
    m.insert("n_heads".to_string(), c.n_heads.to_string());
    m.insert("depth".to_string(), c.depth.to_string());
    m.insert("d_ff".to_string(), c.d_ff.to_string());
    m.insert("dropout".to_string(), fmt_f64(c.dropout_p));
    m.insert("causal".to_string(), c.causal.to_string());
    m.insert("token_mode".to_string(), c.token_mode.as_str().to_string());
    m.insert("task".to_string(), c.task.as_str().to_string());
    m.insert("n_classes".to_string(), c.n_classes.to_string());
    m.insert("ln_eps".to_string(), fmt_f64(c.ln_eps));
    for (k, v) in fuzz_kv(&c.fuzziness) {
        m.insert(k, v);
    }
    let mut out = String::new();
    for (k, v) in m {
        out.push_str(&k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    }
    out
}

/// Inverse of [`model_config_to_kv`].
pub fn model_config_from_kv(text: &str) -> Result<ModelConfig> {
    let mut r = KvReader::parse(text)?;
    let config = ModelConfig {
        n_variates: r.usize_or("n_variates", 0)?,
        lookback: r.usize_or("lookback", 0)?,
        horizon: r.usize_or("horizon", 0)?,
        d_model: r.usize_or("d_model", 0)?,
        n_heads: r.usize_or("n_heads", 0)?,
        depth: r.usize_or("depth", 0)?,
        d_ff: r.usize_or("d_ff", 0)?,
        dropout_p: r.f64_or("dropout", 0.0)?,
        causal: r.bool_or("causal", false)?,
        token_mode: TokenMode::parse(&r.str_or("token_mode", "variate"))?,
        task: Task::parse(&r.str_or("task", "forecast"))?,
        n_classes: r.usize_or("n_classes", 2)?,
        ln_eps: r.f64_or("ln_eps", 1e-5)?,
        fuzziness: read_fuzz(&mut r)?,
    };
    r.finish()?;
    config.validate()?;
    Ok(config)
}
