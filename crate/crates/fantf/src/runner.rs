//! End-to-end experiment pipelines behind the CLI verbs.
//!
//! `run` takes a resolved [`ExperimentConfig`] through data loading,
//! splitting, normalization, windowing, training and evaluation, and
//! returns a serializable [`RunResult`]. `compare_fan` runs the same
//! experiment with and without the learnable noise term, and
//! `emit_plot_data` turns a stored result back into per-variate CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::{hex, DataSource, ExperimentConfig};
use crate::data::{
    chronological_split, chronological_split_aligned, load_csv, make_windows, synthesize,
    Normalizer, SeriesDataset, SyntheticSpec, WindowKind, WindowSet,
};
use crate::error::{FantfError, Result};
use crate::fuzz::FuzzinessMode;
use crate::json;
use crate::model::{Model, Task};
use crate::rng::{derive_seed, RngState};
use crate::tensor::Tape;
use crate::train::{
    evaluate_anomaly, evaluate_classification, evaluate_forecast, train, TrainConfig,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Most results a run keeps verbatim; the rest of the predictions are
/// summarized by the metrics block only.
pub const MAX_STORED_WINDOWS: usize = 10;

/// One stored window of model output in original units, row-major
/// `[rows, n_variates]`. `start` is the absolute step index of the first
/// row: for forecasts that is the step after the lookback window, for
/// reconstructions the first input step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionWindow {
    pub start: usize,
    pub target: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// Everything a run produces, serialized as the result JSON.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub library_version: String,
    pub task: String,
    pub seed: u64,
    pub n_variates: usize,
    pub config_hash: String,
    /// Digest of all parameters after initialization (and checkpoint
    /// restore, if any) but before training.
    pub init_params_hash: String,
    pub epochs_run: usize,
    /// Mean training loss of the final epoch.
    pub train_loss: f64,
    pub metrics: BTreeMap<String, f64>,
    pub wall_seconds: f64,
    /// The fully resolved configuration the run used.
    pub config: BTreeMap<String, String>,
    pub predictions: Vec<PredictionWindow>,
}

/// SHA-256 over parameter names and raw f64 bytes in canonical order.
pub fn params_hash(model: &Model) -> String {
    let mut hasher = Sha256::new();
    for (name, t) in model.params() {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for &v in t.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

fn build_dataset(config: &ExperimentConfig, quiet: bool) -> Result<SeriesDataset> {
    let data_seed = derive_seed(config.seed, 2);
    let d = &config.data;
    match &d.source {
        DataSource::Csv(path) => {
            let load = load_csv(path, d.timestamp_col)?;
            if load.skipped_rows > 0 && !quiet {
                eprintln!(
                    "warning: skipped {} rows with missing values in {}",
                    load.skipped_rows,
                    path.display()
                );
            }
            Ok(load.dataset)
        }
        DataSource::SineMix => synthesize(
            &SyntheticSpec::SineMix {
                n_variates: d.n_variates,
                n_steps: d.n_steps,
                noise_std: d.noise_std,
            },
            data_seed,
        ),
        DataSource::TrendSeason => synthesize(
            &SyntheticSpec::TrendSeason {
                n_variates: d.n_variates,
                n_steps: d.n_steps,
                period: d.period,
                noise_std: d.noise_std,
            },
            data_seed,
        ),
        DataSource::AnomalySpikes => synthesize(
            &SyntheticSpec::AnomalySpikes {
                n_variates: d.n_variates,
                n_steps: d.n_steps,
                rate: d.rate,
                amplitude: d.amplitude,
            },
            data_seed,
        ),
        DataSource::TwoClass => synthesize(
            &SyntheticSpec::TwoClass {
                n_variates: d.n_variates,
                n_windows: d.n_windows,
                window_len: config.model.lookback,
                f0: d.f0,
                f1: d.f1,
            },
            data_seed,
        ),
    }
}

/// De-normalized reconstructions of the first `k` windows.
fn stored_reconstructions(
    model: &Model,
    windows: &WindowSet,
    norm: &Normalizer,
    k: usize,
) -> Result<Vec<PredictionWindow>> {
    let k = k.min(windows.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = (0..k).collect();
    let inputs = windows.input_batch(&idx)?;
    let tape = Tape::new();
    let mut rng = RngState::new(0);
    let fwd = model.forward(&tape, &inputs, &mut rng, false)?;
    let out = fwd.output.data();
    let (l, n) = (windows.lookback, windows.n_variates);
    let chunk = l * n;
    let mut stored = Vec::with_capacity(k);
    for w in 0..k {
        let mut target = Vec::with_capacity(chunk);
        let mut prediction = Vec::with_capacity(chunk);
        for j in 0..chunk {
            let v = j % n;
            target.push(norm.invert(inputs.data()[w * chunk + j], v));
            prediction.push(norm.invert(out[w * chunk + j], v));
        }
        stored.push(PredictionWindow {
            start: windows.starts[w],
            target,
            prediction,
        });
    }
    Ok(stored)
}

/// Runs one experiment end to end and returns the result record.
pub fn run(config: &ExperimentConfig, quiet: bool) -> Result<RunResult> {
    let t0 = Instant::now();
    let ds = build_dataset(config, quiet)?;
    let n_variates = ds.n_variates();
    let model_config = config.model_config(n_variates);
    model_config.validate()?;
    let (l, h) = (config.model.lookback, config.model.horizon);

    // classification segments must not straddle a split boundary
    let split = match config.task {
        Task::Classify => {
            chronological_split_aligned(ds.n_steps(), config.data.train_frac, config.data.val_frac, l)?
        }
        _ => chronological_split(ds.n_steps(), config.data.train_frac, config.data.val_frac)?,
    };
    let norm = Normalizer::fit(&ds, split.train.clone())?;
    let normed = norm.apply_dataset(&ds)?;

    let mut model = Model::init(
        model_config.clone(),
        &mut RngState::new(derive_seed(config.seed, 0)),
    )?;
    if let Some(path) = &config.checkpoint_load {
        let loaded = checkpoint::load(path)?;
        if loaded.config != model_config {
            return Err(FantfError::Config(format!(
                "checkpoint.load: {} holds a different model configuration",
                path.display()
            )));
        }
        model = loaded;
    }
    let init_params_hash = params_hash(&model);

    let train_config = TrainConfig {
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        seed: config.seed,
        loss: config.train.loss,
        adam: config.train.adam.clone(),
        verbose: !quiet,
    };
    let stride = config.data.stride;

    let (stats, metrics, predictions) = match config.task {
        Task::Forecast => {
            let train_w =
                make_windows(&normed, split.train.clone(), l, h, stride, WindowKind::Forecast)?;
            let test_w =
                make_windows(&normed, split.test.clone(), l, h, stride, WindowKind::Forecast)?;
            let stats = train(&mut model, &train_w, &train_config)?;
            let eval = evaluate_forecast(
                &model,
                &test_w,
                &norm,
                &ds,
                split.train.clone(),
                config.eval.seasonal_m,
            )?;
            let chunk = h * n_variates;
            let stored = (0..test_w.len().min(MAX_STORED_WINDOWS))
                .map(|w| PredictionWindow {
                    start: test_w.starts[w] + l,
                    target: eval.targets[w * chunk..(w + 1) * chunk].to_vec(),
                    prediction: eval.predictions[w * chunk..(w + 1) * chunk].to_vec(),
                })
                .collect();
            (stats, eval.metrics, stored)
        }
        Task::Classify => {
            // stride = lookback so windows coincide with labeled segments
            let train_w =
                make_windows(&normed, split.train.clone(), l, 0, l, WindowKind::Classify)?;
            let test_w = make_windows(&normed, split.test.clone(), l, 0, l, WindowKind::Classify)?;
            let stats = train(&mut model, &train_w, &train_config)?;
            let eval = evaluate_classification(&model, &test_w)?;
            let mut metrics = BTreeMap::new();
            metrics.insert("accuracy".to_string(), eval.accuracy);
            (stats, metrics, Vec::new())
        }
        Task::DetectAnomalies => {
            let train_w =
                make_windows(&normed, split.train.clone(), l, 0, stride, WindowKind::Reconstruct)?;
            // score val/test on non-overlapping windows
            let val_w = make_windows(&normed, split.val.clone(), l, 0, l, WindowKind::Reconstruct)?;
            let test_w =
                make_windows(&normed, split.test.clone(), l, 0, l, WindowKind::Reconstruct)?;
            let stats = train(&mut model, &train_w, &train_config)?;
            let eval = evaluate_anomaly(
                &model,
                &val_w,
                &test_w,
                split.test.clone(),
                config.eval.quantile,
                ds.anomaly_mask.as_deref(),
            )?;
            let mut metrics = eval.metrics;
            metrics.insert("epsilon".to_string(), eval.epsilon);
            let stored = stored_reconstructions(&model, &test_w, &norm, MAX_STORED_WINDOWS)?;
            (stats, metrics, stored)
        }
    };

    if let Some(path) = &config.checkpoint_save {
        checkpoint::save(&model, path)?;
    }

    let last = stats.last().expect("train returns at least one epoch");
    Ok(RunResult {
        schema_version: SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        task: config.task.as_str().to_string(),
        seed: config.seed,
        n_variates,
        config_hash: config.hash(),
        init_params_hash,
        epochs_run: stats.len(),
        train_loss: last.loss,
        metrics,
        wall_seconds: t0.elapsed().as_secs_f64(),
        config: config.resolved(),
        predictions,
    })
}

/// Paired ablation: the same experiment with the noise term disabled
/// (`base`) and enabled (`fan`). `difference_pct` holds
/// `100 * (base - fan) / base` per metric both runs produced, positive
/// when the noise-enabled run scored lower (better, for error metrics).
#[derive(Debug, Serialize, Deserialize)]
pub struct CompareResult {
    pub schema_version: u32,
    pub library_version: String,
    pub seed: u64,
    pub difference_pct: BTreeMap<String, f64>,
    pub base: RunResult,
    pub fan: RunResult,
}

pub fn compare_fan(config: &ExperimentConfig, quiet: bool) -> Result<CompareResult> {
    let mut base_cfg = config.clone();
    base_cfg.model.fuzziness = FuzzinessMode::None;
    // arms are for analysis only; never touch checkpoints
    base_cfg.checkpoint_save = None;
    base_cfg.checkpoint_load = None;
    let mut fan_cfg = base_cfg.clone();
    fan_cfg.model.fuzziness = match config.model.fuzziness {
        FuzzinessMode::LearnableDeltaGaussian { sigma } => {
            FuzzinessMode::LearnableDeltaGaussian { sigma }
        }
        _ => FuzzinessMode::LearnableDeltaGaussian { sigma: 1.0 },
    };
    let base = run(&base_cfg, quiet)?;
    let fan = run(&fan_cfg, quiet)?;
    if base.init_params_hash != fan.init_params_hash {
        return Err(FantfError::Contract(
            "compare: the two arms started from different parameters".into(),
        ));
    }
    let mut difference_pct = BTreeMap::new();
    for (key, &b) in &base.metrics {
        if let Some(&f) = fan.metrics.get(key) {
            if b != 0.0 {
                difference_pct.insert(key.clone(), 100.0 * (b - f) / b);
            }
        }
    }
    Ok(CompareResult {
        schema_version: SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        difference_pct,
        base,
        fan,
    })
}

/// Serializes `value` as pretty JSON and writes it via a temp file in the
/// same directory, so the destination is never half-written.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = json::to_pretty_string(value)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a stored run result and writes one CSV per variate for its first
/// stored window: columns `t,ground_truth,prediction` with `t` the
/// absolute step index. Returns the paths written.
pub fn emit_plot_data(result_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(result_path).map_err(|e| FantfError::io_at(result_path, e))?;
    let result: RunResult = serde_json::from_str(&text).map_err(|e| {
        FantfError::Data(format!(
            "{}: not a run result file: {e}",
            result_path.display()
        ))
    })?;
    let Some(first) = result.predictions.first() else {
        return Err(FantfError::Data(format!(
            "{}: result stores no prediction windows (task {})",
            result_path.display(),
            result.task
        )));
    };
    let n = result.n_variates;
    if n == 0
        || first.target.len() != first.prediction.len()
        || first.target.is_empty()
        || first.target.len() % n != 0
    {
        return Err(FantfError::Data(format!(
            "{}: stored window does not factor into {} variates",
            result_path.display(),
            n
        )));
    }
    let rows = first.target.len() / n;
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(n);
    for v in 0..n {
        let mut csv = String::from("t,ground_truth,prediction\n");
        for j in 0..rows {
            csv.push_str(&format!(
                "{},{},{}\n",
                first.start + j,
                first.target[j * n + v],
                first.prediction[j * n + v]
            ));
        }
        let path = out_dir.join(format!("plot_v{v}.csv"));
        std::fs::write(&path, csv)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn temp_dir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!("fantf-runner-tests-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn forecast_config(extra: &str) -> ExperimentConfig {
        let text = format!(
            "task = forecast\n\
             data.source = synthetic:sine_mix\n\
             data.n_steps = 96\n\
             data.n_variates = 2\n\
             model.lookback = 8\n\
             model.horizon = 2\n\
             model.d_model = 8\n\
             model.n_heads = 2\n\
             model.d_ff = 16\n\
             model.dropout = 0.0\n\
             train.epochs = 2\n\
             train.batch_size = 8\n\
             {extra}"
        );
        ExperimentConfig::from_text(&text, None).unwrap()
    }

    #[test]
    fn forecast_run_produces_complete_result() {
        let result = run(&forecast_config(""), true).unwrap();
        assert_eq!(result.schema_version, SCHEMA_VERSION);
        assert_eq!(result.task, "forecast");
        assert_eq!(result.seed, 42);
        assert_eq!(result.n_variates, 2);
        assert_eq!(result.config_hash.len(), 64);
        assert_eq!(result.init_params_hash.len(), 64);
        assert_eq!(result.epochs_run, 2);
        assert!(result.train_loss.is_finite());
        for key in ["mse", "mae", "smape"] {
            assert!(result.metrics.contains_key(key), "missing {key}");
        }
        assert!(!result.predictions.is_empty());
        assert!(result.predictions.len() <= MAX_STORED_WINDOWS);
        // test rows start at floor(96*0.7) + floor(96*0.15) = 81
        for p in &result.predictions {
            assert_eq!(p.target.len(), 2 * 2);
            assert_eq!(p.prediction.len(), 2 * 2);
            assert!(p.start >= 81 + 8, "start {}", p.start);
        }
        assert_eq!(result.config["model.lookback"], "8");
        assert!(result.wall_seconds >= 0.0);
    }

    #[test]
    fn same_seed_reproduces_metrics_and_hash() {
        let a = run(&forecast_config(""), true).unwrap();
        let b = run(&forecast_config(""), true).unwrap();
        assert_eq!(a.init_params_hash, b.init_params_hash);
        assert_eq!(
            json::to_pretty_string(&a.metrics).unwrap(),
            json::to_pretty_string(&b.metrics).unwrap()
        );
        let c = run(&forecast_config("seed = 43\n"), true).unwrap();
        assert_ne!(a.init_params_hash, c.init_params_hash);
    }

    #[test]
    fn classification_run_reports_accuracy_only() {
        let text = "task = classify\n\
                    data.source = synthetic:two_class\n\
                    data.n_windows = 12\n\
                    data.n_variates = 1\n\
                    data.f0 = 1\n\
                    data.f1 = 2\n\
                    model.lookback = 8\n\
                    model.d_model = 8\n\
                    model.n_heads = 2\n\
                    model.d_ff = 16\n\
                    train.epochs = 2\n\
                    train.batch_size = 4\n";
        let config = ExperimentConfig::from_text(text, None).unwrap();
        let result = run(&config, true).unwrap();
        assert_eq!(result.task, "classify");
        assert_eq!(result.metrics.len(), 1);
        let acc = result.metrics["accuracy"];
        assert!((0.0..=1.0).contains(&acc));
        assert!(result.predictions.is_empty());
    }

    #[test]
    fn anomaly_run_reports_detection_metrics() {
        let text = "task = detect_anomalies\n\
                    data.source = synthetic:anomaly_spikes\n\
                    data.n_steps = 240\n\
                    data.n_variates = 2\n\
                    data.rate = 0.03\n\
                    model.lookback = 8\n\
                    model.d_model = 8\n\
                    model.n_heads = 2\n\
                    model.d_ff = 16\n\
                    train.epochs = 2\n\
                    train.batch_size = 8\n\
                    eval.quantile = 0.9\n";
        let config = ExperimentConfig::from_text(text, None).unwrap();
        let result = run(&config, true).unwrap();
        for key in ["epsilon", "precision", "recall", "f1", "f1_adjusted"] {
            assert!(result.metrics.contains_key(key), "missing {key}");
        }
        assert!(!result.predictions.is_empty());
        for p in &result.predictions {
            assert_eq!(p.target.len(), 8 * 2);
            // reconstructions start at the window itself, inside test rows
            assert!(p.start >= 204, "start {}", p.start);
        }
    }

    #[test]
    fn checkpoint_restore_changes_initial_parameters() {
        let dir = temp_dir();
        let ckpt = dir.join("runner-restore.fantf");
        let save_cfg =
            forecast_config(&format!("checkpoint.save = {}\n", ckpt.display()));
        let first = run(&save_cfg, true).unwrap();
        let load_cfg =
            forecast_config(&format!("checkpoint.load = {}\n", ckpt.display()));
        let second = run(&load_cfg, true).unwrap();
        // the restored run starts from trained weights, not the seed draw
        assert_ne!(first.init_params_hash, second.init_params_hash);

        let mismatched = {
            let mut c = forecast_config(&format!("checkpoint.load = {}\n", ckpt.display()));
            c.model.d_model = 4;
            c.model.n_heads = 1;
            c.model.d_ff = 8;
            c
        };
        let err = run(&mismatched, true).unwrap_err();
        assert!(matches!(err, FantfError::Config(_)), "{err}");
    }

    #[test]
    fn compare_runs_share_initialization_and_report_differences() {
        let cmp = compare_fan(&forecast_config(""), true).unwrap();
        assert_eq!(cmp.base.init_params_hash, cmp.fan.init_params_hash);
        assert_eq!(cmp.base.config["fuzz.mode"], "none");
        assert_eq!(cmp.fan.config["fuzz.mode"], "learnable_delta_gaussian");
        let b = cmp.base.metrics["mse"];
        let f = cmp.fan.metrics["mse"];
        assert_eq!(cmp.difference_pct["mse"], 100.0 * (b - f) / b);
    }

    #[test]
    fn plot_data_reproduces_stored_window() {
        let dir = temp_dir();
        let result = RunResult {
            schema_version: SCHEMA_VERSION,
            library_version: "test".into(),
            task: "forecast".into(),
            seed: 1,
            n_variates: 2,
            config_hash: String::new(),
            init_params_hash: String::new(),
            epochs_run: 1,
            train_loss: 0.0,
            metrics: BTreeMap::new(),
            wall_seconds: 0.0,
            config: BTreeMap::new(),
            predictions: vec![PredictionWindow {
                start: 5,
                target: vec![1.0, 2.0, 3.0, 4.0],
                prediction: vec![5.0, 6.0, 7.0, 8.0],
            }],
        };
        let result_path = dir.join("plot-result.json");
        write_json(&result_path, &result).unwrap();
        let out_dir = dir.join("plots");
        let paths = emit_plot_data(&result_path, &out_dir).unwrap();
        assert_eq!(paths.len(), 2);
        let v0 = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(v0, "t,ground_truth,prediction\n5,1,5\n6,3,7\n");
        let v1 = std::fs::read_to_string(&paths[1]).unwrap();
        assert_eq!(v1, "t,ground_truth,prediction\n5,2,6\n6,4,8\n");
    }

    #[test]
    fn plot_data_rejects_unsuitable_inputs() {
        let dir = temp_dir();
        let missing = emit_plot_data(&dir.join("nope.json"), &dir).unwrap_err();
        assert!(matches!(missing, FantfError::Io(_)), "{missing}");

        let garbled = dir.join("garbled.json");
        std::fs::write(&garbled, "{not json").unwrap();
        let err = emit_plot_data(&garbled, &dir).unwrap_err();
        assert!(matches!(err, FantfError::Data(_)), "{err}");

        let empty = dir.join("empty-preds.json");
        let mut result: RunResult = serde_json::from_str(
            &json::to_pretty_string(&RunResult {
                schema_version: SCHEMA_VERSION,
                library_version: "test".into(),
                task: "classify".into(),
                seed: 1,
                n_variates: 1,
                config_hash: String::new(),
                init_params_hash: String::new(),
                epochs_run: 1,
                train_loss: 0.0,
                metrics: BTreeMap::new(),
                wall_seconds: 0.0,
                config: BTreeMap::new(),
                predictions: Vec::new(),
            })
            .unwrap(),
        )
        .unwrap();
        result.predictions.clear();
        write_json(&empty, &result).unwrap();
        let err = emit_plot_data(&empty, &dir).unwrap_err();
        assert!(err.to_string().contains("no prediction windows"), "{err}");
    }

    #[test]
    fn missing_csv_is_an_io_error() {
        let mut config = forecast_config("");
        config.data.source = DataSource::Csv(PathBuf::from("/definitely/not/here.csv"));
        let err = run(&config, true).unwrap_err();
        assert!(matches!(err, FantfError::Io(_)), "{err}");
    }
}
