//! Command-line front end: run experiments, compare the noise term
//! against its ablation, dump plot data, and verify the build.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fantf::config::ExperimentConfig;
use fantf::{runner, selftest};

#[derive(Parser)]
#[command(
    name = "fantf",
    version,
    about = "Fuzzy-attention transformer for multivariate time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one experiment, writing a JSON result.
    Run {
        /// Experiment configuration file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Result path (default result.json; the FANTF_OUT variable wins).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress progress and summary output.
        #[arg(long)]
        quiet: bool,
    },
    /// Run the experiment with the attention noise term disabled and
    /// enabled, writing both results and a per-metric difference table.
    Compare {
        /// Experiment configuration file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Result path (default compare.json; the FANTF_OUT variable wins).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress progress and summary output.
        #[arg(long)]
        quiet: bool,
    },
    /// Write per-variate CSVs for the first stored prediction window of a
    /// saved run result.
    Plot {
        /// A result JSON written by `run`.
        #[arg(long)]
        result: PathBuf,
        /// Output directory (default `.`; the FANTF_OUT variable wins).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress the list of files written.
        #[arg(long)]
        quiet: bool,
    },
    /// Run the built-in verification suite.
    Selftest {
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print failures only.
        #[arg(long)]
        quiet: bool,
    },
}

/// Output destination: FANTF_OUT when set and non-empty, then --out,
/// then the verb's default.
fn resolve_out(flag: Option<PathBuf>, default: &str) -> PathBuf {
    match std::env::var("FANTF_OUT") {
        Ok(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.unwrap_or_else(|| PathBuf::from(default)),
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> fantf::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| fantf::FantfError::io_at(path, e))?;
    ExperimentConfig::from_text(&text, seed)
}

fn real_main() -> fantf::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            quiet,
        } => {
            let experiment = load_config(&config, seed)?;
            let result = runner::run(&experiment, quiet)?;
            let out = resolve_out(out, "result.json");
            runner::write_json(&out, &result)?;
            if !quiet {
                println!(
                    "{} run (seed {}) finished in {:.2}s -> {}",
                    result.task,
                    result.seed,
                    result.wall_seconds,
                    out.display()
                );
                for (k, v) in &result.metrics {
                    println!("  {k} = {v}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            config,
            out,
            seed,
            quiet,
        } => {
            let experiment = load_config(&config, seed)?;
            let cmp = runner::compare_fan(&experiment, quiet)?;
            let out = resolve_out(out, "compare.json");
            runner::write_json(&out, &cmp)?;
            if !quiet {
                println!(
                    "compared noise term off/on (seed {}) -> {}",
                    cmp.seed,
                    out.display()
                );
                println!("metric          base        with noise  change");
                for (k, d) in &cmp.difference_pct {
                    println!(
                        "  {k:<14}{:<12.6}{:<12.6}{d:+.3}%",
                        cmp.base.metrics[k], cmp.fan.metrics[k]
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { result, out, quiet } => {
            let dir = resolve_out(out, ".");
            let paths = runner::emit_plot_data(&result, &dir)?;
            if !quiet {
                for p in &paths {
                    println!("wrote {}", p.display());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { seed, quiet } => Ok(if selftest::run_selftest(seed, quiet) {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
