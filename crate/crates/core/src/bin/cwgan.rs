use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cwgan::config::{ConfigError, DataKind, ExperimentConfig, KEYS, REPORT_DIR_ENV};
use cwgan::experiment::{evaluate_run, forecast_run, repeat_train, simulate, train_run};
use cwgan::gan::IterationRecord;
use cwgan::Error;

#[derive(Parser)]
#[command(name = "cwgan", version, about = "Conditional WGAN-GP for distributional forecasts and confidence intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (a directory, or a CSV file for simulate and forecast).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// unconditional | conditional; overrides `data.kind`.
        #[arg(long)]
        kind: Option<String>,
        /// Sample size; overrides `data.n`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model, evaluate it and write model files, history and report.
    Train {
        #[command(flatten)]
        common: Common,
        /// Repeat with seeds seed, seed+1, ... and aggregate.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Print progress every this many generator iterations (0: quiet).
        #[arg(long, default_value_t = 100)]
        progress: usize,
    },
    /// Evaluate a saved model on the configured data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model directory written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Per-day forecast intervals for a series CSV.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Series CSV; defaults to `data.path`.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// List every config key with its default value.
    Keys,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn progress_printer(every: usize) -> impl FnMut(u64, &IterationRecord) {
    move |seed, r| {
        if every > 0 && r.iteration % every == 0 {
            eprintln!(
                "[seed {seed}] iteration {} (epoch {}): critic {:.5}, penalty {:.5}, generator {:.5}",
                r.iteration, r.epoch, r.critic_objective, r.penalty, r.generator_objective
            );
        }
    }
}

fn default_out(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.report_dir.join(name)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { common, kind, n } => {
            let mut cfg = load_config(&common)?;
            if let Some(kind) = kind {
                cfg.set("data.kind", &kind)?;
            }
            if let Some(n) = n {
                cfg.data_n = n;
            }
            let out = common.out.unwrap_or_else(|| default_out(&cfg, &format!("{}-{}.csv", cfg.data_kind, cfg.seed)));
            let data = simulate(&cfg, &out)?;
            println!(
                "wrote {} rows x {} columns to {}",
                data.len(),
                data.x_dim() + data.y_dim(),
                out.display()
            );
        }
        Command::Train {
            common,
            repeats,
            progress,
        } => {
            let cfg = load_config(&common)?;
            let out = common.out.unwrap_or_else(|| default_out(&cfg, "train"));
            let mut printer = progress_printer(progress);
            if repeats <= 1 {
                let seed = cfg.seed;
                let (report, _) = train_run(&cfg, &out, &mut |r| printer(seed, r))?;
                print!("{}", report.summary());
            } else {
                let (reports, summary) = repeat_train(&cfg, repeats, &out, &mut printer)?;
                for r in &reports {
                    print!("{}", r.summary());
                }
                for (split, m, s) in &summary.coverage {
                    println!("coverage [{split}] over {repeats} runs: {:.2}% ({:.2})", 100.0 * m, 100.0 * s);
                }
                for (split, m, s) in &summary.transport {
                    println!("OT [{split}] over {repeats} runs: {m:.4} ({s:.4})");
                }
            }
            println!("outputs in {}", out.display());
        }
        Command::Evaluate { common, model } => {
            let cfg = load_config(&common)?;
            let out = common.out.unwrap_or_else(|| default_out(&cfg, "evaluate"));
            let report = evaluate_run(&cfg, &model, &out)?;
            print!("{}", report.summary());
            println!("outputs in {}", out.display());
        }
        Command::Forecast { common, model, series } => {
            let mut cfg = load_config(&common)?;
            let series = series
                .or_else(|| cfg.data_path.clone())
                .ok_or_else(|| ConfigError::Invalid("forecast needs --series or data.path".into()))?;
            // the series file is only read through the model's own setup
            cfg.data_kind = DataKind::Series;
            cfg.data_path = Some(series.clone());
            let out = common.out.unwrap_or_else(|| default_out(&cfg, "forecast.csv"));
            let rows = forecast_run(&cfg, &model, Path::new(&series), &out)?;
            let covered = rows.iter().filter(|r| r.covered).count();
            println!(
                "wrote {} forecast days to {}; {} of {} truths covered ({:.2}%)",
                rows.len(),
                out.display(),
                covered,
                rows.len(),
                100.0 * covered as f64 / rows.len().max(1) as f64
            );
        }
        Command::Keys => {
            let defaults = ExperimentConfig::default();
            for ((key, doc), (_, value)) in KEYS.iter().zip(defaults.entries()) {
                println!("{key} = {value}\n    {doc}");
            }
            println!("\n{REPORT_DIR_ENV} sets the default report.dir");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
