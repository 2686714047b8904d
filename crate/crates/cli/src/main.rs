use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dbnn::artifact::ModelArtifact;
use dbnn::commands::{self, PredictRequest};
use dbnn::config::Grid;
use dbnn::{CliError, RunConfig};

/// Diffusion-based Bayesian neural networks: train with SGLD, predict with
/// calibrated uncertainty, and benchmark on random splits.
#[derive(Parser)]
#[command(name = "dbnn", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides `threads` from the configuration.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `out` from the configuration.
    #[arg(long, global = true)]
    out: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory (`data.generator`).
    GenData(Overrides),
    /// Fit a model and write `model.json` and `train_log.jsonl`.
    Train(Overrides),
    /// Predict with a trained model and write `predictions.csv`.
    Predict {
        /// Model written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// CSV of regression inputs (defaults to the held-out rows).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Time grid `start:stop:count` for time series.
        #[arg(long)]
        grid: Option<Grid>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train and evaluate on `benchmark.n_splits` random splits.
    Benchmark(Overrides),
    /// Print the resolved configuration.
    Config(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// `key=value` settings applied after the configuration file.
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Global {
    fn flags(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(s) = self.seed {
            v.push(format!("seed={s}"));
        }
        if let Some(t) = self.threads {
            v.push(format!("threads={t}"));
        }
        if let Some(o) = &self.out {
            v.push(format!("out={o}"));
        }
        v
    }

    /// Applies the configuration file, the overrides and then the flags on
    /// top of `base`. `needs_data` additionally requires a data source.
    fn resolve(&self, mut cfg: RunConfig, overrides: &Overrides, needs_data: bool) -> Result<RunConfig, CliError> {
        let mut problems = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io { path: path.clone(), message: e.to_string() })?;
            problems.extend(cfg.apply_text(&text).into_iter().map(|p| format!("{}: {p}", path.display())));
        }
        problems.extend(cfg.apply_overrides(&overrides.set));
        problems.extend(cfg.apply_overrides(&self.flags()));
        problems.extend(if needs_data { cfg.problems() } else { cfg.setting_problems() });
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Config(problems))
        }
    }
}

fn init_threads(cfg: &RunConfig) {
    // Only fails if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData(o) => {
            let cfg = g.resolve(RunConfig::default(), o, false)?;
            let path = commands::gen_data(&cfg)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Train(o) => {
            let cfg = g.resolve(RunConfig::default(), o, true)?;
            init_threads(&cfg);
            let s = commands::train(&cfg)?;
            eprintln!(
                "wrote {} ({} snapshots, {} skipped iterations, {:.1}s)",
                s.model.display(),
                s.snapshots,
                s.skipped,
                s.seconds
            );
        }
        Command::Predict { model, input, grid, overrides } => {
            let artifact = ModelArtifact::load(model)?;
            let cfg = g.resolve(artifact.run_config()?, overrides, true)?;
            init_threads(&cfg);
            let request = PredictRequest { input: input.clone(), grid: *grid };
            let path = commands::predict(&artifact, &cfg, &request)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Benchmark(o) => {
            let cfg = g.resolve(RunConfig::default(), o, true)?;
            init_threads(&cfg);
            let (path, s) = commands::benchmark(&cfg, |k, r, secs| match r {
                Ok(m) => eprintln!("split {k}: test_ll {:.4}, rmse {:.4} ({secs:.1}s)", m.test_ll, m.rmse),
                Err(e) => eprintln!("split {k}: failed: {e} ({secs:.1}s)"),
            })?;
            eprintln!(
                "{}/{} splits: test_ll {:.4} ± {:.4}, rmse {:.4} ± {:.4}",
                s.n_completed, s.n_splits, s.test_ll_mean, s.test_ll_se, s.rmse_mean, s.rmse_se
            );
            eprintln!("wrote {}", path.display());
        }
        Command::Config(o) => {
            let cfg = g.resolve(RunConfig::default(), o, false)?;
            print!("{}", cfg.to_text());
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
