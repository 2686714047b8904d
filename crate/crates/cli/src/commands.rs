//! The four workflows. Each takes a resolved [`RunConfig`] and writes its
//! outputs under `config.out`.
//!
//! All randomness derives from the master seed: run `k` (training uses
//! `k = 0`, benchmark split `k` uses `k`) gets its own seed, which keys the
//! data split, weight init, Wiener noise, minibatch order, injected noise and
//! prediction paths through disjoint streams.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dbnn_core::data::{self, Dataset, Prepared, Trajectory};
use dbnn_core::nets::DbnnArch;
use dbnn_core::predict::{self, PredictiveResult};
use dbnn_core::rng::{self, Purpose};
use dbnn_core::sgld::{self, Inference, LogRecord, Model, RegressionModel, TrajectoryModel};
use dbnn_core::PosteriorSamples;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::artifact::{ModelArtifact, FORMAT};
use crate::config::{Generator, Grid, RunConfig, Task};
use crate::io::{self, JsonLines};
use crate::CliError;

/// Seed of run `k` under a master seed.
pub fn run_seed(master: u64, k: usize) -> u64 {
    rng::derive_key(master, Purpose::Split, k as u64, 0, 0)
}

fn predict_seed(run_seed: u64) -> u64 {
    rng::derive_key(run_seed, Purpose::Predict, 0, 0, 0)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.out);
    io::ensure_dir(&dir)?;
    Ok(dir)
}

fn config_record(cfg: &RunConfig) -> serde_json::Value {
    json!({ "record": "config", "fingerprint": cfg.fingerprint(), "config": cfg.to_text() })
}

fn generate(cfg: &RunConfig) -> Result<Trajectory, CliError> {
    Ok(match cfg.data.generator {
        Generator::Vasicek => data::gen_vasicek(&cfg.data.vasicek, cfg.seed)?,
        Generator::Sigmoid => data::gen_sigmoid(&cfg.data.sigmoid, cfg.seed)?,
        Generator::None => return Err(CliError::Config(vec!["data.generator is `none`".into()])),
    })
}

/// Writes `{generator}.csv` (columns `t,value,truth`) and a metadata sidecar.
pub fn gen_data(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let traj = generate(cfg)?;
    let dir = out_dir(cfg)?;
    let name = cfg.data.generator.to_string();
    let path = dir.join(format!("{name}.csv"));
    io::write_trajectory(&path, &traj)?;
    let spec = match cfg.data.generator {
        Generator::Vasicek => serde_json::to_value(&cfg.data.vasicek),
        _ => serde_json::to_value(&cfg.data.sigmoid),
    }
    .expect("generator specs serialize");
    let meta = json!({
        "generator": name,
        "seed": cfg.seed,
        "spec": spec,
        "rows": traj.len(),
        "fingerprint": cfg.fingerprint(),
        "config": cfg.to_text(),
    });
    io::write_json(&dir.join(format!("{name}.meta.json")), &meta)?;
    Ok(path)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    io::load_csv(Path::new(&cfg.data.path), &cfg.target_columns())
}

pub fn load_trajectory(cfg: &RunConfig) -> Result<Trajectory, CliError> {
    if cfg.data.path.is_empty() {
        generate(cfg)
    } else {
        io::read_trajectory(Path::new(&cfg.data.path))
    }
}

fn check_sgld(cfg: &RunConfig, n: usize, seed: u64) -> Result<sgld::SgldConfig, CliError> {
    let s = cfg.sgld_config(n, seed);
    let problems: Vec<String> = s.problems(n).into_iter().map(|p| format!("sgld: {p}")).collect();
    if problems.is_empty() {
        Ok(s)
    } else {
        Err(CliError::Config(problems))
    }
}

/// Runs SGLD, streaming log records to `log` when given.
fn infer<M: Model>(
    model: &M,
    arch: &DbnnArch,
    cfg: &RunConfig,
    seed: u64,
    log: Option<&mut JsonLines>,
) -> Result<Inference, CliError> {
    let sgld_cfg = check_sgld(cfg, model.n_data(), seed)?;
    let init = arch.init_params_with(seed, &cfg.sgld.init);
    let mut write_err = None;
    let mut log = log;
    let result = sgld::run_inference(model, init, &sgld_cfg, |r: &LogRecord| {
        if let Some(w) = log.as_deref_mut() {
            if let Err(e) = w.write(&json!({ "record": "iteration", "log": r })) {
                write_err.get_or_insert(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    Ok(result?)
}

pub fn fit_regression(
    cfg: &RunConfig,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    seed: u64,
    log: Option<&mut JsonLines>,
) -> Result<(DbnnArch, Inference), CliError> {
    let (d, o) = (x[0].len(), y[0].len());
    let arch = DbnnArch::new(cfg.arch_spec(d, Some(o)))?;
    let model = RegressionModel {
        arch: &arch,
        x,
        y,
        sde: cfg.sde_config(d, cfg.sde.n_paths),
        prior: cfg.prior,
        noise_seed: seed,
    };
    let inference = infer(&model, &arch, cfg, seed, log)?;
    Ok((arch, inference))
}

pub fn fit_trajectory(
    cfg: &RunConfig,
    traj: &Trajectory,
    seed: u64,
    log: Option<&mut JsonLines>,
) -> Result<(DbnnArch, Inference), CliError> {
    let arch = DbnnArch::new(cfg.arch_spec(traj.dim(), None))?;
    let model = TrajectoryModel {
        arch: &arch,
        traj,
        config: cfg.trajectory_config(cfg.sde.n_paths),
        prior: cfg.prior,
        noise_seed: seed,
    };
    let inference = infer(&model, &arch, cfg, seed, log)?;
    Ok((arch, inference))
}

fn evaluation_samples(cfg: &RunConfig, samples: &PosteriorSamples) -> PosteriorSamples {
    samples.subsample(cfg.eval.max_snapshots)
}

/// Predictive moments at standardized inputs, one result per row.
pub fn predict_points(
    cfg: &RunConfig,
    arch: &DbnnArch,
    samples: &PosteriorSamples,
    x: &[Vec<f64>],
    run_seed: u64,
) -> Result<Vec<PredictiveResult>, CliError> {
    let samples = evaluation_samples(cfg, samples);
    let sde = cfg.sde_config(arch.state_dim(), cfg.eval.n_paths);
    let seed = predict_seed(run_seed);
    let results: Vec<dbnn_core::Result<PredictiveResult>> = x
        .par_iter()
        .enumerate()
        .map(|(i, xi)| predict::posterior_predictive(xi, &samples, arch, &sde, seed, i))
        .collect();
    Ok(results.into_iter().collect::<dbnn_core::Result<Vec<_>>>()?)
}

/// Default prediction times: from the first observation to a quarter span
/// past the last one.
pub fn resolve_grid(grid: Grid, traj: &Trajectory) -> Vec<f64> {
    match grid {
        Grid::Span { start, stop, count } => Grid::points(start, stop, count),
        Grid::Auto => {
            let (first, last) = (traj.times[0], *traj.times.last().expect("non-empty trajectory"));
            Grid::points(first, last + 0.25 * (last - first), 101)
        }
    }
}

pub fn predict_trajectory(
    cfg: &RunConfig,
    arch: &DbnnArch,
    samples: &PosteriorSamples,
    traj: &Trajectory,
    grid: &[f64],
    run_seed: u64,
) -> Result<Vec<PredictiveResult>, CliError> {
    let samples = evaluation_samples(cfg, samples);
    let tcfg = cfg.trajectory_config(cfg.eval.n_paths);
    Ok(predict::trajectory_predictive(traj, grid, &samples, arch, &tcfg, cfg.eval.anchoring, predict_seed(run_seed))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub log: PathBuf,
    pub snapshots: usize,
    pub skipped: usize,
    pub seconds: f64,
}

/// Trains on split 0 (regression) or the whole trajectory and writes
/// `model.json` and `train_log.jsonl`. A divergence abort additionally
/// writes `abort.json`.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let dir = out_dir(cfg)?;
    let seed = run_seed(cfg.seed, 0);
    let log_path = dir.join("train_log.jsonl");
    let mut log = JsonLines::create(&log_path)?;
    log.write(&config_record(cfg))?;
    let start = Instant::now();

    let fitted = match cfg.task {
        Task::Regression => {
            let data = load_dataset(cfg)?;
            let split = data::split(data.len(), seed, cfg.data.train_fraction)?;
            let prep = data::prepare(&data, split)?;
            fit_regression(cfg, &prep.train_x, &prep.train_y, seed, Some(&mut log)).map(|(arch, inf)| {
                let meta = (data.feature_names.clone(), data.target_names.clone(), Some(prep), None);
                (arch, inf, meta)
            })
        }
        Task::Timeseries => {
            let traj = load_trajectory(cfg)?;
            fit_trajectory(cfg, &traj, seed, Some(&mut log)).map(|(arch, inf)| {
                let names = (vec![String::from("t")], vec![String::from("value")]);
                (arch, inf, (names.0, names.1, None, Some(traj)))
            })
        }
    };
    let (arch, inference, (feature_names, target_names, prep, trajectory)) = match fitted {
        Ok(f) => f,
        Err(e) => {
            log.finish()?;
            if let CliError::Core(dbnn_core::Error::DivergenceAbort { skipped, iteration, limit }) = &e {
                let report = json!({
                    "error": "divergence_abort",
                    "skipped": skipped,
                    "iteration": iteration,
                    "limit": limit,
                    "fingerprint": cfg.fingerprint(),
                });
                io::write_json(&dir.join("abort.json"), &report)?;
            }
            return Err(e);
        }
    };
    let snapshots = inference.samples.len();
    log.write(&json!({
        "record": "done",
        "snapshots": snapshots,
        "skipped": inference.skipped,
        "final_params_sha": sha_of(inference.last.values()),
    }))?;
    log.finish()?;

    let (x_scaler, y_scaler, split) = match prep {
        Some(Prepared { x_scaler, y_scaler, split, .. }) => (Some(x_scaler), Some(y_scaler), Some(split)),
        None => (None, None, None),
    };
    let artifact = ModelArtifact {
        format: FORMAT.into(),
        config: cfg.to_text(),
        fingerprint: cfg.fingerprint(),
        run_seed: seed,
        arch: arch.spec().clone(),
        feature_names,
        target_names,
        x_scaler,
        y_scaler,
        split,
        trajectory,
        skipped_iterations: inference.skipped,
        samples: inference.samples,
    };
    let model = dir.join("model.json");
    artifact.save(&model)?;
    Ok(TrainSummary { model, log: log_path, snapshots, skipped: inference.skipped, seconds: start.elapsed().as_secs_f64() })
}

fn sha_of(values: &[f64]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn result_columns(prefix: Option<&str>) -> Vec<String> {
    ["mean", "epistemic_std", "total_std"]
        .iter()
        .map(|c| match prefix {
            Some(p) => format!("{p}_{c}"),
            None => (*c).to_string(),
        })
        .collect()
}

/// Where `predict` reads its inputs from.
#[derive(Debug, Clone, Default)]
pub struct PredictRequest {
    /// CSV of regression inputs; defaults to the held-out rows of the split.
    pub input: Option<PathBuf>,
    /// Time grid override for time series.
    pub grid: Option<Grid>,
}

/// Writes `predictions.csv` (inputs or time, then mean / epistemic std /
/// total std per target, in original units) and `predictions.meta.json`.
pub fn predict(artifact: &ModelArtifact, cfg: &RunConfig, request: &PredictRequest) -> Result<PathBuf, CliError> {
    let dir = out_dir(cfg)?;
    let arch = artifact.arch()?;
    let (header, rows): (Vec<String>, Vec<Vec<f64>>) = match &artifact.trajectory {
        Some(traj) => {
            let grid = resolve_grid(request.grid.unwrap_or(cfg.eval.grid), traj);
            let preds = predict_trajectory(cfg, &arch, &artifact.samples, traj, &grid, artifact.run_seed)?;
            let mut header = vec![String::from("t")];
            header.extend(result_columns(None));
            let rows = grid
                .iter()
                .zip(&preds)
                .map(|(t, p)| vec![*t, p.mean[0], p.epistemic_std()[0], p.total_std()[0]])
                .collect();
            (header, rows)
        }
        None => {
            let (xs, ys) = match (&artifact.x_scaler, &artifact.y_scaler) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(CliError::Config(vec!["model artifact has no input scaling".into()])),
            };
            let raw = match &request.input {
                Some(p) => io::load_inputs(p, &artifact.feature_names)?,
                None => {
                    let data = load_dataset(cfg)?;
                    let split = artifact.split.as_ref().ok_or_else(|| CliError::Config(vec!["no split recorded".into()]))?;
                    split.test.iter().map(|&i| data.x[i].clone()).collect()
                }
            };
            for row in &raw {
                if row.len() != arch.state_dim() {
                    return Err(dbnn_core::Error::Dimension { what: "input", expected: arch.state_dim(), found: row.len() }.into());
                }
            }
            let x: Vec<Vec<f64>> = raw.iter().map(|r| xs.apply(r)).collect();
            let preds = predict_points(cfg, &arch, &artifact.samples, &x, artifact.run_seed)?;
            let mut header = artifact.feature_names.clone();
            let single = artifact.target_names.len() == 1;
            for t in &artifact.target_names {
                header.extend(result_columns(if single { None } else { Some(t) }));
            }
            let rows = raw
                .iter()
                .zip(&preds)
                .map(|(r, p)| {
                    let mut row = r.clone();
                    let mean = ys.invert(&p.mean);
                    let (eps, tot) = (p.epistemic_std(), p.total_std());
                    for k in 0..mean.len() {
                        row.extend([mean[k], eps[k] * ys.std[k], tot[k] * ys.std[k]]);
                    }
                    row
                })
                .collect();
            (header, rows)
        }
    };
    let path = dir.join("predictions.csv");
    io::write_table(&path, &header, &rows)?;
    let meta = json!({
        "model_fingerprint": artifact.fingerprint,
        "rows": rows.len(),
        "fingerprint": cfg.fingerprint(),
        "config": cfg.to_text(),
    });
    io::write_json(&dir.join("predictions.meta.json"), &meta)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub split: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub test_ll: f64,
    pub rmse: f64,
    pub snapshots: usize,
    pub skipped: usize,
}

/// Trains and evaluates one random split.
pub fn run_split(cfg: &RunConfig, data: &Dataset, k: usize) -> Result<SplitMetrics, CliError> {
    let seed = run_seed(cfg.seed, k);
    let prep = data::prepare(data, data::split(data.len(), seed, cfg.data.train_fraction)?)?;
    let (arch, inference) = fit_regression(cfg, &prep.train_x, &prep.train_y, seed, None)?;
    let preds = predict_points(cfg, &arch, &inference.samples, &prep.test_x, seed)?;
    let test_ll = predict::test_log_likelihood(&prep.test_y, &preds, &prep.y_scaler.std)?;
    let mut means = Vec::new();
    let mut targets = Vec::new();
    for (p, &i) in preds.iter().zip(&prep.split.test) {
        means.extend(prep.y_scaler.invert(&p.mean));
        targets.extend_from_slice(&data.y[i]);
    }
    Ok(SplitMetrics {
        split: k,
        seed,
        n_train: prep.split.train.len(),
        n_test: prep.split.test.len(),
        test_ll,
        rmse: predict::rmse(&means, &targets)?,
        snapshots: inference.samples.len(),
        skipped: inference.skipped,
    })
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkSummary {
    pub n_splits: usize,
    pub n_completed: usize,
    pub test_ll_mean: f64,
    pub test_ll_se: f64,
    pub rmse_mean: f64,
    pub rmse_se: f64,
}

/// Runs `benchmark.n_splits` splits and writes `benchmark.jsonl`: a config
/// record, one record per split (metrics or error) and a summary over the
/// completed splits. `progress` sees each split as it finishes.
pub fn benchmark(
    cfg: &RunConfig,
    mut progress: impl FnMut(usize, &Result<SplitMetrics, CliError>, f64),
) -> Result<(PathBuf, BenchmarkSummary), CliError> {
    let dir = out_dir(cfg)?;
    let data = load_dataset(cfg)?;
    let path = dir.join("benchmark.jsonl");
    let mut out = JsonLines::create(&path)?;
    out.write(&config_record(cfg))?;
    let mut done = Vec::new();
    for k in 0..cfg.n_splits {
        let start = Instant::now();
        let r = run_split(cfg, &data, k);
        progress(k, &r, start.elapsed().as_secs_f64());
        match r {
            Ok(m) => {
                out.write(&json!({ "record": "split", "metrics": m }))?;
                done.push(m);
            }
            Err(e @ CliError::Config(_)) => return Err(e),
            Err(e) => out.write(&json!({ "record": "split", "split": k, "error": e.to_string() }))?,
        }
    }
    let lls: Vec<f64> = done.iter().map(|m| m.test_ll).collect();
    let rmses: Vec<f64> = done.iter().map(|m| m.rmse).collect();
    let ((ll, ll_se), (rm, rm_se)) = if done.is_empty() { ((f64::NAN, f64::NAN), (f64::NAN, f64::NAN)) } else { (mean_se(&lls), mean_se(&rmses)) };
    let summary = BenchmarkSummary {
        n_splits: cfg.n_splits,
        n_completed: done.len(),
        test_ll_mean: ll,
        test_ll_se: ll_se,
        rmse_mean: rm,
        rmse_se: rm_se,
    };
    out.write(&json!({ "record": "summary", "summary": summary }))?;
    out.finish()?;
    Ok((path, summary))
}
