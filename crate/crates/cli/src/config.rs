//! Flat `key = value` run configuration.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Lines are `dotted.key = value`; `#` starts a comment. Unknown keys,
//! duplicate keys and unparsable values are all reported together.

use std::fmt::{self, Display};
use std::str::FromStr;

use dbnn_core::data::{SigmoidSpec, VasicekSpec};
use dbnn_core::likelihood::{PriorSpec, TrajectoryConfig};
use dbnn_core::nets::{Activation, ArchSpec, DiffusionForm, InitSpec};
use dbnn_core::predict::Anchoring;
use dbnn_core::sde::SdeConfig;
use dbnn_core::SgldConfig;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Timeseries,
}

impl Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Timeseries => "timeseries",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "regression" => Ok(Task::Regression),
            "timeseries" => Ok(Task::Timeseries),
            _ => Err(format!("expected `regression` or `timeseries`, got `{s}`")),
        }
    }
}

/// Synthetic data source used when `data.path` is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    None,
    Vasicek,
    Sigmoid,
}

impl Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::None => "none",
            Generator::Vasicek => "vasicek",
            Generator::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Generator::None),
            "vasicek" => Ok(Generator::Vasicek),
            "sigmoid" => Ok(Generator::Sigmoid),
            _ => Err(format!("expected `none`, `vasicek` or `sigmoid`, got `{s}`")),
        }
    }
}

/// A value that is either given explicitly or derived from the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Auto<T> {
    Auto,
    Value(T),
}

impl<T: Copy> Auto<T> {
    pub fn or(self, fallback: T) -> T {
        match self {
            Auto::Auto => fallback,
            Auto::Value(v) => v,
        }
    }
}

impl<T: Display> Display for Auto<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => v.fmt(f),
        }
    }
}

impl<T: FromStr> FromStr for Auto<T> {
    type Err = T::Err;

    fn from_str(s: &str) -> Result<Self, T::Err> {
        if s == "auto" {
            Ok(Auto::Auto)
        } else {
            s.parse().map(Auto::Value)
        }
    }
}

/// Evenly spaced prediction times `start:stop:count`, or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    Auto,
    Span { start: f64, stop: f64, count: usize },
}

impl Grid {
    pub fn points(start: f64, stop: f64, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect(),
        }
    }
}

impl Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grid::Auto => f.write_str("auto"),
            Grid::Span { start, stop, count } => write!(f, "{start}:{stop}:{count}"),
        }
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Grid::Auto);
        }
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || format!("expected `auto` or `start:stop:count`, got `{s}`");
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if stop.partial_cmp(&start).is_none_or(|o| o.is_lt()) || count == 0 {
            return Err(format!("grid `{s}` needs stop >= start and count >= 1"));
        }
        Ok(Grid::Span { start, stop, count })
    }
}

/// Comma-separated layer widths; empty means no hidden layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl Display for Widths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Widths(Vec::new()));
        }
        s.split(',')
            .map(|w| match w.trim().parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("layer widths must be positive integers, got `{s}`")),
                Ok(n) => Ok(n),
            })
            .collect::<Result<_, _>>()
            .map(Widths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    /// CSV file; for time series, columns `t,value[,truth]`.
    pub path: String,
    /// Comma-separated target column names; empty selects the last column.
    pub target: String,
    pub generator: Generator,
    pub train_fraction: f64,
    pub vasicek: VasicekSpec,
    pub sigmoid: SigmoidSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSection {
    pub hidden: Widths,
    /// `auto`: on for regression, off for time series.
    pub time_input: Auto<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeSection {
    pub flow_time: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    /// Largest Euler step between time-series observations.
    pub max_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgldSection {
    pub step0: f64,
    pub decay_interval: usize,
    /// `auto`: `min(32, N)`.
    pub batch_size: Auto<usize>,
    pub iterations: usize,
    /// `auto`: half of the iterations.
    pub burn_in: Auto<usize>,
    pub thinning: usize,
    pub init: InitSpec,
    pub max_divergence_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    /// Paths per snapshot at prediction time.
    pub n_paths: usize,
    /// Upper bound on snapshots used for prediction; 0 uses all.
    pub max_snapshots: usize,
    pub anchoring: Anchoring,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub data: DataSection,
    pub activation: Activation,
    pub drift: NetSection,
    pub diffusion: NetSection,
    pub form: DiffusionForm,
    pub sde: SdeSection,
    pub sgld: SgldSection,
    pub prior: PriorSpec,
    pub eval: EvalSection,
    pub n_splits: usize,
    pub seed: u64,
    pub threads: usize,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sde = SdeConfig::new(1, DiffusionForm::Cholesky);
        let sgld = SgldConfig::default();
        let traj = TrajectoryConfig::default();
        Self {
            task: Task::Regression,
            data: DataSection {
                path: String::new(),
                target: String::new(),
                generator: Generator::None,
                train_fraction: 0.9,
                vasicek: VasicekSpec::default(),
                sigmoid: SigmoidSpec::default(),
            },
            activation: Activation::Tanh,
            drift: NetSection { hidden: Widths(vec![50]), time_input: Auto::Auto },
            diffusion: NetSection { hidden: Widths(vec![50]), time_input: Auto::Auto },
            form: DiffusionForm::Cholesky,
            sde: SdeSection { flow_time: sde.flow_time, n_steps: sde.n_steps, n_paths: sde.n_paths, max_dt: traj.max_dt },
            sgld: SgldSection {
                step0: sgld.step0,
                decay_interval: sgld.decay_interval,
                batch_size: Auto::Auto,
                iterations: sgld.iterations,
                burn_in: Auto::Auto,
                thinning: sgld.thinning,
                init: InitSpec::default(),
                max_divergence_fraction: sgld.max_divergence_fraction,
            },
            prior: PriorSpec::default(),
            eval: EvalSection { n_paths: 100, max_snapshots: 0, anchoring: Anchoring::LastObservation, grid: Grid::Auto },
            n_splits: 5,
            seed: 0,
            threads: 1,
            out: String::from("out"),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let (v, s) = (&d.vasicek, &d.sigmoid);
        let g = &self.sgld;
        vec![
            ("task", self.task.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("out", self.out.clone()),
            ("data.path", d.path.clone()),
            ("data.target", d.target.clone()),
            ("data.generator", d.generator.to_string()),
            ("data.train_fraction", d.train_fraction.to_string()),
            ("data.vasicek.x0", v.x0.to_string()),
            ("data.vasicek.kappa", v.kappa.to_string()),
            ("data.vasicek.mean", v.mean.to_string()),
            ("data.vasicek.sigma", v.sigma.to_string()),
            ("data.vasicek.t_end", v.t_end.to_string()),
            ("data.vasicek.n_points", v.n_points.to_string()),
            ("data.vasicek.obs_noise", v.obs_noise.to_string()),
            ("data.vasicek.substeps", v.substeps.to_string()),
            ("data.sigmoid.n", s.n.to_string()),
            ("data.sigmoid.t_min", s.t_min.to_string()),
            ("data.sigmoid.t_max", s.t_max.to_string()),
            ("data.sigmoid.noise_std", s.noise_std.to_string()),
            ("net.activation", self.activation.to_string()),
            ("drift.hidden", self.drift.hidden.to_string()),
            ("drift.time_input", self.drift.time_input.to_string()),
            ("diffusion.hidden", self.diffusion.hidden.to_string()),
            ("diffusion.time_input", self.diffusion.time_input.to_string()),
            ("diffusion.form", self.form.to_string()),
            ("sde.flow_time", self.sde.flow_time.to_string()),
            ("sde.n_steps", self.sde.n_steps.to_string()),
            ("sde.n_paths", self.sde.n_paths.to_string()),
            ("sde.max_dt", self.sde.max_dt.to_string()),
            ("sgld.step0", g.step0.to_string()),
            ("sgld.decay_interval", g.decay_interval.to_string()),
            ("sgld.batch_size", g.batch_size.to_string()),
            ("sgld.iterations", g.iterations.to_string()),
            ("sgld.burn_in", g.burn_in.to_string()),
            ("sgld.thinning", g.thinning.to_string()),
            ("sgld.init_scale", g.init.scale.to_string()),
            ("sgld.init_diffusion_scale", g.init.diffusion_output_scale.to_string()),
            ("sgld.init_diffusion_bias", g.init.diffusion_diag_bias.to_string()),
            ("sgld.init_log_obs_noise", g.init.log_obs_noise.to_string()),
            ("sgld.max_divergence_fraction", g.max_divergence_fraction.to_string()),
            ("prior.weight_std", self.prior.weight_std.to_string()),
            ("prior.diffusion_weight_std", self.prior.diffusion_weight_std.to_string()),
            ("prior.log_obs_noise_std", self.prior.log_obs_noise_std.to_string()),
            ("eval.n_paths", self.eval.n_paths.to_string()),
            ("eval.max_snapshots", self.eval.max_snapshots.to_string()),
            ("eval.anchoring", self.eval.anchoring.to_string()),
            ("eval.grid", self.eval.grid.to_string()),
            ("benchmark.n_splits", self.n_splits.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        RunConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let d = &mut self.data;
        let g = &mut self.sgld;
        match key {
            "task" => self.task = parse(value)?,
            "seed" => self.seed = parse(value)?,
            "threads" => self.threads = parse(value)?,
            "out" => self.out = value.to_string(),
            "data.path" => d.path = value.to_string(),
            "data.target" => d.target = value.to_string(),
            "data.generator" => d.generator = parse(value)?,
            "data.train_fraction" => d.train_fraction = parse(value)?,
            "data.vasicek.x0" => d.vasicek.x0 = parse(value)?,
            "data.vasicek.kappa" => d.vasicek.kappa = parse(value)?,
            "data.vasicek.mean" => d.vasicek.mean = parse(value)?,
            "data.vasicek.sigma" => d.vasicek.sigma = parse(value)?,
            "data.vasicek.t_end" => d.vasicek.t_end = parse(value)?,
            "data.vasicek.n_points" => d.vasicek.n_points = parse(value)?,
            "data.vasicek.obs_noise" => d.vasicek.obs_noise = parse(value)?,
            "data.vasicek.substeps" => d.vasicek.substeps = parse(value)?,
            "data.sigmoid.n" => d.sigmoid.n = parse(value)?,
            "data.sigmoid.t_min" => d.sigmoid.t_min = parse(value)?,
            "data.sigmoid.t_max" => d.sigmoid.t_max = parse(value)?,
            "data.sigmoid.noise_std" => d.sigmoid.noise_std = parse(value)?,
            "net.activation" => self.activation = parse(value)?,
            "drift.hidden" => self.drift.hidden = parse(value)?,
            "drift.time_input" => self.drift.time_input = parse(value)?,
            "diffusion.hidden" => self.diffusion.hidden = parse(value)?,
            "diffusion.time_input" => self.diffusion.time_input = parse(value)?,
            "diffusion.form" => self.form = parse(value)?,
            "sde.flow_time" => self.sde.flow_time = parse(value)?,
            "sde.n_steps" => self.sde.n_steps = parse(value)?,
            "sde.n_paths" => self.sde.n_paths = parse(value)?,
            "sde.max_dt" => self.sde.max_dt = parse(value)?,
            "sgld.step0" => g.step0 = parse(value)?,
            "sgld.decay_interval" => g.decay_interval = parse(value)?,
            "sgld.batch_size" => g.batch_size = parse(value)?,
            "sgld.iterations" => g.iterations = parse(value)?,
            "sgld.burn_in" => g.burn_in = parse(value)?,
            "sgld.thinning" => g.thinning = parse(value)?,
            "sgld.init_scale" => g.init.scale = parse(value)?,
            "sgld.init_diffusion_scale" => g.init.diffusion_output_scale = parse(value)?,
            "sgld.init_diffusion_bias" => g.init.diffusion_diag_bias = parse(value)?,
            "sgld.init_log_obs_noise" => g.init.log_obs_noise = parse(value)?,
            "sgld.max_divergence_fraction" => g.max_divergence_fraction = parse(value)?,
            "prior.weight_std" => self.prior.weight_std = parse(value)?,
            "prior.diffusion_weight_std" => self.prior.diffusion_weight_std = parse(value)?,
            "prior.log_obs_noise_std" => self.prior.log_obs_noise_std = parse(value)?,
            "eval.n_paths" => self.eval.n_paths = parse(value)?,
            "eval.max_snapshots" => self.eval.max_snapshots = parse(value)?,
            "eval.anchoring" => self.eval.anchoring = parse(value)?,
            "eval.grid" => self.eval.grid = parse(value)?,
            "benchmark.n_splits" => self.n_splits = parse(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses a configuration file on top of the defaults, then validates.
    pub fn parse(text: &str) -> Result<RunConfig, Vec<String>> {
        let mut cfg = RunConfig::default();
        let mut problems = cfg.apply_text(text);
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(problems)
        }
    }

    /// Applies `key = value` lines; returns one message per bad line.
    pub fn apply_text(&mut self, text: &str) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected `key = value`, got `{line}`", n + 1));
                continue;
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                problems.push(format!("line {}: duplicate key `{key}`", n + 1));
                continue;
            }
            if let Err(e) = self.set(key, value.trim()) {
                problems.push(format!("line {}: {key}: {e}", n + 1));
            }
        }
        problems
    }

    /// Applies command-line `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Vec<String> {
        let mut problems = Vec::new();
        for o in overrides {
            let o = o.as_ref();
            match o.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v.trim()) {
                        problems.push(format!("override `{o}`: {e}"));
                    }
                }
                None => problems.push(format!("override `{o}`: expected `key=value`")),
            }
        }
        problems
    }

    /// Canonical file text; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# dbnn run configuration\n");
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks that do not depend on the data, including that a data source
    /// is named.
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.setting_problems();
        let d = &self.data;
        match self.task {
            Task::Regression if d.path.is_empty() => p.push("regression needs data.path".into()),
            Task::Timeseries if d.path.is_empty() && d.generator == Generator::None => {
                p.push("timeseries needs data.path or data.generator".into())
            }
            _ => {}
        }
        p
    }

    /// Checks on the settings alone, without requiring a data source.
    pub fn setting_problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                p.push(msg);
            }
        };
        let d = &self.data;
        need(self.threads >= 1, "threads must be at least 1".into());
        need(self.n_splits >= 1, "benchmark.n_splits must be at least 1".into());
        need(
            d.train_fraction > 0.0 && d.train_fraction < 1.0,
            format!("data.train_fraction must be in (0, 1), got {}", d.train_fraction),
        );
        let v = &d.vasicek;
        need(v.kappa > 0.0 && v.sigma >= 0.0 && v.obs_noise >= 0.0, "data.vasicek needs kappa > 0, sigma >= 0, obs_noise >= 0".into());
        need(v.t_end > 0.0 && v.n_points >= 2 && v.substeps >= 1, "data.vasicek needs t_end > 0, n_points >= 2, substeps >= 1".into());
        let s = &d.sigmoid;
        need(s.n >= 2 && s.t_max > s.t_min && s.noise_std >= 0.0, "data.sigmoid needs n >= 2, t_max > t_min, noise_std >= 0".into());
        if let DiffusionForm::LowRank(r) = self.form {
            need(r >= 1, "diffusion.form lowrank rank must be at least 1".into());
        }
        need(self.sde.flow_time > 0.0 && self.sde.flow_time.is_finite(), format!("sde.flow_time must be positive, got {}", self.sde.flow_time));
        need(self.sde.n_steps >= 1, "sde.n_steps must be at least 1".into());
        need(self.sde.n_paths >= 1, "sde.n_paths must be at least 1".into());
        need(self.sde.max_dt > 0.0, format!("sde.max_dt must be positive, got {}", self.sde.max_dt));
        let g = &self.sgld;
        need(g.step0 > 0.0 && g.step0.is_finite(), format!("sgld.step0 must be positive, got {}", g.step0));
        need(g.decay_interval >= 1, "sgld.decay_interval must be at least 1".into());
        need(g.batch_size != Auto::Value(0), "sgld.batch_size must be at least 1".into());
        need(g.iterations >= 1, "sgld.iterations must be at least 1".into());
        need(g.thinning >= 1, "sgld.thinning must be at least 1".into());
        if let Auto::Value(b) = g.burn_in {
            need(b < g.iterations, format!("sgld.burn_in ({b}) must be below sgld.iterations ({})", g.iterations));
        }
        let burn_in = g.burn_in.or(g.iterations / 2);
        if burn_in < g.iterations && g.thinning >= 1 {
            need(
                g.iterations - burn_in >= g.thinning,
                format!(
                    "sgld settings keep no posterior snapshots: {} iterations after burn-in, thinning {}",
                    g.iterations - burn_in,
                    g.thinning
                ),
            );
        }
        need(
            g.init.scale >= 0.0 && g.init.diffusion_output_scale >= 0.0,
            "sgld.init_scale and sgld.init_diffusion_scale must be non-negative".into(),
        );
        need(
            g.init.diffusion_diag_bias.is_finite() && g.init.log_obs_noise.is_finite(),
            "sgld.init_diffusion_bias and sgld.init_log_obs_noise must be finite".into(),
        );
        need(
            (0.0..=1.0).contains(&g.max_divergence_fraction),
            "sgld.max_divergence_fraction must be in [0, 1]".into(),
        );
        need(
            self.prior.weight_std > 0.0 && self.prior.diffusion_weight_std > 0.0 && self.prior.log_obs_noise_std > 0.0,
            "prior standard deviations must be positive".into(),
        );
        need(self.eval.n_paths >= 2, "eval.n_paths must be at least 2".into());
        p
    }

    pub fn default_time_input(&self) -> bool {
        self.task == Task::Regression
    }

    /// Architecture for `state_dim` inputs; `output_dim` is `None` for time series.
    pub fn arch_spec(&self, state_dim: usize, output_dim: Option<usize>) -> ArchSpec {
        ArchSpec {
            state_dim,
            output_dim,
            drift_hidden: self.drift.hidden.0.clone(),
            diffusion_hidden: self.diffusion.hidden.0.clone(),
            activation: self.activation,
            drift_time_input: self.drift.time_input.or(self.default_time_input()),
            diffusion_time_input: self.diffusion.time_input.or(self.default_time_input()),
            form: self.form,
        }
    }

    pub fn sde_config(&self, state_dim: usize, n_paths: usize) -> SdeConfig {
        SdeConfig { flow_time: self.sde.flow_time, n_steps: self.sde.n_steps, n_paths, state_dim, form: self.form }
    }

    pub fn trajectory_config(&self, n_paths: usize) -> TrajectoryConfig {
        TrajectoryConfig { n_paths, max_dt: self.sde.max_dt, time_scale: 1.0 }
    }

    pub fn sgld_config(&self, n_data: usize, seed: u64) -> SgldConfig {
        let g = &self.sgld;
        SgldConfig {
            step0: g.step0,
            decay_interval: g.decay_interval,
            batch_size: g.batch_size.or(n_data.min(32)),
            iterations: g.iterations,
            burn_in: g.burn_in.or(g.iterations / 2),
            thinning: g.thinning,
            seed,
            inject_noise: true,
            decay: true,
            max_divergence_fraction: g.max_divergence_fraction,
        }
    }

    pub fn target_columns(&self) -> Vec<String> {
        self.data.target.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    }
}
