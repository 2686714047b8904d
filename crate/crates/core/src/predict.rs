//! Posterior predictive distributions and evaluation metrics.
//!
//! For each posterior snapshot the terminal state distribution `p(h(T) | x)`
//! is summarized by the sample mean and covariance of `M_eval` simulated
//! paths, then pushed through the linear head:
//!
//! ```text
//! mean_o = sum_i a_oi m_i + b_o        var_o = sum_ij a_oi a_oj S_ij
//! ```
//!
//! Snapshots are combined as an equally weighted mixture (law of total
//! variance), and the observation noise is added on top.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::likelihood::{sub_steps, TrajectoryConfig};
use crate::math::{self, LN_2PI};
use crate::nets::DbnnArch;
use crate::sde::{self, NetDynamics, NoiseKey, SdeConfig, WienerNoise};
use crate::sgld::PosteriorSamples;
use crate::{Error, Result};

/// Linear map `R^D -> R^O`, `a` row-major `O x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl RegressionHead {
    pub fn identity(d: usize) -> Self {
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = 1.0;
        }
        Self { a, b: vec![0.0; d] }
    }

    pub fn out_dim(&self) -> usize {
        self.b.len()
    }
}

/// Mean `a m + b` and per-output variance `a_o^T S a_o`.
pub fn moment_propagate(m: &[f64], cov: &[f64], head: &RegressionHead) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = m.len();
    if cov.len() != d * d {
        return Err(Error::Dimension { what: "covariance", expected: d * d, found: cov.len() });
    }
    if head.a.len() != head.out_dim() * d {
        return Err(Error::Dimension { what: "head weights", expected: head.out_dim() * d, found: head.a.len() });
    }
    for i in 0..d {
        for j in 0..i {
            let (x, y) = (cov[i * d + j], cov[j * d + i]);
            if (x - y).abs() > 1e-10 * x.abs().max(y.abs()).max(1.0) {
                return Err(Error::AsymmetricCovariance { row: i, col: j });
            }
        }
    }
    let mut mean = head.b.clone();
    let mut var = vec![0.0; head.out_dim()];
    for (o, row) in head.a.chunks_exact(d).enumerate() {
        mean[o] += row.iter().zip(m).map(|(a, x)| a * x).sum::<f64>();
        let mut v = 0.0;
        for i in 0..d {
            let ci = &cov[i * d..(i + 1) * d];
            v += row[i] * row.iter().zip(ci).map(|(a, c)| a * c).sum::<f64>();
        }
        var[o] = v.max(0.0);
    }
    Ok((mean, var))
}

/// Sample mean and unbiased sample covariance (row-major `D x D`), accumulated
/// relative to the first path so that identical paths give exactly zero.
pub fn empirical_terminal_moments(states: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = states.len();
    if m < 2 {
        return Err(Error::Dimension { what: "paths for covariance", expected: 2, found: m });
    }
    let origin = &states[0];
    let d = origin.len();
    let mut shift = vec![0.0; d];
    let mut cov = vec![0.0; d * d];
    for s in states {
        for i in 0..d {
            let di = s[i] - origin[i];
            shift[i] += di;
            for j in 0..=i {
                cov[i * d + j] += di * (s[j] - origin[j]);
            }
        }
    }
    shift.iter_mut().for_each(|a| *a /= m as f64);
    for i in 0..d {
        for j in 0..=i {
            let c = (cov[i * d + j] - m as f64 * shift[i] * shift[j]) / (m - 1) as f64;
            cov[i * d + j] = c;
            cov[j * d + i] = c;
        }
    }
    let mean = origin.iter().zip(&shift).map(|(o, s)| o + s).collect();
    Ok((mean, cov))
}

/// Predictive moments for one point, per output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveResult {
    pub mean: Vec<f64>,
    /// Spread of snapshot means.
    pub epistemic_var: Vec<f64>,
    /// Snapshot-averaged path (diffusion) variance.
    pub path_var: Vec<f64>,
    /// Snapshot-averaged observation noise variance.
    pub obs_var: f64,
    pub total_var: Vec<f64>,
    pub n_snapshots: usize,
}

impl PredictiveResult {
    pub fn total_std(&self) -> Vec<f64> {
        self.total_var.iter().map(|&v| math::sqrt(v)).collect()
    }

    pub fn epistemic_std(&self) -> Vec<f64> {
        self.epistemic_var.iter().map(|&v| math::sqrt(v)).collect()
    }
}

/// One mixture component: predictive mean, path variance and observation
/// noise variance of a single snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub obs_var: f64,
}

/// Equally weighted mixture by the law of total variance.
pub fn mixture(components: &[Component]) -> Result<PredictiveResult> {
    let first = components.first().ok_or(Error::Empty("mixture"))?;
    let s = components.len() as f64;
    let o = first.mean.len();
    let mut mean = vec![0.0; o];
    let mut path_var = vec![0.0; o];
    let mut obs_var = 0.0;
    for c in components {
        for k in 0..o {
            mean[k] += c.mean[k] / s;
            path_var[k] += c.var[k] / s;
        }
        obs_var += c.obs_var / s;
    }
    let mut epistemic_var = vec![0.0; o];
    for c in components {
        for k in 0..o {
            let dev = c.mean[k] - mean[k];
            epistemic_var[k] += dev * dev / s;
        }
    }
    let total_var = (0..o).map(|k| epistemic_var[k] + path_var[k] + obs_var).collect();
    Ok(PredictiveResult { mean, epistemic_var, path_var, obs_var, total_var, n_snapshots: components.len() })
}

fn head_of(arch: &DbnnArch, values: &[f64]) -> RegressionHead {
    match arch.head_values(values) {
        Some((a, b)) => RegressionHead { a: a.to_vec(), b: b.to_vec() },
        None => RegressionHead::identity(arch.state_dim()),
    }
}

fn component(arch: &DbnnArch, values: &[f64], states: &[Vec<f64>]) -> Result<Component> {
    let (m, cov) = empirical_terminal_moments(states)?;
    let (mean, var) = moment_propagate(&m, &cov, &head_of(arch, values))?;
    let sd = arch.obs_std(values);
    Ok(Component { mean, var, obs_var: sd * sd })
}

fn survivors(components: Vec<Component>, total: usize) -> Result<PredictiveResult> {
    if components.is_empty() || 2 * components.len() < total {
        return Err(Error::InsufficientSnapshots { surviving: components.len(), total });
    }
    mixture(&components)
}

/// Posterior predictive at one input. `sde.n_paths` is the number of
/// evaluation paths per snapshot; `point` keys the noise streams. All
/// snapshots share the same increments, so identical snapshots agree exactly.
pub fn posterior_predictive(
    x: &[f64],
    samples: &PosteriorSamples,
    arch: &DbnnArch,
    sde: &SdeConfig,
    seed: u64,
    point: usize,
) -> Result<PredictiveResult> {
    if x.len() != arch.state_dim() {
        return Err(Error::Dimension { what: "input", expected: arch.state_dim(), found: x.len() });
    }
    let mut comps = Vec::with_capacity(samples.len());
    for snap in &samples.snapshots {
        let dynamics = NetDynamics { arch, values: &snap.values, time_scale: sde.flow_time };
        let key = NoiseKey { seed, iteration: 0, element: point as u64 };
        let noise = sde::sample_noise(sde, key);
        match sde::terminal_states(x, 0.0, &noise, &dynamics, point) {
            Ok(states) => comps.push(component(arch, &snap.values, &states)?),
            Err(Error::Divergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    survivors(comps, samples.len())
}

/// How time-series predictions are conditioned on the observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchoring {
    /// Start from the latest observation strictly before each grid time.
    LastObservation,
    /// Start every path at the first observation and run forward.
    FreeRunning,
}

impl core::fmt::Display for Anchoring {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Anchoring::LastObservation => "last",
            Anchoring::FreeRunning => "free",
        })
    }
}

impl core::str::FromStr for Anchoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Anchoring::LastObservation),
            "free" => Ok(Anchoring::FreeRunning),
            _ => Err(Error::InvalidConfig(alloc::format!("unknown anchoring `{s}` (expected `last` or `free`)"))),
        }
    }
}

/// Predictive moments on a sorted time grid. Grid times at or before the
/// first observation report that observation with zero path variance.
pub fn trajectory_predictive(
    traj: &Trajectory,
    grid: &[f64],
    samples: &PosteriorSamples,
    arch: &DbnnArch,
    config: &TrajectoryConfig,
    mode: Anchoring,
    seed: u64,
) -> Result<Vec<PredictiveResult>> {
    traj.check()?;
    if traj.dim() != arch.state_dim() {
        return Err(Error::Dimension { what: "trajectory", expected: arch.state_dim(), found: traj.dim() });
    }
    if let Some(j) = grid.windows(2).position(|w| !(w[1] >= w[0])) {
        return Err(Error::NonIncreasingTimes { index: j + 1 });
    }
    let m = config.n_paths;
    let rank = arch.rank();
    let mut per_point: Vec<Vec<Component>> = vec![Vec::new(); grid.len()];
    for snap in &samples.snapshots {
        let dynamics = NetDynamics { arch, values: &snap.values, time_scale: config.time_scale };
        let key = |element: usize| NoiseKey { seed, iteration: 0, element: element as u64 };
        let step = |states: &mut [Vec<f64>], from: f64, to: f64, element: usize| -> Result<()> {
            if to <= from {
                return Ok(());
            }
            let n = sub_steps(to - from, config.max_dt);
            let noise = WienerNoise::sample(m, n, rank, (to - from) / n as f64, key(element));
            sde::advance(states, from, &noise, &dynamics, element)
        };
        match mode {
            Anchoring::LastObservation => {
                for (g, &t) in grid.iter().enumerate() {
                    let j = traj.times.iter().rposition(|&tj| tj < t).unwrap_or(0);
                    let mut states = vec![traj.values[j].clone(); m];
                    match step(&mut states, traj.times[j], t, g) {
                        Ok(()) => per_point[g].push(component(arch, &snap.values, &states)?),
                        Err(Error::Divergence { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            Anchoring::FreeRunning => {
                let mut states = vec![traj.values[0].clone(); m];
                let mut now = traj.times[0];
                for (g, &t) in grid.iter().enumerate() {
                    match step(&mut states, now, t, g) {
                        Ok(()) => {}
                        Err(Error::Divergence { .. }) => break,
                        Err(e) => return Err(e),
                    }
                    now = now.max(t);
                    per_point[g].push(component(arch, &snap.values, &states)?);
                }
            }
        }
    }
    per_point.into_iter().map(|c| survivors(c, samples.len())).collect()
}

/// Mean Gaussian log predictive density in original target units. `y` and
/// the predictions are in standardized units; `target_std` undoes the
/// scaling (one `-ln s` per output).
pub fn test_log_likelihood(y: &[Vec<f64>], preds: &[PredictiveResult], target_std: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if y.len() != preds.len() {
        return Err(Error::Dimension { what: "predictions", expected: y.len(), found: preds.len() });
    }
    let log_scale: f64 = target_std.iter().map(|&s| math::ln(s)).sum();
    let mut total = 0.0;
    for (i, (yi, p)) in y.iter().zip(preds).enumerate() {
        for ((&t, &mu), &v) in yi.iter().zip(&p.mean).zip(&p.total_var) {
            if !(v > 0.0) {
                return Err(Error::ZeroVariance { index: i });
            }
            total += -0.5 * (LN_2PI + math::ln(v)) - (t - mu) * (t - mu) / (2.0 * v);
        }
        total -= log_scale;
    }
    Ok(total / y.len() as f64)
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("prediction set"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Dimension { what: "targets", expected: predictions.len(), found: targets.len() });
    }
    let sq: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(math::sqrt(sq / predictions.len() as f64))
}
