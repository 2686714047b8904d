//! Observation model, simulated likelihood and weight priors.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::grad::{Graph, NodeId};
use crate::math::{self, LN_2PI};
use crate::nets::{Bound, DbnnArch};
use crate::params::{Block, BlockKind, ParamSet};
use crate::sde::{self, Dynamics, NoiseKey, WienerNoise};
use crate::{Error, Result};

/// Isotropic Gaussian log-density `sum_o log N(y_o | mean_o, sigma^2)`.
pub fn gaussian_loglik(y: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let sq: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let o = y.len() as f64;
    -0.5 * o * (LN_2PI + 2.0 * math::ln(sigma)) - sq / (2.0 * sigma * sigma)
}

/// Taped [`gaussian_loglik`] with `sigma = exp(log_sigma)`.
pub fn gaussian_loglik_node(g: &mut Graph, y: &[f64], mean: NodeId, log_sigma: NodeId) -> Result<NodeId> {
    let target = g.vector(y);
    let resid = g.sub(target, mean)?;
    let sq = g.square(resid);
    let sq = g.sum(sq);
    let neg2 = g.scale(log_sigma, -2.0);
    let precision = g.exp(neg2);
    let quad = g.mul(precision, sq)?;
    let quad = g.scale(quad, -0.5);
    let o = y.len() as f64;
    let norm = g.scale(log_sigma, -o);
    let ll = g.add(quad, norm)?;
    Ok(g.add_const(ll, -0.5 * o * LN_2PI))
}

/// `log((1/M) sum_m exp(l_m))`.
pub fn log_mean_exp(lls: &[f64]) -> Result<f64> {
    if lls.is_empty() {
        return Err(Error::Empty("path set"));
    }
    let lse = math::logsumexp(lls);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateLikelihood);
    }
    Ok(lse - math::ln(lls.len() as f64))
}

/// Simulated log-likelihood of `y` given terminal states of `M` paths.
pub fn simulated_loglik<H>(y: &[f64], terminals: &[Vec<f64>], head: H, sigma: f64) -> Result<f64>
where
    H: Fn(&[f64]) -> Vec<f64>,
{
    let lls: Vec<f64> = terminals.iter().map(|h| gaussian_loglik(y, &head(h), sigma)).collect();
    log_mean_exp(&lls)
}

/// Taped [`log_mean_exp`] over per-path log-likelihood nodes.
pub fn log_mean_exp_node(g: &mut Graph, lls: &[NodeId]) -> Result<NodeId> {
    if lls.is_empty() {
        return Err(Error::Empty("path set"));
    }
    let stacked = g.concat(lls)?;
    let lse = g.logsumexp(stacked);
    if g.scalar(lse) == f64::NEG_INFINITY {
        return Err(Error::DegenerateLikelihood);
    }
    Ok(g.add_const(lse, -math::ln(lls.len() as f64)))
}

/// Taped simulated log-likelihood of one regression pair `(x, y)`: paths
/// start at `h(0) = x`, run for the flow time, and pass through the head.
#[allow(clippy::too_many_arguments)]
pub fn regression_loglik_node(
    g: &mut Graph,
    arch: &DbnnArch,
    bound: &Bound,
    x: &[f64],
    y: &[f64],
    flow_time: f64,
    noise: &WienerNoise,
    element: usize,
) -> Result<NodeId> {
    let terminals = sde::simulate_node(g, arch, bound, x, 0.0, flow_time, noise, element)?;
    let log_sigma = arch.log_obs_noise_node(bound);
    let mut lls = Vec::with_capacity(terminals.len());
    for h in terminals {
        let mean = arch.head_node(g, bound, h)?;
        lls.push(gaussian_loglik_node(g, y, mean, log_sigma)?);
    }
    log_mean_exp_node(g, &lls)
}

/// Discretization of the time-series likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub n_paths: usize,
    /// Largest Euler sub-step between two observations.
    pub max_dt: f64,
    /// Network time input is `t / time_scale`.
    pub time_scale: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { n_paths: 8, max_dt: 0.05, time_scale: 1.0 }
    }
}

/// Number of Euler sub-steps covering a gap.
pub fn sub_steps(gap: f64, max_dt: f64) -> usize {
    (math::ceil(gap / max_dt - 1e-9) as usize).max(1)
}

/// Increments for segment `j -> j + 1`, keyed by `element = j`.
pub fn segment_noise(traj: &Trajectory, j: usize, rank: usize, config: &TrajectoryConfig, seed: u64, iteration: u64) -> WienerNoise {
    let gap = traj.times[j + 1] - traj.times[j];
    let steps = sub_steps(gap, config.max_dt);
    let key = NoiseKey { seed, iteration, element: j as u64 };
    WienerNoise::sample(config.n_paths, steps, rank, gap / steps as f64, key)
}

/// Teacher-forced trajectory log-likelihood: every segment starts all paths
/// at the observed `x_j`, simulates to `t_{j+1}`, and scores `x_{j+1}` with
/// the simulated likelihood. Returns 0 when there is nothing after `x_0`.
pub fn trajectory_loglik<D: Dynamics + ?Sized>(
    traj: &Trajectory,
    dynamics: &D,
    sigma: f64,
    config: &TrajectoryConfig,
    seed: u64,
) -> Result<f64> {
    traj.check()?;
    let mut total = 0.0;
    for j in 0..traj.len().saturating_sub(1) {
        let noise = segment_noise(traj, j, dynamics.rank(), config, seed, 0);
        let ends = sde::terminal_states(&traj.values[j], traj.times[j], &noise, dynamics, j)?;
        total += simulated_loglik(&traj.values[j + 1], &ends, |h| h.to_vec(), sigma)?;
    }
    Ok(total)
}

/// Taped log-likelihood of segment `j -> j + 1`.
pub fn segment_loglik_node(
    g: &mut Graph,
    arch: &DbnnArch,
    bound: &Bound,
    traj: &Trajectory,
    j: usize,
    config: &TrajectoryConfig,
    noise: &WienerNoise,
) -> Result<NodeId> {
    let ends = sde::simulate_node(g, arch, bound, &traj.values[j], traj.times[j], config.time_scale, noise, j)?;
    let log_sigma = arch.log_obs_noise_node(bound);
    let mut lls = Vec::with_capacity(ends.len());
    for h in ends {
        let mean = arch.head_node(g, bound, h)?;
        lls.push(gaussian_loglik_node(g, &traj.values[j + 1], mean, log_sigma)?);
    }
    log_mean_exp_node(g, &lls)
}

/// Zero-mean Gaussian prior standard deviations per parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Drift net and readout weights and biases.
    pub weight_std: f64,
    /// Diffusion net weight matrices (blocks named `diffusion.w*`); its
    /// biases use `weight_std`.
    pub diffusion_weight_std: f64,
    pub log_obs_noise_std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { weight_std: 1.0, diffusion_weight_std: 1.0, log_obs_noise_std: 1.0 }
    }
}

impl PriorSpec {
    /// The same standard deviation for every network block.
    pub fn uniform(weight_std: f64, log_obs_noise_std: f64) -> Self {
        Self { weight_std, diffusion_weight_std: weight_std, log_obs_noise_std }
    }

    fn std_for(&self, block: &Block) -> f64 {
        match block.kind {
            BlockKind::ObsNoise => self.log_obs_noise_std,
            BlockKind::Weight if block.name.starts_with("diffusion.") => self.diffusion_weight_std,
            BlockKind::Weight | BlockKind::Bias => self.weight_std,
        }
    }
}

/// `sum_p -p^2 / (2 sigma_p^2)` (normalizing constants dropped). When `grad`
/// is given, `-p / sigma_p^2` is added to it.
pub fn log_prior(params: &ParamSet, spec: &PriorSpec, mut grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    for block in params.layout().blocks() {
        let sd = spec.std_for(block);
        let var = sd * sd;
        for i in block.range() {
            let p = params.values()[i];
            total -= p * p / (2.0 * var);
            if let Some(g) = grad.as_deref_mut() {
                g[i] -= p / var;
            }
        }
    }
    total
}
