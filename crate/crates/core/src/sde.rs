//! Euler-Maruyama simulation of the activation-map SDE
//! `dh = m(h, t) dt + L(h, t) dW`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::grad::{Graph, NodeId};
use crate::math;
use crate::nets::{Bound, DbnnArch, DiffusionForm};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Any state coordinate beyond this magnitude counts as a diverged path.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    /// Flow time `T`.
    pub flow_time: f64,
    pub n_steps: usize,
    /// Monte Carlo paths `M` per input.
    pub n_paths: usize,
    pub state_dim: usize,
    pub form: DiffusionForm,
}

impl SdeConfig {
    pub fn new(state_dim: usize, form: DiffusionForm) -> Self {
        Self { flow_time: 1.0, n_steps: 20, n_paths: 8, state_dim, form }
    }

    pub fn dt(&self) -> f64 {
        self.flow_time / self.n_steps as f64
    }

    pub fn rank(&self) -> usize {
        self.form.rank(self.state_dim)
    }

    pub fn validate(&self) -> Result<()> {
        use alloc::format;
        if !(self.flow_time > 0.0) || !self.flow_time.is_finite() {
            return Err(Error::InvalidConfig(format!("flow time must be positive, got {}", self.flow_time)));
        }
        if self.n_steps == 0 || self.n_paths == 0 || self.state_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "n_steps, n_paths and state_dim must be >= 1 (got {}, {}, {})",
                self.n_steps, self.n_paths, self.state_dim
            )));
        }
        self.form.validate(self.state_dim)
    }
}

/// Identifies one independent noise stream family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub iteration: u64,
    pub element: u64,
}

/// Pre-drawn Wiener increments, `[paths x steps x rank]`, each `N(0, dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerNoise {
    n_paths: usize,
    n_steps: usize,
    rank: usize,
    dt: f64,
    increments: Vec<f64>,
}

impl WienerNoise {
    /// Path `m` draws from its own stream keyed by `(iteration, element, m)`.
    pub fn sample(n_paths: usize, n_steps: usize, rank: usize, dt: f64, key: NoiseKey) -> Self {
        let sd = math::sqrt(dt);
        let mut increments = Vec::with_capacity(n_paths * n_steps * rank);
        for m in 0..n_paths {
            let mut r = rng::stream(key.seed, Purpose::Wiener, key.iteration, key.element, m as u64);
            increments.extend((0..n_steps * rank).map(|_| sd * rng::standard_normal(&mut r)));
        }
        Self { n_paths, n_steps, rank, dt, increments }
    }

    /// All-zero increments; useful for deterministic limits.
    pub fn zeros(n_paths: usize, n_steps: usize, rank: usize, dt: f64) -> Self {
        Self { n_paths, n_steps, rank, dt, increments: vec![0.0; n_paths * n_steps * rank] }
    }

    pub fn from_increments(n_paths: usize, n_steps: usize, rank: usize, dt: f64, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != n_paths * n_steps * rank {
            return Err(Error::Dimension {
                what: "wiener increments",
                expected: n_paths * n_steps * rank,
                found: increments.len(),
            });
        }
        Ok(Self { n_paths, n_steps, rank, dt, increments })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.n_steps + step) * self.rank;
        &self.increments[off..off + self.rank]
    }
}

pub fn sample_noise(config: &SdeConfig, key: NoiseKey) -> WienerNoise {
    WienerNoise::sample(config.n_paths, config.n_steps, config.rank(), config.dt(), key)
}

/// Drift and diffusion of an SDE in plain arithmetic.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn rank(&self) -> usize;
    fn drift(&self, h: &[f64], t: f64) -> Result<Vec<f64>>;
    /// `L(h, t) dw`.
    fn diffusion_apply(&self, h: &[f64], t: f64, dw: &[f64]) -> Result<Vec<f64>>;
}

/// The learned networks. Time is fed to them as `t / time_scale`.
#[derive(Debug, Clone, Copy)]
pub struct NetDynamics<'a> {
    pub arch: &'a DbnnArch,
    pub values: &'a [f64],
    pub time_scale: f64,
}

impl Dynamics for NetDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.arch.state_dim()
    }

    fn rank(&self) -> usize {
        self.arch.rank()
    }

    fn drift(&self, h: &[f64], t: f64) -> Result<Vec<f64>> {
        self.arch.drift_eval(self.values, h, t / self.time_scale)
    }

    fn diffusion_apply(&self, h: &[f64], t: f64, dw: &[f64]) -> Result<Vec<f64>> {
        self.arch.diffusion_apply_eval(self.values, h, t / self.time_scale, dw)
    }
}

/// Hand-specified dynamics from closures.
pub struct FnDynamics<F, G> {
    pub state_dim: usize,
    pub rank: usize,
    pub drift: F,
    pub diffusion_apply: G,
}

impl<F, G> Dynamics for FnDynamics<F, G>
where
    F: Fn(&[f64], f64) -> Vec<f64>,
    G: Fn(&[f64], f64, &[f64]) -> Vec<f64>,
{
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn rank(&self) -> usize {
        self.rank
    }

    fn drift(&self, h: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok((self.drift)(h, t))
    }

    fn diffusion_apply(&self, h: &[f64], t: f64, dw: &[f64]) -> Result<Vec<f64>> {
        Ok((self.diffusion_apply)(h, t, dw))
    }
}

/// Where a step sits inside a batch, for error reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepIndex {
    pub element: usize,
    pub path: usize,
    pub step: usize,
}

fn diverged(h: &[f64]) -> bool {
    h.iter().any(|x| !(x.abs() <= DIVERGENCE_BOUND))
}

/// One Euler-Maruyama update `h + m(h,t) dt + L(h,t) dw`.
pub fn em_step<D: Dynamics + ?Sized>(dynamics: &D, h: &[f64], t: f64, dt: f64, dw: &[f64], at: StepIndex) -> Result<Vec<f64>> {
    let drift = dynamics.drift(h, t)?;
    let noise = dynamics.diffusion_apply(h, t, dw)?;
    let next: Vec<f64> = h
        .iter()
        .zip(&drift)
        .zip(&noise)
        .map(|((&x, &m), &s)| x + m * dt + s)
        .collect();
    if diverged(&next) {
        return Err(Error::Divergence { element: at.element, path: at.path, step: at.step });
    }
    Ok(next)
}

/// Full trajectories `[elements x paths x (steps + 1) x D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    n_elements: usize,
    n_paths: usize,
    n_steps: usize,
    dim: usize,
    states: Vec<f64>,
}

impl PathBatch {
    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn state(&self, element: usize, path: usize, step: usize) -> &[f64] {
        let off = ((element * self.n_paths + path) * (self.n_steps + 1) + step) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn terminal(&self, element: usize, path: usize) -> &[f64] {
        self.state(element, path, self.n_steps)
    }

    /// Terminal states of one element, one vector per path.
    pub fn terminals(&self, element: usize) -> Vec<Vec<f64>> {
        (0..self.n_paths).map(|m| self.terminal(element, m).to_vec()).collect()
    }
}

/// Simulates every path of every element from `t = 0` to the flow time.
/// `noise[k]` holds the increments of element `k`.
pub fn simulate<D: Dynamics + ?Sized>(x0: &[Vec<f64>], config: &SdeConfig, noise: &[WienerNoise], dynamics: &D) -> Result<PathBatch> {
    config.validate()?;
    if noise.len() != x0.len() {
        return Err(Error::Dimension { what: "noise batch", expected: x0.len(), found: noise.len() });
    }
    let (m_paths, steps, d) = (config.n_paths, config.n_steps, config.state_dim);
    let mut states = Vec::with_capacity(x0.len() * m_paths * (steps + 1) * d);
    for (k, (x, w)) in x0.iter().zip(noise).enumerate() {
        check_noise(w, m_paths, steps, dynamics.rank())?;
        if x.len() != d {
            return Err(Error::Dimension { what: "initial state", expected: d, found: x.len() });
        }
        for m in 0..m_paths {
            let mut h = x.clone();
            states.extend_from_slice(&h);
            for i in 0..steps {
                let at = StepIndex { element: k, path: m, step: i };
                h = em_step(dynamics, &h, i as f64 * w.dt(), w.dt(), w.increment(m, i), at)?;
                states.extend_from_slice(&h);
            }
        }
    }
    Ok(PathBatch { n_elements: x0.len(), n_paths: m_paths, n_steps: steps, dim: d, states })
}

fn check_noise(w: &WienerNoise, paths: usize, steps: usize, rank: usize) -> Result<()> {
    if w.n_paths() < paths || w.n_steps() != steps || w.rank() != rank {
        return Err(Error::Dimension {
            what: "noise (paths*steps*rank)",
            expected: paths * steps * rank,
            found: w.n_paths() * w.n_steps() * w.rank(),
        });
    }
    Ok(())
}

/// Terminal states only, starting at `(t0, x0)` and taking
/// `noise.n_steps()` steps of `noise.dt()`.
pub fn terminal_states<D: Dynamics + ?Sized>(x0: &[f64], t0: f64, noise: &WienerNoise, dynamics: &D, element: usize) -> Result<Vec<Vec<f64>>> {
    if x0.len() != dynamics.state_dim() {
        return Err(Error::Dimension { what: "initial state", expected: dynamics.state_dim(), found: x0.len() });
    }
    let mut states = vec![x0.to_vec(); noise.n_paths()];
    advance(&mut states, t0, noise, dynamics, element)?;
    Ok(states)
}

/// Moves each path state `states[m]` forward by `noise.n_steps()` steps
/// starting at time `t0`.
pub fn advance<D: Dynamics + ?Sized>(states: &mut [Vec<f64>], t0: f64, noise: &WienerNoise, dynamics: &D, element: usize) -> Result<()> {
    check_noise(noise, states.len(), noise.n_steps(), dynamics.rank())?;
    let dt = noise.dt();
    for (m, h) in states.iter_mut().enumerate() {
        for i in 0..noise.n_steps() {
            let at = StepIndex { element, path: m, step: i };
            *h = em_step(dynamics, h, t0 + i as f64 * dt, dt, noise.increment(m, i), at)?;
        }
    }
    Ok(())
}

/// Taped simulation through the learned networks. Returns the terminal node
/// of each path; gradients flow through drift and diffusion with the noise
/// held fixed.
#[allow(clippy::too_many_arguments)]
pub fn simulate_node(
    g: &mut Graph,
    arch: &DbnnArch,
    bound: &Bound,
    x0: &[f64],
    t0: f64,
    time_scale: f64,
    noise: &WienerNoise,
    element: usize,
) -> Result<Vec<NodeId>> {
    if x0.len() != arch.state_dim() {
        return Err(Error::Dimension { what: "initial state", expected: arch.state_dim(), found: x0.len() });
    }
    check_noise(noise, noise.n_paths(), noise.n_steps(), arch.rank())?;
    let dt = noise.dt();
    let start = g.vector(x0);
    let mut terminals = Vec::with_capacity(noise.n_paths());
    for m in 0..noise.n_paths() {
        let mut h = start;
        for i in 0..noise.n_steps() {
            let tau = (t0 + i as f64 * dt) / time_scale;
            let drift = arch.drift_node(g, bound, h, tau)?;
            let drift = g.scale(drift, dt);
            let shock = arch.diffusion_apply_node(g, bound, h, tau, noise.increment(m, i))?;
            let moved = g.add(h, drift)?;
            h = g.add(moved, shock)?;
            if diverged(g.value(h)) {
                return Err(Error::Divergence { element, path: m, step: i });
            }
        }
        terminals.push(h);
    }
    Ok(terminals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(c: f64, s: f64) -> impl Dynamics {
        FnDynamics {
            state_dim: 1,
            rank: 1,
            drift: move |_: &[f64], _| vec![c],
            diffusion_apply: move |_: &[f64], _, dw: &[f64]| vec![s * dw[0]],
        }
    }

    #[test]
    fn zero_dynamics_leave_state_unchanged() {
        let h = em_step(&constant(0.0, 0.0), &[1.5], 0.0, 0.1, &[0.7], StepIndex::default()).unwrap();
        assert_eq!(h, vec![1.5]);
    }

    #[test]
    fn constant_drift_moves_by_c_dt() {
        let h = em_step(&constant(2.0, 0.0), &[1.0], 0.0, 0.1, &[0.0], StepIndex::default()).unwrap();
        assert!((h[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn unit_diffusion_adds_increment() {
        let h = em_step(&constant(0.0, 1.0), &[1.0], 0.0, 0.1, &[0.25], StepIndex::default()).unwrap();
        assert_eq!(h, vec![1.25]);
    }

    #[test]
    fn divergence_reports_location() {
        let err = em_step(&constant(1e9, 0.0), &[0.0], 0.0, 1.0, &[0.0], StepIndex { element: 2, path: 1, step: 4 });
        assert_eq!(err, Err(Error::Divergence { element: 2, path: 1, step: 4 }));
        let nan = em_step(&constant(f64::NAN, 0.0), &[0.0], 0.0, 1.0, &[0.0], StepIndex::default());
        assert!(nan.is_err());
    }

    #[test]
    fn single_step_simulation_matches_em_step() {
        let cfg = SdeConfig { flow_time: 0.5, n_steps: 1, n_paths: 3, state_dim: 1, form: DiffusionForm::Diagonal };
        let noise = sample_noise(&cfg, NoiseKey { seed: 1, iteration: 0, element: 0 });
        let dynamics = constant(0.3, 0.8);
        let batch = simulate(&[vec![0.2]], &cfg, core::slice::from_ref(&noise), &dynamics).unwrap();
        for m in 0..3 {
            let direct = em_step(&dynamics, &[0.2], 0.0, 0.5, noise.increment(m, 0), StepIndex::default()).unwrap();
            assert_eq!(batch.terminal(0, m), direct.as_slice());
            assert_eq!(batch.state(0, m, 0), &[0.2]);
        }
    }

    #[test]
    fn noise_replays_per_key() {
        let cfg = SdeConfig { flow_time: 1.0, n_steps: 5, n_paths: 4, state_dim: 2, form: DiffusionForm::Cholesky };
        let key = NoiseKey { seed: 3, iteration: 7, element: 1 };
        assert_eq!(sample_noise(&cfg, key), sample_noise(&cfg, key));
        assert_ne!(sample_noise(&cfg, key), sample_noise(&cfg, NoiseKey { element: 2, ..key }));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SdeConfig::new(2, DiffusionForm::Cholesky);
        cfg.flow_time = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = SdeConfig { form: DiffusionForm::LowRank(3), ..SdeConfig::new(2, DiffusionForm::Diagonal) };
        assert!(cfg.validate().is_err());
    }
}
