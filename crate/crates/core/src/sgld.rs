//! Minibatch SGLD over the simulated log-likelihood.
//!
//! Each iteration draws fresh Wiener increments, differentiates the
//! simulated log-likelihood of every minibatch element through its already
//! drawn paths, and takes the Langevin step
//!
//! ```text
//! theta <- theta + eps/2 * (grad log p(theta) + N/K * sum_k grad log p~_k) + N(0, eps I)
//! ```
//!
//! `eps` halves every `decay_interval` iterations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::grad::Graph;
use crate::likelihood::{self, PriorSpec, TrajectoryConfig};
use crate::math;
use crate::nets::{Bound, DbnnArch};
use crate::params::{ParamLayout, ParamSet};
use crate::rng::{self, Purpose};
use crate::sde::{NoiseKey, SdeConfig, WienerNoise};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    pub step0: f64,
    /// Iterations between step-size halvings.
    pub decay_interval: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Test hook: `false` removes the injected Gaussian noise.
    pub inject_noise: bool,
    /// Test hook: `false` freezes the step size at `step0`.
    pub decay: bool,
    /// Fraction of iterations that may be skipped for path divergence
    /// before the run aborts.
    pub max_divergence_fraction: f64,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            step0: 1e-4,
            decay_interval: 2000,
            batch_size: 32,
            iterations: 20_000,
            burn_in: 10_000,
            thinning: 50,
            seed: 0,
            inject_noise: true,
            decay: true,
            max_divergence_fraction: 0.05,
        }
    }
}

impl SgldConfig {
    /// Every violated constraint, one message each.
    pub fn problems(&self, n_data: usize) -> Vec<alloc::string::String> {
        let mut out = Vec::new();
        if !(self.step0 > 0.0) {
            out.push(format!("sgld.step0 must be > 0 (got {})", self.step0));
        }
        if self.decay_interval == 0 {
            out.push("sgld.decay_interval must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > n_data {
            out.push(format!("sgld.batch_size must be in 1..={n_data} (got {})", self.batch_size));
        }
        if self.iterations == 0 {
            out.push("sgld.iterations must be >= 1".into());
        }
        if self.burn_in >= self.iterations {
            out.push(format!("sgld.burn_in ({}) must be < sgld.iterations ({})", self.burn_in, self.iterations));
        }
        if self.thinning == 0 {
            out.push("sgld.thinning must be >= 1".into());
        }
        out
    }

    pub fn validate(&self, n_data: usize) -> Result<()> {
        match self.problems(n_data).into_iter().next() {
            Some(p) => Err(Error::InvalidConfig(p)),
            None => Ok(()),
        }
    }

    pub fn expected_snapshots(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}

/// `step0 * 2^-floor(i / decay_interval)`: the step size in force after the
/// halving check of iteration `i`. Iteration `i` itself uses
/// `step_size(i - 1)`.
pub fn step_size(i: usize, config: &SgldConfig) -> f64 {
    if !config.decay {
        return config.step0;
    }
    let halvings = (i / config.decay_interval).min(1100) as i32;
    config.step0 * libm::exp2(-f64::from(halvings))
}

/// One Langevin update in place. `lik_grad_sum` is the sum of per-element
/// gradients over the minibatch of size `k`.
pub fn sgld_update<R: RngCore>(
    params: &mut ParamSet,
    prior_grad: &[f64],
    lik_grad_sum: &[f64],
    eps: f64,
    n: usize,
    k: usize,
    noise: Option<&mut R>,
) -> Result<()> {
    check_finite(params.layout(), prior_grad)?;
    check_finite(params.layout(), lik_grad_sum)?;
    let scale = n as f64 / k as f64;
    let sd = math::sqrt(eps);
    let mut noise = noise;
    for ((p, gp), gl) in params.values_mut().iter_mut().zip(prior_grad).zip(lik_grad_sum) {
        *p += 0.5 * eps * (gp + scale * gl);
        if let Some(r) = noise.as_deref_mut() {
            *p += sd * rng::standard_normal(r);
        }
    }
    Ok(())
}

fn check_finite(layout: &ParamLayout, g: &[f64]) -> Result<()> {
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        let block = layout.owner(i).map_or_else(|| format!("#{i}"), |b| b.name.clone());
        return Err(Error::NonFiniteGradient { block });
    }
    Ok(())
}

/// A posterior whose likelihood factorizes over `n_data` elements.
pub trait Model: Sync {
    fn n_data(&self) -> usize;

    /// Simulated log-likelihood of element `index` with the Wiener noise of
    /// `iteration`; adds its parameter gradient into `grad`.
    fn element_loglik(&self, params: &ParamSet, index: usize, iteration: u64, grad: &mut [f64]) -> Result<f64>;

    /// Log prior; adds its gradient into `grad`.
    fn log_prior(&self, params: &ParamSet, grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub step_size: f64,
    pub values: Vec<f64>,
}

/// Thinned post-burn-in parameter draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub layout: ParamLayout,
    pub snapshots: Vec<Snapshot>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn params(&self, i: usize) -> ParamSet {
        ParamSet::from_values(self.layout.clone(), self.snapshots[i].values.clone())
            .expect("snapshot length matches its layout")
    }

    /// Keeps at most `max` snapshots, evenly spaced, always including the last.
    pub fn subsample(&self, max: usize) -> PosteriorSamples {
        let n = self.snapshots.len();
        if max == 0 || n <= max {
            return self.clone();
        }
        let snapshots = (0..max)
            .map(|j| self.snapshots[n - 1 - (j * (n - 1)) / (max - 1).max(1)].clone())
            .rev()
            .collect();
        PosteriorSamples { layout: self.layout.clone(), snapshots }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub step_size: f64,
    pub mean_loglik: f64,
    pub log_prior: f64,
    pub grad_norm: f64,
    pub snapshot: bool,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub samples: PosteriorSamples,
    pub log: Vec<LogRecord>,
    pub skipped: usize,
    pub last: ParamSet,
}

struct Minibatcher {
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    seed: u64,
}

impl Minibatcher {
    fn new(n: usize, seed: u64) -> Self {
        Self { order: (0..n).collect(), cursor: n, epoch: 0, seed }
    }

    /// Next `k` indices, reshuffling when the current epoch cannot fill a
    /// whole batch.
    fn next(&mut self, k: usize) -> &[usize] {
        if self.cursor + k > self.order.len() {
            self.order.sort_unstable();
            let mut r = rng::stream(self.seed, Purpose::Shuffle, self.epoch as u64, 0, 0);
            rng::shuffle(&mut r, &mut self.order);
            self.epoch += 1;
            self.cursor = 0;
        }
        let batch = &self.order[self.cursor..self.cursor + k];
        self.cursor += k;
        batch
    }
}

type ElementResult = Result<(f64, Vec<f64>)>;

fn element_grad<M: Model + ?Sized>(model: &M, params: &ParamSet, idx: usize, iteration: u64) -> ElementResult {
    let mut g = vec![0.0; params.len()];
    let ll = model.element_loglik(params, idx, iteration, &mut g)?;
    Ok((ll, g))
}

#[cfg(feature = "parallel")]
fn batch_grads<M: Model>(model: &M, params: &ParamSet, batch: &[usize], iteration: u64) -> Vec<ElementResult> {
    use rayon::prelude::*;
    batch.par_iter().map(|&i| element_grad(model, params, i, iteration)).collect()
}

#[cfg(not(feature = "parallel"))]
fn batch_grads<M: Model>(model: &M, params: &ParamSet, batch: &[usize], iteration: u64) -> Vec<ElementResult> {
    batch.iter().map(|&i| element_grad(model, params, i, iteration)).collect()
}

/// Runs SGLD for `config.iterations` iterations. Iterations whose paths
/// diverge are skipped; exceeding the allowed fraction aborts the run.
pub fn run_inference<M: Model>(
    model: &M,
    init: ParamSet,
    config: &SgldConfig,
    mut observe: impl FnMut(&LogRecord),
) -> Result<Inference> {
    let n = model.n_data();
    config.validate(n)?;
    let k = config.batch_size;
    let limit = math::floor(config.max_divergence_fraction * config.iterations as f64) as usize;
    let mut params = init;
    let mut batcher = Minibatcher::new(n, config.seed);
    let mut injection = rng::stream(config.seed, Purpose::Injection, 0, 0, 0);
    let mut samples = PosteriorSamples { layout: params.layout().clone(), snapshots: Vec::new() };
    let mut log = Vec::with_capacity(config.iterations);
    let mut skipped = 0;

    for i in 1..=config.iterations {
        let eps = step_size(i - 1, config);
        let batch = batcher.next(k).to_vec();
        let results = batch_grads(model, &params, &batch, i as u64);

        let mut lik_sum = vec![0.0; params.len()];
        let mut ll_sum = 0.0;
        let mut diverged = false;
        for r in results {
            match r {
                Ok((ll, g)) => {
                    ll_sum += ll;
                    for (a, b) in lik_sum.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Err(Error::Divergence { .. }) | Err(Error::DegenerateLikelihood) => diverged = true,
                Err(e) => return Err(e),
            }
        }

        let mut prior_grad = vec![0.0; params.len()];
        let lp = model.log_prior(&params, &mut prior_grad);
        let scale = n as f64 / k as f64;
        let grad_norm = math::sqrt(
            prior_grad.iter().zip(&lik_sum).map(|(p, l)| (p + scale * l) * (p + scale * l)).sum::<f64>(),
        );

        if diverged {
            skipped += 1;
            if skipped > limit {
                return Err(Error::DivergenceAbort { skipped, iteration: i, limit });
            }
        } else {
            let noise = if config.inject_noise { Some(&mut injection) } else { None };
            sgld_update(&mut params, &prior_grad, &lik_sum, eps, n, k, noise)?;
        }

        let snapshot = i > config.burn_in && (i - config.burn_in).is_multiple_of(config.thinning);
        if snapshot {
            samples.snapshots.push(Snapshot { iteration: i, step_size: eps, values: params.values().to_vec() });
        }
        let record = LogRecord {
            iteration: i,
            epoch: batcher.epoch,
            step_size: eps,
            mean_loglik: if diverged { f64::NAN } else { ll_sum / k as f64 },
            log_prior: lp,
            grad_norm: if diverged { f64::NAN } else { grad_norm },
            snapshot,
            skipped: diverged,
        };
        observe(&record);
        log.push(record);
    }
    Ok(Inference { samples, log, skipped, last: params })
}

/// Regression pairs with `h(0) = x` and a linear readout at the flow time.
pub struct RegressionModel<'a> {
    pub arch: &'a DbnnArch,
    pub x: &'a [Vec<f64>],
    pub y: &'a [Vec<f64>],
    pub sde: SdeConfig,
    pub prior: PriorSpec,
    pub noise_seed: u64,
}

impl RegressionModel<'_> {
    pub fn noise(&self, index: usize, iteration: u64) -> WienerNoise {
        let key = NoiseKey { seed: self.noise_seed, iteration, element: index as u64 };
        crate::sde::sample_noise(&self.sde, key)
    }
}

impl Model for RegressionModel<'_> {
    fn n_data(&self) -> usize {
        self.x.len()
    }

    fn element_loglik(&self, params: &ParamSet, index: usize, iteration: u64, grad: &mut [f64]) -> Result<f64> {
        let noise = self.noise(index, iteration);
        let mut g = Graph::new();
        let bound = Bound::all(&mut g, params);
        let ll = likelihood::regression_loglik_node(
            &mut g,
            self.arch,
            &bound,
            &self.x[index],
            &self.y[index],
            self.sde.flow_time,
            &noise,
            index,
        )?;
        g.backward(ll)?;
        g.accumulate_param_grads(grad)?;
        Ok(g.scalar(ll))
    }

    fn log_prior(&self, params: &ParamSet, grad: &mut [f64]) -> f64 {
        likelihood::log_prior(params, &self.prior, Some(grad))
    }
}

/// One observed trajectory; each inter-observation segment is an element.
pub struct TrajectoryModel<'a> {
    pub arch: &'a DbnnArch,
    pub traj: &'a Trajectory,
    pub config: TrajectoryConfig,
    pub prior: PriorSpec,
    pub noise_seed: u64,
}

impl Model for TrajectoryModel<'_> {
    fn n_data(&self) -> usize {
        self.traj.len().saturating_sub(1)
    }

    fn element_loglik(&self, params: &ParamSet, index: usize, iteration: u64, grad: &mut [f64]) -> Result<f64> {
        let noise = likelihood::segment_noise(self.traj, index, self.arch.rank(), &self.config, self.noise_seed, iteration);
        let mut g = Graph::new();
        let bound = Bound::all(&mut g, params);
        let ll = likelihood::segment_loglik_node(&mut g, self.arch, &bound, self.traj, index, &self.config, &noise)?;
        g.backward(ll)?;
        g.accumulate_param_grads(grad)?;
        Ok(g.scalar(ll))
    }

    fn log_prior(&self, params: &ParamSet, grad: &mut [f64]) -> f64 {
        likelihood::log_prior(params, &self.prior, Some(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::BlockKind;

    fn cfg(step0: f64, lambda: usize) -> SgldConfig {
        SgldConfig { step0, decay_interval: lambda, ..SgldConfig::default() }
    }

    #[test]
    fn halving_schedule() {
        let c = cfg(0.8, 10);
        assert_eq!(step_size(0, &c), 0.8);
        assert_eq!(step_size(9, &c), 0.8);
        assert_eq!(step_size(10, &c), 0.4);
        assert_eq!(step_size(30, &c), 0.1);
        let frozen = SgldConfig { decay: false, ..c };
        assert_eq!(step_size(1000, &frozen), 0.8);
    }

    fn one_param(v: f64) -> ParamSet {
        let mut layout = ParamLayout::new();
        layout.push("theta", BlockKind::Weight, 1, 1);
        ParamSet::from_values(layout, vec![v]).unwrap()
    }

    #[test]
    fn update_without_noise() {
        let mut p = one_param(1.0);
        sgld_update::<rand_chacha::ChaCha8Rng>(&mut p, &[0.0], &[0.0], 0.1, 10, 10, None).unwrap();
        assert_eq!(p.values(), &[1.0]);
        sgld_update::<rand_chacha::ChaCha8Rng>(&mut p, &[1.0], &[2.0], 0.1, 10, 10, None).unwrap();
        assert!((p.values()[0] - (1.0 + 0.05 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn minibatch_scaling() {
        let mut full = one_param(0.0);
        sgld_update::<rand_chacha::ChaCha8Rng>(&mut full, &[0.0], &[1.0], 1.0, 10, 10, None).unwrap();
        let mut half = one_param(0.0);
        sgld_update::<rand_chacha::ChaCha8Rng>(&mut half, &[0.0], &[1.0], 1.0, 10, 5, None).unwrap();
        assert_eq!(full.values()[0], 0.5);
        assert_eq!(half.values()[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = one_param(0.0);
        let err = sgld_update::<rand_chacha::ChaCha8Rng>(&mut p, &[0.0], &[f64::NAN], 0.1, 1, 1, None);
        assert_eq!(err, Err(Error::NonFiniteGradient { block: "theta".into() }));
    }

    #[test]
    fn minibatches_cover_each_epoch() {
        let mut b = Minibatcher::new(10, 3);
        let mut seen: Vec<usize> = Vec::new();
        for _ in 0..5 {
            seen.extend_from_slice(b.next(2));
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(b.epoch, 1);
    }

    #[test]
    fn config_problems_listed_together() {
        let c = SgldConfig { step0: 0.0, batch_size: 0, burn_in: 5, iterations: 5, thinning: 0, ..SgldConfig::default() };
        assert_eq!(c.problems(10).len(), 4);
    }

    #[test]
    fn subsample_keeps_last() {
        let layout = ParamLayout::new();
        let snaps = (0..10).map(|i| Snapshot { iteration: i, step_size: 1.0, values: vec![] }).collect();
        let s = PosteriorSamples { layout, snapshots: snaps };
        let sub = s.subsample(4);
        assert_eq!(sub.len(), 4);
        assert_eq!(sub.snapshots.last().unwrap().iteration, 9);
        assert_eq!(sub.snapshots[0].iteration, 0);
    }
}
