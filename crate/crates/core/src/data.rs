//! Tabular datasets, standardization, train/test splits, and the synthetic
//! trajectory generators.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Row-major features and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub source: String,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, feature_names: Vec<String>, target_names: Vec<String>, source: impl Into<String>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if x.len() != y.len() {
            return Err(Error::Dimension { what: "target rows", expected: x.len(), found: y.len() });
        }
        let (d, o) = (feature_names.len(), target_names.len());
        for (xr, yr) in x.iter().zip(&y) {
            if xr.len() != d {
                return Err(Error::Dimension { what: "feature row", expected: d, found: xr.len() });
            }
            if yr.len() != o {
                return Err(Error::Dimension { what: "target row", expected: o, found: yr.len() });
            }
        }
        Ok(Self { x, y, feature_names, target_names, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn output_dim(&self) -> usize {
        self.target_names.len()
    }
}

/// Per-column affine map to zero mean and unit (population) standard
/// deviation. Constant columns keep a scale of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a Vec<f64>>) -> Result<Self> {
        let rows: Vec<&Vec<f64>> = rows.into_iter().collect();
        let first = rows.first().ok_or(Error::Empty("standardization input"))?;
        let n = rows.len() as f64;
        let d = first.len();
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = math::sqrt(s / n);
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

/// Disjoint train and test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random split with `floor(n * train_fraction)` training rows.
pub fn split(n: usize, seed: u64, train_fraction: f64) -> Result<Split> {
    if n < 10 {
        return Err(Error::InvalidConfig(alloc::format!("need at least 10 rows to split, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, Purpose::Split, 0, 0, 0);
    rng::shuffle(&mut r, &mut order);
    let n_train = (math::floor(n as f64 * train_fraction) as usize).clamp(1, n - 1);
    let test = order.split_off(n_train);
    Ok(Split { train: order, test })
}

/// A split with features and targets standardized by training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<Vec<f64>>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<Vec<f64>>,
    pub x_scaler: Standardizer,
    pub y_scaler: Standardizer,
    pub split: Split,
}

pub fn prepare(data: &Dataset, split: Split) -> Result<Prepared> {
    let x_scaler = Standardizer::fit(split.train.iter().map(|&i| &data.x[i]))?;
    let y_scaler = Standardizer::fit(split.train.iter().map(|&i| &data.y[i]))?;
    let pick = |idx: &[usize], rows: &[Vec<f64>], s: &Standardizer| -> Vec<Vec<f64>> {
        idx.iter().map(|&i| s.apply(&rows[i])).collect()
    };
    Ok(Prepared {
        train_x: pick(&split.train, &data.x, &x_scaler),
        train_y: pick(&split.train, &data.y, &y_scaler),
        test_x: pick(&split.test, &data.x, &x_scaler),
        test_y: pick(&split.test, &data.y, &y_scaler),
        x_scaler,
        y_scaler,
        split,
    })
}

/// Time-stamped observations of a `D`-dimensional state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Noise-free latent values when the trajectory is synthetic.
    pub truth: Option<Vec<Vec<f64>>>,
    pub noise_std: Option<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self { times, values, truth: None, noise_std: None };
        t.check()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn check(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        if self.values.len() != self.times.len() {
            return Err(Error::Dimension { what: "trajectory values", expected: self.times.len(), found: self.values.len() });
        }
        let d = self.dim();
        for (j, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonIncreasingTimes { index: j + 1 });
            }
        }
        for v in &self.values {
            if v.len() != d {
                return Err(Error::Dimension { what: "trajectory value", expected: d, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) || self.times.iter().any(|t| !t.is_finite()) {
                return Err(Error::InvalidConfig(String::from("trajectory contains non-finite entries")));
            }
        }
        Ok(())
    }
}

/// `dx = kappa (mean - x) dt + sigma dW` observed on an even grid over
/// `[0, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VasicekSpec {
    pub x0: f64,
    pub kappa: f64,
    pub mean: f64,
    pub sigma: f64,
    pub t_end: f64,
    pub n_points: usize,
    pub obs_noise: f64,
    /// Internal Euler steps per observation interval.
    pub substeps: usize,
}

impl Default for VasicekSpec {
    fn default() -> Self {
        Self { x0: 0.0, kappa: 0.5, mean: 1.0, sigma: 0.25, t_end: 6.0, n_points: 30, obs_noise: 0.05, substeps: 50 }
    }
}

impl VasicekSpec {
    /// Spacing between observations.
    pub fn spacing(&self) -> f64 {
        self.t_end / (self.n_points.max(2) - 1) as f64
    }
}

/// Simulates the Vasicek model with fine Euler-Maruyama steps and observes it
/// with additive Gaussian noise. The initial point is observed exactly.
pub fn gen_vasicek(spec: &VasicekSpec, seed: u64) -> Result<Trajectory> {
    if !(spec.t_end > 0.0) || spec.n_points < 2 || spec.substeps == 0 {
        return Err(Error::InvalidConfig(String::from("vasicek needs t_end > 0, n_points >= 2, substeps >= 1")));
    }
    let mut path_rng = rng::stream(seed, Purpose::Generator, 1, 0, 0);
    let mut obs_rng = rng::stream(seed, Purpose::Generator, 2, 0, 0);
    let spacing = spec.spacing();
    let h = spacing / spec.substeps as f64;
    let sd = spec.sigma * math::sqrt(h);
    let mut x = spec.x0;
    let mut times = Vec::with_capacity(spec.n_points);
    let mut values = Vec::with_capacity(spec.n_points);
    let mut truth = Vec::with_capacity(spec.n_points);
    for j in 0..spec.n_points {
        if j > 0 {
            for _ in 0..spec.substeps {
                x += spec.kappa * (spec.mean - x) * h + sd * rng::standard_normal(&mut path_rng);
            }
        }
        let noise = if j == 0 { 0.0 } else { spec.obs_noise * rng::standard_normal(&mut obs_rng) };
        times.push(j as f64 * spacing);
        values.push(vec![x + noise]);
        truth.push(vec![x]);
    }
    Ok(Trajectory { times, values, truth: Some(truth), noise_std: Some(spec.obs_noise) })
}

/// Noisy samples of `sigmoid(t) - 1/2` at uniformly random times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidSpec {
    pub n: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub noise_std: f64,
}

impl Default for SigmoidSpec {
    fn default() -> Self {
        Self { n: 20, t_min: -6.0, t_max: 6.0, noise_std: 0.05 }
    }
}

pub fn centered_sigmoid(t: f64) -> f64 {
    math::sigmoid(t) - 0.5
}

pub fn gen_sigmoid(spec: &SigmoidSpec, seed: u64) -> Result<Trajectory> {
    if spec.n == 0 || !(spec.t_max > spec.t_min) {
        return Err(Error::InvalidConfig(String::from("sigmoid needs n >= 1 and t_max > t_min")));
    }
    let mut time_rng = rng::stream(seed, Purpose::Generator, 3, 0, 0);
    let mut obs_rng = rng::stream(seed, Purpose::Generator, 4, 0, 0);
    let mut times: Vec<f64> = Vec::with_capacity(spec.n);
    while times.len() < spec.n {
        let t = spec.t_min + (spec.t_max - spec.t_min) * rng::uniform(&mut time_rng);
        if !times.contains(&t) {
            times.push(t);
        }
    }
    times.sort_by(f64::total_cmp);
    let truth: Vec<Vec<f64>> = times.iter().map(|&t| vec![centered_sigmoid(t)]).collect();
    let values = truth
        .iter()
        .map(|v| vec![v[0] + spec.noise_std * rng::standard_normal(&mut obs_rng)])
        .collect();
    Ok(Trajectory { times, values, truth: Some(truth), noise_std: Some(spec.noise_std) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_for_boston_size() {
        let s = split(506, 0, 0.9).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (455, 51));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..506).collect::<Vec<_>>());
    }

    #[test]
    fn split_depends_on_seed() {
        assert_ne!(split(100, 1, 0.9).unwrap(), split(100, 2, 0.9).unwrap());
        assert_eq!(split(100, 1, 0.9).unwrap(), split(100, 1, 0.9).unwrap());
        assert!(split(9, 1, 0.9).is_err());
    }

    #[test]
    fn standardizer_round_trip() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![8.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.std[1], 1.0);
        for r in &rows {
            let back = s.invert(&s.apply(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_rejects_unsorted_times() {
        let t = Trajectory::new(vec![0.0, 1.0, 1.0], vec![vec![0.0]; 3]);
        assert_eq!(t, Err(Error::NonIncreasingTimes { index: 2 }));
    }

    #[test]
    fn noiseless_vasicek_relaxes() {
        let spec = VasicekSpec { sigma: 0.0, obs_noise: 0.0, ..VasicekSpec::default() };
        let traj = gen_vasicek(&spec, 0).unwrap();
        for (t, v) in traj.times.iter().zip(&traj.values) {
            assert!((v[0] - (1.0 - math::exp(-0.5 * t))).abs() < 2e-3, "t={t}");
        }
    }

    #[test]
    fn sigmoid_shape() {
        let traj = gen_sigmoid(&SigmoidSpec::default(), 4).unwrap();
        assert_eq!(traj.len(), 20);
        traj.check().unwrap();
        assert_eq!(centered_sigmoid(0.0), 0.0);
        assert!((centered_sigmoid(40.0) - 0.5).abs() < 1e-15);
    }
}
