//! Likelihood terms against direct-summation and closed-form oracles.

use dbnn_core::data::{gen_vasicek, Trajectory, VasicekSpec};
use dbnn_core::grad::finite_diff_check;
use dbnn_core::likelihood::{
    gaussian_loglik, log_mean_exp, log_prior, simulated_loglik, trajectory_loglik, PriorSpec, TrajectoryConfig,
};
use dbnn_core::params::{BlockKind, ParamLayout, ParamSet};
use dbnn_core::sde::{self, FnDynamics, NoiseKey, WienerNoise};
use proptest::prelude::*;

fn textbook_log_density(y: &[f64], mean: &[f64], sigma: f64) -> f64 {
    y.iter()
        .zip(mean)
        .map(|(a, m)| {
            let pdf = (-(a - m) * (a - m) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            pdf.ln()
        })
        .sum()
}

proptest! {
    #[test]
    fn gaussian_matches_textbook_density(
        y in prop::collection::vec(-3.0f64..3.0, 1..5),
        shift in -2.0f64..2.0,
        sigma in 0.2f64..3.0,
    ) {
        let mean: Vec<f64> = y.iter().map(|v| v * 0.5 + shift).collect();
        let got = gaussian_loglik(&y, &mean, sigma);
        let want = textbook_log_density(&y, &mean, sigma);
        prop_assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn three_path_estimate_equals_direct_averaging(
        paths in prop::collection::vec(-2.0f64..2.0, 3),
        y in -2.0f64..2.0,
        sigma in 0.3f64..2.0,
    ) {
        let terminals: Vec<Vec<f64>> = paths.iter().map(|&p| vec![p]).collect();
        let got = simulated_loglik(&[y], &terminals, |h| vec![2.0 * h[0] - 0.1], sigma).unwrap();
        let direct = (terminals
            .iter()
            .map(|h| textbook_log_density(&[y], &[2.0 * h[0] - 0.1], sigma).exp())
            .sum::<f64>()
            / 3.0)
            .ln();
        prop_assert!((got - direct).abs() < 1e-10, "{got} vs {direct}");
    }

    #[test]
    fn estimate_is_bounded_and_order_free(lls in prop::collection::vec(-50.0f64..5.0, 1..12)) {
        let v = log_mean_exp(&lls).unwrap();
        let max = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v <= max + 1e-12);
        prop_assert!(v >= max - (lls.len() as f64).ln() - 1e-12);
        let mut rev = lls.clone();
        rev.reverse();
        prop_assert!((log_mean_exp(&rev).unwrap() - v).abs() < 1e-12);
    }
}

#[test]
fn three_term_worked_case() {
    let direct = ((-1.0f64).exp() + (-2.0f64).exp() + (-3.0f64).exp()) / 3.0;
    let got = log_mean_exp(&[-1.0, -2.0, -3.0]).unwrap();
    assert!((got - direct.ln()).abs() < 1e-12);
    assert!((got - -1.691_006_324).abs() < 1e-9);
}

#[test]
fn tiny_densities_do_not_underflow() {
    let v = log_mean_exp(&[-1000.0, -1001.0]).unwrap();
    let want = -1000.0 + ((1.0 + (-1.0f64).exp()) / 2.0).ln();
    assert!((v - want).abs() < 1e-12);
}

fn vasicek_dynamics(kappa: f64) -> impl sde::Dynamics {
    FnDynamics {
        state_dim: 1,
        rank: 1,
        drift: move |h: &[f64], _| vec![kappa * (1.0 - h[0])],
        diffusion_apply: |_: &[f64], _, dw: &[f64]| vec![0.25 * dw[0]],
    }
}

#[test]
fn monte_carlo_spread_shrinks_with_paths() {
    let dynamics = vasicek_dynamics(0.5);
    let spread = |m: usize| {
        let vals: Vec<f64> = (0..40)
            .map(|s| {
                let noise = WienerNoise::sample(m, 20, 1, 0.05, NoiseKey { seed: s, iteration: 0, element: 0 });
                let ends = sde::terminal_states(&[0.0], 0.0, &noise, &dynamics, 0).unwrap();
                simulated_loglik(&[0.45], &ends, |h| h.to_vec(), 0.1).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    };
    let (coarse, fine) = (spread(10), spread(1000));
    assert!(fine < coarse / 5.0, "sd at M=10: {coarse}, at M=1000: {fine}");
}

#[test]
fn single_observation_scores_zero() {
    let traj = Trajectory::new(vec![0.0], vec![vec![0.3]]).unwrap();
    let v = trajectory_loglik(&traj, &vasicek_dynamics(0.5), 0.1, &TrajectoryConfig::default(), 0).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn constant_paths_on_constant_data() {
    let still = FnDynamics {
        state_dim: 1,
        rank: 1,
        drift: |_: &[f64], _| vec![0.0],
        diffusion_apply: |_: &[f64], _, _: &[f64]| vec![0.0],
    };
    let traj = Trajectory::new(vec![0.0, 0.3, 0.5, 1.2], vec![vec![0.7]; 4]).unwrap();
    let v = trajectory_loglik(&traj, &still, 1.0, &TrajectoryConfig::default(), 0).unwrap();
    let want = -3.0 * 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((v - want).abs() < 1e-12);
}

#[test]
fn true_dynamics_outscore_zero_drift() {
    let traj = gen_vasicek(&VasicekSpec::default(), 17).unwrap();
    let cfg = TrajectoryConfig { n_paths: 8, ..TrajectoryConfig::default() };
    let average = |kappa: f64| {
        let dynamics = vasicek_dynamics(kappa);
        (0..100).map(|s| trajectory_loglik(&traj, &dynamics, 0.05, &cfg, s).unwrap()).sum::<f64>() / 100.0
    };
    let (truth, flat) = (average(0.5), average(0.0));
    assert!(truth > flat, "true {truth} vs zero drift {flat}");
}

fn mixed_params() -> ParamSet {
    let mut layout = ParamLayout::new();
    layout.push("w", BlockKind::Weight, 2, 2);
    layout.push("b", BlockKind::Bias, 2, 1);
    layout.push("noise", BlockKind::ObsNoise, 1, 1);
    ParamSet::from_values(layout, vec![0.3, -1.2, 0.8, 2.0, -0.4, 0.1, -1.5]).unwrap()
}

#[test]
fn prior_gradient_matches_finite_differences() {
    let spec = PriorSpec::uniform(0.7, 2.0);
    let loss = |p: &ParamSet, g: Option<&mut [f64]>| Ok(log_prior(p, &spec, g));
    let err = finite_diff_check(loss, &mixed_params(), 1e-5).unwrap();
    assert!(err < 1e-8, "relative error {err}");
}

#[test]
fn prior_is_quadratic_in_scale() {
    let spec = PriorSpec::uniform(0.7, 2.0);
    let p = mixed_params();
    let base = log_prior(&p, &spec, None);
    let scaled = ParamSet::from_values(p.layout().clone(), p.values().iter().map(|v| 3.0 * v).collect()).unwrap();
    assert!((log_prior(&scaled, &spec, None) - 9.0 * base).abs() < 1e-12 * base.abs());
}

#[test]
fn diffusion_weights_get_their_own_prior_scale() {
    let mut layout = ParamLayout::new();
    layout.push("drift.w0", BlockKind::Weight, 1, 2);
    layout.push("diffusion.w0", BlockKind::Weight, 1, 2);
    layout.push("diffusion.b0", BlockKind::Bias, 1, 1);
    layout.push("log_obs_noise", BlockKind::ObsNoise, 1, 1);
    let v = [0.5, -1.0, 0.2, 0.4, -3.0, -1.0];
    let p = ParamSet::from_values(layout, v.to_vec()).unwrap();
    let spec = PriorSpec { weight_std: 2.0, diffusion_weight_std: 0.1, log_obs_noise_std: 1.0 };
    let sd = [2.0, 2.0, 0.1, 0.1, 2.0, 1.0];
    let expected: f64 = v.iter().zip(sd).map(|(x, s)| -x * x / (2.0 * s * s)).sum();
    let mut grad = vec![0.0; v.len()];
    assert!((log_prior(&p, &spec, Some(&mut grad)) - expected).abs() < 1e-12);
    for ((g, x), s) in grad.iter().zip(v).zip(sd) {
        assert!((g + x / (s * s)).abs() < 1e-12);
    }
}
