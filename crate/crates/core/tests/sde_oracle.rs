//! Euler-Maruyama against closed forms and independent steppers.

use dbnn_core::nets::{ArchSpec, DbnnArch, DiffusionForm};
use dbnn_core::sde::{self, FnDynamics, NetDynamics, NoiseKey, SdeConfig, WienerNoise};
use dbnn_core::Error;

fn key(seed: u64) -> NoiseKey {
    NoiseKey { seed, iteration: 0, element: 0 }
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = xs.clone().count();
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var, n)
}

#[test]
fn increments_have_variance_dt() {
    let dt = 0.01;
    let w = WienerNoise::sample(1000, 50, 2, dt, key(1));
    let (mean, var, n) = mean_var(w.increments().iter().copied());
    assert_eq!(n, 100_000);
    assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt(), "mean {mean}");
    assert!((var / dt - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn halving_steps_doubles_increment_variance() {
    let fine = WienerNoise::sample(2000, 40, 1, 1.0 / 40.0, key(2));
    let coarse = WienerNoise::sample(2000, 20, 1, 1.0 / 20.0, key(3));
    let (_, vf, _) = mean_var(fine.increments().iter().copied());
    let (_, vc, _) = mean_var(coarse.increments().iter().copied());
    assert!((vc / vf - 2.0).abs() < 0.06, "ratio {}", vc / vf);
}

#[test]
fn noise_streams_are_keyed() {
    let a = WienerNoise::sample(3, 4, 2, 0.1, key(5));
    assert_eq!(a, WienerNoise::sample(3, 4, 2, 0.1, key(5)));
    assert_ne!(a, WienerNoise::sample(3, 4, 2, 0.1, key(6)));
    let other_iter = WienerNoise::sample(3, 4, 2, 0.1, NoiseKey { seed: 5, iteration: 1, element: 0 });
    assert_ne!(a, other_iter);
    // Path m's stream does not depend on how many paths are drawn.
    let more = WienerNoise::sample(5, 4, 2, 0.1, key(5));
    assert_eq!(a.increment(2, 3), more.increment(2, 3));
}

const KAPPA: f64 = 0.5;
const LONG_RUN: f64 = 1.0;
const SIGMA: f64 = 0.25;

fn vasicek() -> impl sde::Dynamics {
    FnDynamics {
        state_dim: 1,
        rank: 1,
        drift: |h: &[f64], _| vec![KAPPA * (LONG_RUN - h[0])],
        diffusion_apply: |_: &[f64], _, dw: &[f64]| vec![SIGMA * dw[0]],
    }
}

fn vasicek_terminals(paths: usize, steps: usize, horizon: f64, seed: u64) -> Vec<f64> {
    let noise = WienerNoise::sample(paths, steps, 1, horizon / steps as f64, key(seed));
    sde::terminal_states(&[0.0], 0.0, &noise, &vasicek(), 0).unwrap().into_iter().map(|h| h[0]).collect()
}

/// Moments of the Euler recursion `x' = (1 - k dt) x + k dt + s dw` in closed form.
fn em_recursion_moments(steps: usize, horizon: f64) -> (f64, f64) {
    let dt = horizon / steps as f64;
    let a = 1.0 - KAPPA * dt;
    let (mut m, mut v) = (0.0, 0.0);
    for _ in 0..steps {
        m = a * m + KAPPA * LONG_RUN * dt;
        v = a * a * v + SIGMA * SIGMA * dt;
    }
    (m, v)
}

#[test]
fn ou_moments_match_the_discrete_recursion() {
    let (paths, steps, horizon) = (10_000, 64, 3.0);
    let (mean, var, n) = mean_var(vasicek_terminals(paths, steps, horizon, 7).into_iter());
    let (m_ref, v_ref) = em_recursion_moments(steps, horizon);
    assert!((mean - m_ref).abs() < 3.0 * (var / n as f64).sqrt(), "mean {mean} vs {m_ref}");
    assert!((var / v_ref - 1.0).abs() < 0.05, "variance {var} vs {v_ref}");
}

#[test]
fn ou_moments_approach_the_continuous_solution() {
    let horizon = 3.0;
    let exact_var = SIGMA * SIGMA / (2.0 * KAPPA) * (1.0 - (-2.0 * KAPPA * horizon).exp());
    let (_, var, _) = mean_var(vasicek_terminals(10_000, 64, horizon, 8).into_iter());
    assert!((var / exact_var - 1.0).abs() < 0.05, "variance {var} vs {exact_var}");
}

#[test]
fn weak_error_shrinks_with_refinement() {
    let horizon = 3.0;
    let exact = LONG_RUN * (1.0 - (-KAPPA * horizon).exp());
    let err = |steps| {
        let (mean, _, _) = mean_var(vasicek_terminals(20_000, steps, horizon, 9).into_iter());
        (mean - exact).abs()
    };
    let (e4, e8, e16, e64) = (err(4), err(8), err(16), err(64));
    assert!(e4 > e8 && e8 > e16, "errors {e4} {e8} {e16}");
    assert!(e64 < e4 / 8.0, "errors {e4} {e64}");
}

#[test]
fn zero_diffusion_is_forward_euler() {
    let drift = |h: &[f64], t: f64| vec![h[1].sin() + t, -h[0] * 0.5];
    let dynamics = FnDynamics {
        state_dim: 2,
        rank: 2,
        drift,
        diffusion_apply: |_: &[f64], _, _: &[f64]| vec![0.0, 0.0],
    };
    let steps = 25;
    let cfg = SdeConfig { flow_time: 1.5, n_steps: steps, n_paths: 3, state_dim: 2, form: DiffusionForm::Diagonal };
    let noise = sde::sample_noise(&cfg, key(4));
    let batch = sde::simulate(&[vec![0.3, -0.2]], &cfg, &[noise], &dynamics).unwrap();

    let dt = 1.5 / steps as f64;
    let mut h: [f64; 2] = [0.3, -0.2];
    for i in 0..steps {
        let t = i as f64 * dt;
        let f = [h[1].sin() + t, -h[0] * 0.5];
        h = [h[0] + dt * f[0], h[1] + dt * f[1]];
    }
    for m in 0..3 {
        assert_eq!(batch.terminal(0, m), &h);
    }
}

#[test]
fn exploding_drift_is_reported() {
    let dynamics = FnDynamics {
        state_dim: 1,
        rank: 1,
        drift: |h: &[f64], _| vec![10.0 * h[0] * h[0]],
        diffusion_apply: |_: &[f64], _, dw: &[f64]| vec![dw[0]],
    };
    let noise = WienerNoise::zeros(1, 50, 1, 0.1);
    match sde::terminal_states(&[1.0], 0.0, &noise, &dynamics, 3) {
        Err(Error::Divergence { element: 3, path: 0, .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn autonomous_networks_ignore_time() {
    let arch = DbnnArch::new(ArchSpec::timeseries(2, DiffusionForm::Cholesky)).unwrap();
    let params = arch.init_params(11, 1.0, 0.0);
    let dynamics = NetDynamics { arch: &arch, values: params.values(), time_scale: 1.0 };
    let noise = WienerNoise::sample(4, 6, arch.rank(), 0.1, key(12));
    let early = sde::terminal_states(&[0.2, -0.1], 0.0, &noise, &dynamics, 0).unwrap();
    let late = sde::terminal_states(&[0.2, -0.1], 17.0, &noise, &dynamics, 0).unwrap();
    assert_eq!(early, late);
}

#[test]
fn taped_simulation_matches_plain_simulation() {
    let arch = DbnnArch::new(ArchSpec::regression(3, 1, DiffusionForm::LowRank(2))).unwrap();
    let params = arch.init_params(13, 1.0, 0.0);
    let noise = WienerNoise::sample(3, 8, arch.rank(), 0.125, key(14));
    let dynamics = NetDynamics { arch: &arch, values: params.values(), time_scale: 1.0 };
    let plain = sde::terminal_states(&[0.5, 0.0, -1.0], 0.0, &noise, &dynamics, 0).unwrap();
    let mut g = dbnn_core::Graph::new();
    let bound = dbnn_core::nets::Bound::all(&mut g, &params);
    let taped = sde::simulate_node(&mut g, &arch, &bound, &[0.5, 0.0, -1.0], 0.0, 1.0, &noise, 0).unwrap();
    for (p, t) in plain.iter().zip(taped) {
        for (a, b) in p.iter().zip(g.value(t)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
