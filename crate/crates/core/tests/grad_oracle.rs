//! Analytic gradients against central finite differences.

use dbnn_core::grad::{finite_diff_check, Graph, NodeId, Shape};
use dbnn_core::likelihood::regression_loglik_node;
use dbnn_core::nets::{Activation, ArchSpec, Bound, DbnnArch, DiffusionForm};
use dbnn_core::params::{BlockKind, ParamLayout, ParamSet};
use dbnn_core::sde::{NoiseKey, WienerNoise};
use dbnn_core::{Error, Result};
use proptest::prelude::*;

const STEP: f64 = 1e-5;

/// Loss closure over a graph built fresh from `params` by `build`.
fn taped<F>(build: F) -> impl FnMut(&ParamSet, Option<&mut [f64]>) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<NodeId>,
{
    move |p: &ParamSet, grad: Option<&mut [f64]>| {
        let mut g = Graph::new();
        let bound = Bound::all(&mut g, p);
        let loss = build(&mut g, &bound)?;
        if let Some(out) = grad {
            g.backward(loss)?;
            g.accumulate_param_grads(out)?;
        }
        g.forward(loss)
    }
}

fn params_from(shapes: &[(usize, usize)], values: &[f64]) -> ParamSet {
    let mut layout = ParamLayout::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        layout.push(format!("p{i}"), BlockKind::Weight, r, c);
    }
    ParamSet::from_values(layout, values[..layout_len(shapes)].to_vec()).unwrap()
}

fn layout_len(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|(r, c)| r * c).sum()
}

/// Contracts a node against fixed weights so every output entry matters.
fn contract(g: &mut Graph, node: NodeId) -> NodeId {
    let n = g.shape(node).len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
    let wn = g.constant(g.shape(node), &w).unwrap();
    let prod = g.mul(node, wn).unwrap();
    g.sum(prod)
}

type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>;

fn op_error(op: &str, values: &[f64]) -> f64 {
    let (shapes, build): (Vec<(usize, usize)>, Builder) = match op {
        "add" => (vec![(3, 1), (3, 1)], Box::new(|g, p| g.add(p[0], p[1]).unwrap())),
        "sub" => (vec![(3, 1), (3, 1)], Box::new(|g, p| g.sub(p[0], p[1]).unwrap())),
        "mul" => (vec![(3, 1), (3, 1)], Box::new(|g, p| g.mul(p[0], p[1]).unwrap())),
        "matvec" => (vec![(2, 3), (3, 1)], Box::new(|g, p| g.matvec(p[0], p[1]).unwrap())),
        "affine" => (vec![(2, 3), (2, 1), (3, 1)], Box::new(|g, p| g.affine(p[0], p[1], p[2]).unwrap())),
        "tanh" => (vec![(3, 1)], Box::new(|g, p| g.tanh(p[0]))),
        "softplus" => (vec![(3, 1)], Box::new(|g, p| g.softplus(p[0]))),
        "exp" => (vec![(3, 1)], Box::new(|g, p| g.exp(p[0]))),
        "log" => (vec![(3, 1)], Box::new(|g, p| {
            let sq = g.square(p[0]);
            let pos = g.add_const(sq, 0.5);
            g.log(pos)
        })),
        "square" => (vec![(3, 1)], Box::new(|g, p| g.square(p[0]))),
        "sum" => (vec![(3, 1)], Box::new(|g, p| g.sum(p[0]))),
        "logsumexp" => (vec![(4, 1)], Box::new(|g, p| g.logsumexp(p[0]))),
        "mul_scalar" => (vec![(1, 1), (3, 1)], Box::new(|g, p| g.mul_scalar(p[0], p[1]).unwrap())),
        "concat" => (vec![(2, 1), (1, 1)], Box::new(|g, p| g.concat(&[p[0], p[1], p[0]]).unwrap())),
        "gather" => (vec![(3, 1)], Box::new(|g, p| {
            g.gather(p[0], &[Some(2), None, Some(0), Some(2)], Shape::matrix(2, 2)).unwrap()
        })),
        _ => unreachable!(),
    };
    let params = params_from(&shapes, values);
    let n_blocks = shapes.len();
    let loss = move |p: &ParamSet, grad: Option<&mut [f64]>| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = (0..n_blocks).map(|i| g.param(p, dbnn_core::BlockId(i))).collect();
        let out = build(&mut g, &leaves);
        let l = contract(&mut g, out);
        if let Some(o) = grad {
            g.backward(l)?;
            g.accumulate_param_grads(o)?;
        }
        Ok(g.scalar(l))
    };
    finite_diff_check(loss, &params, STEP).unwrap()
}

const OPS: [&str; 15] = [
    "add", "sub", "mul", "matvec", "affine", "tanh", "softplus", "exp", "log", "square", "sum", "logsumexp",
    "mul_scalar", "concat", "gather",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_op_matches_finite_differences(values in prop::collection::vec(-2.0f64..2.0, 12)) {
        for op in OPS {
            let err = op_error(op, &values);
            prop_assert!(err < 1e-4, "{op}: relative error {err}");
        }
    }

    #[test]
    fn backward_is_linear_in_the_seed(values in prop::collection::vec(-1.5f64..1.5, 6), c in -4.0f64..4.0) {
        let params = params_from(&[(2, 3)], &values);
        let mut g = Graph::new();
        let w = g.param(&params, dbnn_core::BlockId(0));
        let x = g.vector(&[0.5, -1.0, 2.0]);
        let y = g.matvec(w, x).unwrap();
        let y = g.tanh(y);
        let l = g.sum(y);
        let mut base = vec![0.0; 6];
        g.backward(l).unwrap();
        g.accumulate_param_grads(&mut base).unwrap();
        let mut scaled = vec![0.0; 6];
        g.backward_scaled(l, c).unwrap();
        g.accumulate_param_grads(&mut scaled).unwrap();
        for (b, s) in base.iter().zip(&scaled) {
            prop_assert!((c * b - s).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }
}

fn random_values(n: usize, seed: u64) -> Vec<f64> {
    use rand_core::RngCore;
    let mut r = dbnn_core::rng::stream(seed, dbnn_core::rng::Purpose::Init, 99, 0, 0);
    (0..n).map(|_| (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0).collect()
}

#[test]
fn two_layer_mlp_loss_matches_finite_differences() {
    let shapes = [(5, 3), (5, 1), (2, 5), (2, 1)];
    let params = params_from(&shapes, &random_values(layout_len(&shapes), 1));
    let loss = taped(|g, b| {
        let x = g.vector(&[0.3, -0.8, 1.1]);
        let h = g.affine(b.get(dbnn_core::BlockId(0)), b.get(dbnn_core::BlockId(1)), x)?;
        let h = g.tanh(h);
        let y = g.affine(b.get(dbnn_core::BlockId(2)), b.get(dbnn_core::BlockId(3)), h)?;
        let t = g.vector(&[0.5, -0.25]);
        let r = g.sub(y, t)?;
        let sq = g.square(r);
        Ok(g.sum(sq))
    });
    let err = finite_diff_check(loss, &params, STEP).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn linear_quadratic_loss_is_exact() {
    let params = params_from(&[(1, 2)], &[0.7, -1.3]);
    let loss = taped(|g, b| {
        let x = g.vector(&[2.0, 0.5]);
        let y = g.matvec(b.get(dbnn_core::BlockId(0)), x)?;
        let y = g.add_const(y, -0.4);
        let sq = g.square(y);
        Ok(g.sum(sq))
    });
    assert!(finite_diff_check(loss, &params, STEP).unwrap() < 1e-8);
}

#[test]
fn constant_loss_has_zero_gradient() {
    let params = params_from(&[(2, 1)], &[0.1, 0.2]);
    let mut grads = vec![f64::NAN; 2];
    let mut loss = taped(|g, _| Ok(g.scalar_const(3.0)));
    grads.iter_mut().for_each(|g| *g = 0.0);
    loss(&params, Some(&mut grads)).unwrap();
    assert_eq!(grads, vec![0.0, 0.0]);
    assert_eq!(finite_diff_check(loss, &params, STEP).unwrap(), 0.0);
}

#[test]
fn non_finite_loss_names_parameter() {
    let params = params_from(&[(1, 1)], &[0.0]);
    let loss = |p: &ParamSet, _g: Option<&mut [f64]>| -> Result<f64> {
        let v = p.values()[0];
        Ok(if v > 0.0 { f64::INFINITY } else { v })
    };
    assert_eq!(finite_diff_check(loss, &params, STEP), Err(Error::NonFiniteLoss { param: 0 }));
}

pub fn small_dbnn() -> DbnnArch {
    DbnnArch::new(ArchSpec {
        state_dim: 2,
        output_dim: Some(1),
        drift_hidden: vec![8],
        diffusion_hidden: vec![8],
        activation: Activation::Tanh,
        drift_time_input: true,
        diffusion_time_input: true,
        form: DiffusionForm::Cholesky,
    })
    .unwrap()
}

#[test]
fn full_dbnn_minibatch_loss_matches_finite_differences() {
    let arch = small_dbnn();
    let params = arch.init_params(3, 1.0, -0.5);
    let xs = [[0.4, -0.9], [-1.2, 0.3], [0.05, 0.7]];
    let ys = [[0.3], [-0.6], [1.1]];
    let noise: Vec<WienerNoise> = (0..3)
        .map(|k| WienerNoise::sample(2, 5, 2, 0.2, NoiseKey { seed: 7, iteration: 0, element: k }))
        .collect();
    let loss = taped(|g, b| {
        let mut terms = Vec::new();
        for k in 0..3 {
            terms.push(regression_loglik_node(g, &arch, b, &xs[k], &ys[k], 1.0, &noise[k], k)?);
        }
        let all = g.concat(&terms)?;
        Ok(g.sum(all))
    });
    let err = finite_diff_check(loss, &params, STEP).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn repeated_passes_are_bit_identical() {
    let arch = small_dbnn();
    let params = arch.init_params(4, 1.0, 0.0);
    let noise = WienerNoise::sample(2, 5, 2, 0.2, NoiseKey { seed: 1, iteration: 0, element: 0 });
    let run = || {
        let mut g = Graph::new();
        let b = Bound::all(&mut g, &params);
        let l = regression_loglik_node(&mut g, &arch, &b, &[0.1, 0.2], &[0.3], 1.0, &noise, 0).unwrap();
        g.backward(l).unwrap();
        let mut out = vec![0.0; params.len()];
        g.accumulate_param_grads(&mut out).unwrap();
        (g.scalar(l), out)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn rebind_and_forward_reuse_the_tape() {
    let arch = small_dbnn();
    let p0 = arch.init_params(5, 1.0, 0.0);
    let p1 = arch.init_params(6, 1.0, 0.2);
    let noise = WienerNoise::sample(2, 5, 2, 0.2, NoiseKey { seed: 1, iteration: 0, element: 0 });
    let value_at = |p: &ParamSet| {
        let mut g = Graph::new();
        let b = Bound::all(&mut g, p);
        let l = regression_loglik_node(&mut g, &arch, &b, &[0.1, 0.2], &[0.3], 1.0, &noise, 0).unwrap();
        (g, l)
    };
    let (mut g, l) = value_at(&p0);
    g.rebind(&p1);
    let replay = g.forward(l).unwrap();
    let (fresh, lf) = value_at(&p1);
    assert_eq!(replay, fresh.scalar(lf));
}
