//! Drift and diffusion networks and the regression head.
//!
//! Both networks read the state `h` and, optionally, normalized flow time
//! `tau = t / T` appended as one extra input. The drift returns a vector in
//! `R^D`; the diffusion returns raw outputs that are shaped into a `D x P`
//! matrix according to its [`DiffusionForm`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::grad::{matvec_into, Graph, NodeId, Shape};
use crate::math;
use crate::params::{BlockId, BlockKind, ParamLayout, ParamSet};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh(x),
            Activation::Softplus => math::softplus(x),
        }
    }
}

impl core::fmt::Display for Activation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        })
    }
}

impl core::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            _ => Err(Error::InvalidConfig(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub state_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub time_input: bool,
}

impl MlpSpec {
    pub fn input_width(&self) -> usize {
        self.state_dim + usize::from(self.time_input)
    }

    pub fn validate(&self, role: &str) -> Result<()> {
        if self.state_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!("{role}: every layer size must be at least 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: BlockId,
    b: BlockId,
    w_offset: usize,
    b_offset: usize,
    rows: usize,
    cols: usize,
}

/// A fully connected network whose weights live in a shared [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Appends this network's blocks to `layout` as `{prefix}.w{i}` /
    /// `{prefix}.b{i}`.
    pub fn register(spec: MlpSpec, prefix: &str, layout: &mut ParamLayout) -> Self {
        let mut widths = vec![spec.input_width()];
        widths.extend_from_slice(&spec.hidden);
        widths.push(spec.output_dim);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (cols, rows) = (pair[0], pair[1]);
                let w = layout.push(format!("{prefix}.w{i}"), BlockKind::Weight, rows, cols);
                let b = layout.push(format!("{prefix}.b{i}"), BlockKind::Bias, rows, 1);
                Layer {
                    w,
                    b,
                    w_offset: layout.block(w).offset,
                    b_offset: layout.block(b).offset,
                    rows,
                    cols,
                }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weight_blocks(&self) -> impl Iterator<Item = (BlockId, BlockId)> + '_ {
        self.layers.iter().map(|l| (l.w, l.b))
    }

    /// Weights `N(0, scale^2 / fan_in)`, biases zero.
    pub fn init(&self, params: &mut ParamSet, seed: u64, scale: f64) {
        for l in &self.layers {
            let mut rng = rng::stream(seed, Purpose::Init, l.w.0 as u64, 0, 0);
            let sd = scale / math::sqrt(l.cols as f64);
            for w in params.block_mut(l.w) {
                *w = sd * rng::standard_normal(&mut rng);
            }
            params.block_mut(l.b).iter_mut().for_each(|b| *b = 0.0);
        }
    }

    fn check_state(&self, len: usize) -> Result<()> {
        if len != self.spec.state_dim {
            return Err(Error::Dimension { what: "network input", expected: self.spec.state_dim, found: len });
        }
        Ok(())
    }

    /// Plain evaluation on a flat parameter vector.
    pub fn eval(&self, values: &[f64], h: &[f64], tau: f64) -> Result<Vec<f64>> {
        self.check_state(h.len())?;
        let mut x: Vec<f64> = Vec::with_capacity(self.spec.input_width());
        x.extend_from_slice(h);
        if self.spec.time_input {
            x.push(tau);
        }
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.rows];
            matvec_into(&mut y, &values[l.w_offset..l.w_offset + l.rows * l.cols], &x, l.cols);
            for (yi, bi) in y.iter_mut().zip(&values[l.b_offset..l.b_offset + l.rows]) {
                *yi += bi;
                if i != last {
                    *yi = self.spec.activation.apply(*yi);
                }
            }
            x = y;
        }
        Ok(x)
    }

    /// Taped evaluation with parameters taken from `bound`.
    pub fn node(&self, g: &mut Graph, bound: &Bound, h: NodeId, tau: f64) -> Result<NodeId> {
        self.check_state(g.shape(h).len())?;
        let mut x = if self.spec.time_input {
            let t = g.scalar_const(tau);
            g.concat(&[h, t])?
        } else {
            h
        };
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = g.affine(bound.get(l.w), bound.get(l.b), x)?;
            if i != last {
                x = match self.spec.activation {
                    Activation::Tanh => g.tanh(x),
                    Activation::Softplus => g.softplus(x),
                };
            }
        }
        Ok(x)
    }
}

/// Builds a standalone parameter block for one network.
pub fn init_params(spec: &MlpSpec, seed: u64, scale: f64) -> (Mlp, ParamSet) {
    let mut layout = ParamLayout::new();
    let mlp = Mlp::register(spec.clone(), "net", &mut layout);
    let mut params = ParamSet::zeros(layout);
    mlp.init(&mut params, seed, scale);
    (mlp, params)
}

/// Parameter leaves of one graph, indexed by block.
#[derive(Debug, Clone)]
pub struct Bound(Vec<NodeId>);

impl Bound {
    pub fn all(g: &mut Graph, params: &ParamSet) -> Self {
        let ids = (0..params.layout().blocks().len()).map(|i| g.param(params, BlockId(i))).collect();
        Bound(ids)
    }

    pub fn get(&self, id: BlockId) -> NodeId {
        self.0[id.0]
    }
}

/// Starting point for inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    /// Weights are `N(0, scale^2 / fan_in)`.
    pub scale: f64,
    /// Extra factor on the diffusion net's output-layer weights; small
    /// values start the flow close to deterministic.
    pub diffusion_output_scale: f64,
    /// Bias of the softplus-mapped diagonal outputs (ignored for low-rank).
    pub diffusion_diag_bias: f64,
    pub log_obs_noise: f64,
}

impl InitSpec {
    /// Every layer treated alike, zero biases.
    pub fn plain() -> Self {
        Self { scale: 1.0, diffusion_output_scale: 1.0, diffusion_diag_bias: 0.0, log_obs_noise: 0.0 }
    }
}

impl Default for InitSpec {
    /// Diffusion starts near `softplus(-3) ~ 0.05` per dimension.
    fn default() -> Self {
        Self { scale: 1.0, diffusion_output_scale: 0.1, diffusion_diag_bias: -3.0, log_obs_noise: -1.0 }
    }
}

/// Structure of the diffusion matrix `L(h, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DiffusionForm {
    /// `L = diag(softplus(r))`, `P = D`.
    Diagonal,
    /// Lower-triangular `L` with softplus diagonal, `P = D`.
    #[default]
    Cholesky,
    /// Unconstrained `D x P` matrix.
    LowRank(usize),
}

impl DiffusionForm {
    pub fn rank(self, d: usize) -> usize {
        match self {
            DiffusionForm::Diagonal | DiffusionForm::Cholesky => d,
            DiffusionForm::LowRank(p) => p,
        }
    }

    /// Number of raw network outputs needed to fill `L`.
    pub fn raw_len(self, d: usize) -> usize {
        match self {
            DiffusionForm::Diagonal => d,
            DiffusionForm::Cholesky => d * (d + 1) / 2,
            DiffusionForm::LowRank(p) => d * p,
        }
    }

    pub fn validate(self, d: usize) -> Result<()> {
        if let DiffusionForm::LowRank(p) = self {
            if p == 0 || p > d {
                return Err(Error::InvalidConfig(format!("low-rank diffusion needs 0 < P <= D, got P={p}, D={d}")));
            }
        }
        Ok(())
    }

    /// Raw-output index for each entry of the row-major `D x P` matrix.
    /// Cholesky raw outputs hold the `D` diagonal entries first, then the
    /// strict lower triangle row by row.
    fn matrix_map(self, d: usize) -> Vec<Option<usize>> {
        match self {
            DiffusionForm::Diagonal => (0..d * d).map(|k| (k / d == k % d).then_some(k / d)).collect(),
            DiffusionForm::Cholesky => {
                let mut map = vec![None; d * d];
                let mut next = d;
                for i in 0..d {
                    map[i * d + i] = Some(i);
                    for j in 0..i {
                        map[i * d + j] = Some(next);
                        next += 1;
                    }
                }
                map
            }
            DiffusionForm::LowRank(p) => (0..d * p).map(Some).collect(),
        }
    }
}

impl core::fmt::Display for DiffusionForm {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DiffusionForm::Diagonal => f.write_str("diagonal"),
            DiffusionForm::Cholesky => f.write_str("cholesky"),
            DiffusionForm::LowRank(p) => write!(f, "lowrank:{p}"),
        }
    }
}

impl core::str::FromStr for DiffusionForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(DiffusionForm::Diagonal),
            "cholesky" => Ok(DiffusionForm::Cholesky),
            _ => s
                .strip_prefix("lowrank:")
                .and_then(|p| p.parse().ok())
                .map(DiffusionForm::LowRank)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown diffusion form `{s}`"))),
        }
    }
}

/// Everything needed to rebuild a [`DbnnArch`] and its parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub state_dim: usize,
    /// Width of the linear readout; `None` reads the state directly.
    pub output_dim: Option<usize>,
    pub drift_hidden: Vec<usize>,
    pub diffusion_hidden: Vec<usize>,
    pub activation: Activation,
    pub drift_time_input: bool,
    pub diffusion_time_input: bool,
    pub form: DiffusionForm,
}

impl ArchSpec {
    /// One hidden layer of 50 tanh units in both networks.
    pub fn regression(state_dim: usize, output_dim: usize, form: DiffusionForm) -> Self {
        Self {
            state_dim,
            output_dim: Some(output_dim),
            drift_hidden: vec![50],
            diffusion_hidden: vec![50],
            activation: Activation::Tanh,
            drift_time_input: true,
            diffusion_time_input: true,
            form,
        }
    }

    /// State-space model for time series: no readout, autonomous dynamics.
    pub fn timeseries(state_dim: usize, form: DiffusionForm) -> Self {
        Self {
            state_dim,
            output_dim: None,
            drift_hidden: vec![50],
            diffusion_hidden: vec![50],
            activation: Activation::Tanh,
            drift_time_input: false,
            diffusion_time_input: false,
            form,
        }
    }

    pub fn readout_dim(&self) -> usize {
        self.output_dim.unwrap_or(self.state_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    a: BlockId,
    b: BlockId,
}

/// Drift net, diffusion net, optional linear head and observation noise over
/// one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnnArch {
    spec: ArchSpec,
    drift: Mlp,
    diffusion: Mlp,
    head: Option<Head>,
    log_obs_noise: BlockId,
    layout: ParamLayout,
    l_map: Vec<Option<usize>>,
}

impl DbnnArch {
    pub fn new(spec: ArchSpec) -> Result<Self> {
        let d = spec.state_dim;
        spec.form.validate(d)?;
        if spec.output_dim == Some(0) {
            return Err(Error::InvalidConfig(String::from("output dimension must be at least 1")));
        }
        let drift_spec = MlpSpec {
            state_dim: d,
            hidden: spec.drift_hidden.clone(),
            output_dim: d,
            activation: spec.activation,
            time_input: spec.drift_time_input,
        };
        let diffusion_spec = MlpSpec {
            state_dim: d,
            hidden: spec.diffusion_hidden.clone(),
            output_dim: spec.form.raw_len(d),
            activation: spec.activation,
            time_input: spec.diffusion_time_input,
        };
        drift_spec.validate("drift")?;
        diffusion_spec.validate("diffusion")?;

        let mut layout = ParamLayout::new();
        let drift = Mlp::register(drift_spec, "drift", &mut layout);
        let diffusion = Mlp::register(diffusion_spec, "diffusion", &mut layout);
        let head = spec.output_dim.map(|o| Head {
            a: layout.push("head.a", BlockKind::Weight, o, d),
            b: layout.push("head.b", BlockKind::Bias, o, 1),
        });
        let log_obs_noise = layout.push("log_obs_noise", BlockKind::ObsNoise, 1, 1);
        let l_map = spec.form.matrix_map(d);
        Ok(Self { spec, drift, diffusion, head, log_obs_noise, layout, l_map })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn rank(&self) -> usize {
        self.spec.form.rank(self.spec.state_dim)
    }

    pub fn drift(&self) -> &Mlp {
        &self.drift
    }

    pub fn diffusion(&self) -> &Mlp {
        &self.diffusion
    }

    pub fn log_obs_noise_block(&self) -> BlockId {
        self.log_obs_noise
    }

    /// Plain initialization: every layer `N(0, scale^2 / fan_in)`, biases
    /// zero.
    pub fn init_params(&self, seed: u64, scale: f64, log_obs_noise: f64) -> ParamSet {
        self.init_params_with(seed, &InitSpec { scale, log_obs_noise, ..InitSpec::plain() })
    }

    pub fn init_params_with(&self, seed: u64, init: &InitSpec) -> ParamSet {
        let mut params = ParamSet::zeros(self.layout.clone());
        self.drift.init(&mut params, seed, init.scale);
        self.diffusion.init(&mut params, seed, init.scale);
        let (w_out, b_out) = self.diffusion.weight_blocks().last().expect("diffusion net has an output layer");
        params.block_mut(w_out).iter_mut().for_each(|w| *w *= init.diffusion_output_scale);
        if !matches!(self.spec.form, DiffusionForm::LowRank(_)) {
            // The first `D` raw outputs are the softplus-mapped diagonal.
            params.block_mut(b_out)[..self.spec.state_dim].iter_mut().for_each(|b| *b = init.diffusion_diag_bias);
        }
        if let Some(head) = &self.head {
            let mut rng = rng::stream(seed, Purpose::Init, head.a.0 as u64, 0, 0);
            let sd = init.scale / math::sqrt(self.spec.state_dim as f64);
            for w in params.block_mut(head.a) {
                *w = sd * rng::standard_normal(&mut rng);
            }
        }
        params.block_mut(self.log_obs_noise)[0] = init.log_obs_noise;
        params
    }

    pub fn obs_std(&self, values: &[f64]) -> f64 {
        math::exp(values[self.layout.block(self.log_obs_noise).offset])
    }

    // ---- plain evaluation ---------------------------------------------------

    pub fn drift_eval(&self, values: &[f64], h: &[f64], tau: f64) -> Result<Vec<f64>> {
        self.drift.eval(values, h, tau)
    }

    /// `L(h, tau)` as a row-major `D x P` matrix.
    pub fn diffusion_eval(&self, values: &[f64], h: &[f64], tau: f64) -> Result<Vec<f64>> {
        let raw = self.diffusion.eval(values, h, tau)?;
        let d = self.spec.state_dim;
        let shaped: Vec<f64> = match self.spec.form {
            DiffusionForm::Diagonal => raw.iter().map(|&r| math::softplus(r)).collect(),
            DiffusionForm::Cholesky => raw
                .iter()
                .enumerate()
                .map(|(i, &r)| if i < d { math::softplus(r) } else { r })
                .collect(),
            DiffusionForm::LowRank(_) => raw,
        };
        Ok(self.l_map.iter().map(|m| m.map_or(0.0, |i| shaped[i])).collect())
    }

    /// `L(h, tau) dw` without materializing `L` for the diagonal form.
    pub fn diffusion_apply_eval(&self, values: &[f64], h: &[f64], tau: f64, dw: &[f64]) -> Result<Vec<f64>> {
        let d = self.spec.state_dim;
        if let DiffusionForm::Diagonal = self.spec.form {
            let raw = self.diffusion.eval(values, h, tau)?;
            return Ok(raw.iter().zip(dw).map(|(&r, &w)| math::softplus(r) * w).collect());
        }
        let l = self.diffusion_eval(values, h, tau)?;
        let mut out = vec![0.0; d];
        matvec_into(&mut out, &l, dw, self.rank());
        Ok(out)
    }

    pub fn head_eval(&self, values: &[f64], h: &[f64]) -> Vec<f64> {
        match &self.head {
            None => h.to_vec(),
            Some(head) => {
                let (a, b) = (self.layout.block(head.a), self.layout.block(head.b));
                let mut y = vec![0.0; a.rows];
                matvec_into(&mut y, &values[a.range()], h, a.cols);
                for (yi, bi) in y.iter_mut().zip(&values[b.range()]) {
                    *yi += bi;
                }
                y
            }
        }
    }

    /// Head weights as `(a, b)` with `a` row-major `O x D`.
    pub fn head_values<'v>(&self, values: &'v [f64]) -> Option<(&'v [f64], &'v [f64])> {
        self.head.as_ref().map(|h| {
            (&values[self.layout.block(h.a).range()], &values[self.layout.block(h.b).range()])
        })
    }

    // ---- taped evaluation ---------------------------------------------------

    pub fn drift_node(&self, g: &mut Graph, bound: &Bound, h: NodeId, tau: f64) -> Result<NodeId> {
        self.drift.node(g, bound, h, tau)
    }

    /// Taped `L(h, tau)` with shape `D x P`.
    pub fn diffusion_node(&self, g: &mut Graph, bound: &Bound, h: NodeId, tau: f64) -> Result<NodeId> {
        let d = self.spec.state_dim;
        let raw = self.diffusion.node(g, bound, h, tau)?;
        let shaped = self.shape_raw(g, raw)?;
        g.gather(shaped, &self.l_map, Shape::matrix(d, self.rank()))
    }

    fn shape_raw(&self, g: &mut Graph, raw: NodeId) -> Result<NodeId> {
        let d = self.spec.state_dim;
        match self.spec.form {
            DiffusionForm::Diagonal => Ok(g.softplus(raw)),
            DiffusionForm::Cholesky => {
                let n = self.spec.form.raw_len(d);
                let diag_map: Vec<Option<usize>> = (0..d).map(Some).collect();
                let off_map: Vec<Option<usize>> = (d..n).map(Some).collect();
                let diag = g.gather(raw, &diag_map, Shape::vector(d))?;
                let diag = g.softplus(diag);
                if off_map.is_empty() {
                    return Ok(diag);
                }
                let off = g.gather(raw, &off_map, Shape::vector(n - d))?;
                g.concat(&[diag, off])
            }
            DiffusionForm::LowRank(_) => Ok(raw),
        }
    }

    /// Taped `L(h, tau) dw`.
    pub fn diffusion_apply_node(&self, g: &mut Graph, bound: &Bound, h: NodeId, tau: f64, dw: &[f64]) -> Result<NodeId> {
        let w = g.vector(dw);
        if let DiffusionForm::Diagonal = self.spec.form {
            let raw = self.diffusion.node(g, bound, h, tau)?;
            let diag = g.softplus(raw);
            return g.mul(diag, w);
        }
        let l = self.diffusion_node(g, bound, h, tau)?;
        g.matvec(l, w)
    }

    pub fn head_node(&self, g: &mut Graph, bound: &Bound, h: NodeId) -> Result<NodeId> {
        match &self.head {
            None => Ok(h),
            Some(head) => g.affine(bound.get(head.a), bound.get(head.b), h),
        }
    }

    pub fn log_obs_noise_node(&self, bound: &Bound) -> NodeId {
        bound.get(self.log_obs_noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn tiny(form: DiffusionForm, d: usize) -> DbnnArch {
        DbnnArch::new(ArchSpec {
            state_dim: d,
            output_dim: Some(1),
            drift_hidden: vec![4],
            diffusion_hidden: vec![4],
            activation: Activation::Tanh,
            drift_time_input: true,
            diffusion_time_input: true,
            form,
        })
        .unwrap()
    }

    #[test]
    fn zero_network_has_zero_drift() {
        let arch = tiny(DiffusionForm::Diagonal, 3);
        let params = ParamSet::zeros(arch.layout().clone());
        assert_eq!(arch.drift_eval(params.values(), &[1.0, -2.0, 0.5], 0.3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec { state_dim: 2, hidden: vec![], output_dim: 2, activation: Activation::Tanh, time_input: false };
        let (mlp, mut params) = init_params(&spec, 0, 1.0);
        params.values_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(mlp.eval(params.values(), &[1.0, 2.0], 0.0).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn diagonal_zero_raw_is_ln2_identity() {
        let arch = tiny(DiffusionForm::Diagonal, 2);
        let params = ParamSet::zeros(arch.layout().clone());
        let l = arch.diffusion_eval(params.values(), &[0.3, 0.1], 0.0).unwrap();
        let ln2 = core::f64::consts::LN_2;
        assert_eq!(l, vec![ln2, 0.0, 0.0, ln2]);
    }

    #[test]
    fn cholesky_zero_raw() {
        let arch = tiny(DiffusionForm::Cholesky, 2);
        let params = ParamSet::zeros(arch.layout().clone());
        let l = arch.diffusion_eval(params.values(), &[0.0, 0.0], 0.0).unwrap();
        let ln2 = core::f64::consts::LN_2;
        assert_eq!(l, vec![ln2, 0.0, 0.0, ln2]);
    }

    #[test]
    fn cholesky_layout_fills_lower_triangle() {
        assert_eq!(
            DiffusionForm::Cholesky.matrix_map(3),
            vec![Some(0), None, None, Some(3), Some(1), None, Some(4), Some(5), Some(2)]
        );
    }

    #[test]
    fn low_rank_shape() {
        let arch = tiny(DiffusionForm::LowRank(1), 3);
        let params = arch.init_params(1, 1.0, 0.0);
        assert_eq!(arch.diffusion_eval(params.values(), &[0.1, 0.2, 0.3], 0.5).unwrap().len(), 3);
        assert!(DbnnArch::new(ArchSpec { form: DiffusionForm::LowRank(4), ..tiny(DiffusionForm::Diagonal, 3).spec().clone() }).is_err());
    }

    #[test]
    fn form_round_trips_through_text() {
        for f in [DiffusionForm::Diagonal, DiffusionForm::Cholesky, DiffusionForm::LowRank(3)] {
            assert_eq!(f.to_string().parse::<DiffusionForm>().unwrap(), f);
        }
        assert!("full".parse::<DiffusionForm>().is_err());
    }

    #[test]
    fn wrong_state_dim_rejected() {
        let arch = tiny(DiffusionForm::Diagonal, 2);
        let params = ParamSet::zeros(arch.layout().clone());
        assert!(matches!(
            arch.drift_eval(params.values(), &[1.0], 0.0),
            Err(Error::Dimension { expected: 2, found: 1, .. })
        ));
    }

    #[test]
    fn same_seed_same_init() {
        let arch = tiny(DiffusionForm::Cholesky, 3);
        assert_eq!(arch.init_params(5, 1.0, 0.0), arch.init_params(5, 1.0, 0.0));
        assert_ne!(arch.init_params(5, 1.0, 0.0), arch.init_params(6, 1.0, 0.0));
        let zero = arch.init_params(5, 0.0, 0.0);
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taped_and_plain_agree() {
        for form in [DiffusionForm::Diagonal, DiffusionForm::Cholesky, DiffusionForm::LowRank(2)] {
            let arch = tiny(form, 3);
            let params = arch.init_params(11, 1.0, -0.5);
            let h = [0.4, -1.2, 0.9];
            let dw = [0.1, -0.3, 0.2];
            let mut g = Graph::new();
            let bound = Bound::all(&mut g, &params);
            let hn = g.vector(&h);
            let drift = arch.drift_node(&mut g, &bound, hn, 0.25).unwrap();
            assert_eq!(g.value(drift), arch.drift_eval(params.values(), &h, 0.25).unwrap().as_slice());
            let l = arch.diffusion_node(&mut g, &bound, hn, 0.25).unwrap();
            assert_eq!(g.value(l), arch.diffusion_eval(params.values(), &h, 0.25).unwrap().as_slice());
            let p = arch.rank();
            let applied = arch.diffusion_apply_node(&mut g, &bound, hn, 0.25, &dw[..p]).unwrap();
            let plain = arch.diffusion_apply_eval(params.values(), &h, 0.25, &dw[..p]).unwrap();
            for (a, b) in g.value(applied).iter().zip(&plain) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
