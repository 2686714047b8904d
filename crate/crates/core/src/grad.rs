//! Define-by-run reverse-mode differentiation over small dense tensors.
//!
//! A [`Graph`] is an append-only tape. Every node is evaluated eagerly when it
//! is pushed, so the tape is always in topological order and values are
//! available to the caller while the graph is being built (the SDE solver
//! needs them for its divergence guard). Parameter leaves remember where they
//! live in a [`ParamSet`] so a backward pass can scatter gradients straight
//! back into a flat buffer.
//!
//! Values are column-major vectors or row-major matrices of `f64`; a scalar is
//! a 1x1 tensor. Operand shapes are checked when a node is pushed and never
//! broadcast implicitly.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::params::{BlockId, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn len(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn is_vector(self) -> bool {
        self.cols == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

const ZERO_SLOT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    Param { offset: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    /// scalar node times any node
    MulScalar(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Affine { w: NodeId, b: NodeId, x: NodeId },
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sum(NodeId),
    LogSumExp(NodeId),
    /// inputs live in `links[start..start + count]`
    Concat { start: usize, count: usize },
    /// `out[i] = in[map[i]]`, or 0 where `map[i] == ZERO_SLOT`
    Gather { input: NodeId, map: usize },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    shape: Shape,
    offset: usize,
    needs_grad: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Evaluated,
    Stale,
}

/// Append-only expression tape.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<f64>,
    links: Vec<NodeId>,
    maps: Vec<Vec<u32>>,
    grads: Vec<f64>,
    state: State,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            values: Vec::new(),
            links: Vec::new(),
            maps: Vec::new(),
            grads: Vec::new(),
            state: State::Evaluated,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.index()].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.index()];
        &self.values[n.offset..n.offset + n.shape.len()]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    /// Gradient of the last backward pass with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        let n = &self.nodes[id.index()];
        self.grads.get(n.offset..n.offset + n.shape.len())
    }

    fn push(&mut self, op: Op, shape: Shape, needs_grad: bool) -> NodeId {
        let offset = self.values.len();
        self.values.resize(offset + shape.len(), 0.0);
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, shape, offset, needs_grad });
        self.eval(id.index());
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.index()].needs_grad
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape { op, left: sa, right: sb });
        }
        Ok(sa)
    }

    // ---- leaves -------------------------------------------------------------

    pub fn constant(&mut self, shape: Shape, data: &[f64]) -> Result<NodeId> {
        if data.len() != shape.len() {
            return Err(Error::Shape { op: "constant", left: shape, right: Shape::vector(data.len()) });
        }
        let id = self.push(Op::Const, shape, false);
        let off = self.nodes[id.index()].offset;
        self.values[off..off + data.len()].copy_from_slice(data);
        Ok(id)
    }

    pub fn vector(&mut self, data: &[f64]) -> NodeId {
        let id = self.push(Op::Const, Shape::vector(data.len()), false);
        let off = self.nodes[id.index()].offset;
        self.values[off..off + data.len()].copy_from_slice(data);
        id
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.vector(&[v])
    }

    /// Leaf bound to block `block` of `params`.
    pub fn param(&mut self, params: &ParamSet, block: BlockId) -> NodeId {
        let b = params.layout().block(block);
        let shape = Shape::matrix(b.rows, b.cols);
        let offset = b.offset;
        let id = self.push(Op::Param { offset }, shape, true);
        let off = self.nodes[id.index()].offset;
        self.values[off..off + shape.len()].copy_from_slice(params.block(block));
        id
    }

    /// Overwrites every parameter leaf with the values in `params`. The graph
    /// must be re-run with [`Graph::forward`] before the next backward pass.
    pub fn rebind(&mut self, params: &ParamSet) {
        for n in &self.nodes {
            if let Op::Param { offset } = n.op {
                let len = n.shape.len();
                self.values[n.offset..n.offset + len]
                    .copy_from_slice(&params.values()[offset..offset + len]);
            }
        }
        self.state = State::Stale;
    }

    // ---- operations ---------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("add", a, b)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), s, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("sub", a, b)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), s, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), s, ng))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let (s, ng) = (self.shape(a), self.needs(a));
        self.push(Op::Scale(a, c), s, ng)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let (s, ng) = (self.shape(a), self.needs(a));
        self.push(Op::AddConst(a, c), s, ng)
    }

    /// `s * a` for a 1x1 node `s`.
    pub fn mul_scalar(&mut self, s: NodeId, a: NodeId) -> Result<NodeId> {
        if self.shape(s) != Shape::SCALAR {
            return Err(Error::Shape { op: "mul_scalar", left: self.shape(s), right: Shape::SCALAR });
        }
        let ng = self.needs(s) || self.needs(a);
        let shape = self.shape(a);
        Ok(self.push(Op::MulScalar(s, a), shape, ng))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if !sv.is_vector() || sm.cols != sv.rows {
            return Err(Error::Shape { op: "matvec", left: sm, right: sv });
        }
        let ng = self.needs(m) || self.needs(v);
        Ok(self.push(Op::MatVec(m, v), Shape::vector(sm.rows), ng))
    }

    /// `w x + b`.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (sw, sb, sx) = (self.shape(w), self.shape(b), self.shape(x));
        if !sx.is_vector() || sw.cols != sx.rows {
            return Err(Error::Shape { op: "affine", left: sw, right: sx });
        }
        if sb != Shape::vector(sw.rows) {
            return Err(Error::Shape { op: "affine bias", left: Shape::vector(sw.rows), right: sb });
        }
        let ng = self.needs(w) || self.needs(b) || self.needs(x);
        Ok(self.push(Op::Affine { w, b, x }, Shape::vector(sw.rows), ng))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a))
    }

    fn unary(&mut self, a: NodeId, op: Op) -> NodeId {
        let (s, ng) = (self.shape(a), self.needs(a));
        self.push(op, s, ng)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let ng = self.needs(a);
        self.push(Op::Sum(a), Shape::SCALAR, ng)
    }

    pub fn logsumexp(&mut self, a: NodeId) -> NodeId {
        let ng = self.needs(a);
        self.push(Op::LogSumExp(a), Shape::SCALAR, ng)
    }

    /// Stacks vectors end to end.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut rows = 0;
        let mut ng = false;
        for &p in parts {
            let s = self.shape(p);
            if !s.is_vector() {
                return Err(Error::Shape { op: "concat", left: s, right: Shape::vector(s.len()) });
            }
            rows += s.rows;
            ng |= self.needs(p);
        }
        let start = self.links.len();
        self.links.extend_from_slice(parts);
        Ok(self.push(Op::Concat { start, count: parts.len() }, Shape::vector(rows), ng))
    }

    /// Builds a tensor of shape `shape` whose entry `i` is `input[map[i]]`, or
    /// zero where `map[i]` is `None`.
    pub fn gather(&mut self, input: NodeId, map: &[Option<usize>], shape: Shape) -> Result<NodeId> {
        let n_in = self.shape(input).len();
        if map.len() != shape.len() || map.iter().flatten().any(|&i| i >= n_in) {
            return Err(Error::Shape { op: "gather", left: self.shape(input), right: shape });
        }
        let compact = map.iter().map(|m| m.map_or(ZERO_SLOT, |i| i as u32)).collect();
        self.maps.push(compact);
        let ng = self.needs(input);
        Ok(self.push(Op::Gather { input, map: self.maps.len() - 1 }, shape, ng))
    }

    // ---- evaluation ---------------------------------------------------------

    /// Re-evaluates every node from its leaves and returns the value of
    /// `loss`.
    pub fn forward(&mut self, loss: NodeId) -> Result<f64> {
        if self.shape(loss) != Shape::SCALAR {
            return Err(Error::NonScalarLoss(self.shape(loss)));
        }
        for i in 0..self.nodes.len() {
            self.eval(i);
        }
        self.state = State::Evaluated;
        Ok(self.scalar(loss))
    }

    fn eval(&mut self, i: usize) {
        let node = self.nodes[i];
        let (before, rest) = self.values.split_at_mut(node.offset);
        let out = &mut rest[..node.shape.len()];
        let nodes = &self.nodes;
        let val = |id: NodeId| -> &[f64] {
            let n = &nodes[id.index()];
            &before[n.offset..n.offset + n.shape.len()]
        };
        match node.op {
            Op::Const | Op::Param { .. } => {}
            Op::Add(a, b) => zip_into(out, val(a), val(b), |x, y| x + y),
            Op::Sub(a, b) => zip_into(out, val(a), val(b), |x, y| x - y),
            Op::Mul(a, b) => zip_into(out, val(a), val(b), |x, y| x * y),
            Op::Scale(a, c) => map_into(out, val(a), |x| c * x),
            Op::AddConst(a, c) => map_into(out, val(a), |x| x + c),
            Op::MulScalar(s, a) => {
                let s = val(s)[0];
                map_into(out, val(a), |x| s * x)
            }
            Op::MatVec(m, v) => {
                let cols = nodes[m.index()].shape.cols;
                matvec_into(out, val(m), val(v), cols);
            }
            Op::Affine { w, b, x } => {
                let cols = nodes[w.index()].shape.cols;
                matvec_into(out, val(w), val(x), cols);
                for (o, &bb) in out.iter_mut().zip(val(b)) {
                    *o += bb;
                }
            }
            Op::Tanh(a) => map_into(out, val(a), math::tanh),
            Op::Softplus(a) => map_into(out, val(a), math::softplus),
            Op::Exp(a) => map_into(out, val(a), math::exp),
            Op::Log(a) => map_into(out, val(a), math::ln),
            Op::Square(a) => map_into(out, val(a), |x| x * x),
            Op::Sum(a) => out[0] = val(a).iter().sum(),
            Op::LogSumExp(a) => out[0] = math::logsumexp(val(a)),
            Op::Concat { start, count } => {
                let mut pos = 0;
                for &p in &self.links[start..start + count] {
                    let v = val(p);
                    out[pos..pos + v.len()].copy_from_slice(v);
                    pos += v.len();
                }
            }
            Op::Gather { input, map } => {
                let src = val(input);
                for (o, &m) in out.iter_mut().zip(&self.maps[map]) {
                    *o = if m == ZERO_SLOT { 0.0 } else { src[m as usize] };
                }
            }
        }
    }

    /// Backpropagates from the scalar `loss` with upstream gradient 1.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.backward_scaled(loss, 1.0)
    }

    /// Backpropagates from `loss` with upstream gradient `seed`.
    pub fn backward_scaled(&mut self, loss: NodeId, seed: f64) -> Result<()> {
        if self.state != State::Evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        if self.shape(loss) != Shape::SCALAR {
            return Err(Error::NonScalarLoss(self.shape(loss)));
        }
        self.grads.clear();
        self.grads.resize(self.values.len(), 0.0);
        self.grads[self.nodes[loss.index()].offset] = seed;

        for i in (0..=loss.index()).rev() {
            let node = self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let (gin, grest) = self.grads.split_at_mut(node.offset);
            let g = &grest[..node.shape.len()];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let nodes = &self.nodes;
            let values = &self.values;
            let val = |id: NodeId| -> &[f64] {
                let n = &nodes[id.index()];
                &values[n.offset..n.offset + n.shape.len()]
            };
            let out = &values[node.offset..node.offset + node.shape.len()];
            // Input gradient slots are disjoint from `g` because inputs were
            // pushed earlier, but two inputs may alias the same node.
            macro_rules! slot {
                ($id:expr) => {{
                    let n = &nodes[$id.index()];
                    if n.needs_grad {
                        Some(n.offset..n.offset + n.shape.len())
                    } else {
                        None
                    }
                }};
            }
            match node.op {
                Op::Const | Op::Param { .. } => {}
                Op::Add(a, b) => {
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, _| gi);
                    }
                    if let Some(r) = slot!(b) {
                        acc(&mut gin[r], g, |gi, _| gi);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, _| gi);
                    }
                    if let Some(r) = slot!(b) {
                        acc(&mut gin[r], g, |gi, _| -gi);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, k| gi * vb[k]);
                    }
                    if let Some(r) = slot!(b) {
                        acc(&mut gin[r], g, |gi, k| gi * va[k]);
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, _| c * gi);
                    }
                }
                Op::AddConst(a, _) => {
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, _| gi);
                    }
                }
                Op::MulScalar(s, a) => {
                    let (vs, va) = (val(s)[0], val(a));
                    if let Some(r) = slot!(s) {
                        gin[r.start] += g.iter().zip(va).map(|(gi, x)| gi * x).sum::<f64>();
                    }
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, _| vs * gi);
                    }
                }
                Op::MatVec(m, v) => {
                    let cols = nodes[m.index()].shape.cols;
                    let (vm, vv) = (val(m), val(v));
                    if let Some(r) = slot!(m) {
                        outer_acc(&mut gin[r], g, vv);
                    }
                    if let Some(r) = slot!(v) {
                        transpose_matvec_acc(&mut gin[r], vm, g, cols);
                    }
                }
                Op::Affine { w, b, x } => {
                    let cols = nodes[w.index()].shape.cols;
                    let (vw, vx) = (val(w), val(x));
                    if let Some(r) = slot!(w) {
                        outer_acc(&mut gin[r], g, vx);
                    }
                    if let Some(r) = slot!(b) {
                        acc(&mut gin[r], g, |gi, _| gi);
                    }
                    if let Some(r) = slot!(x) {
                        transpose_matvec_acc(&mut gin[r], vw, g, cols);
                    }
                }
                Op::Tanh(a) => {
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, k| gi * (1.0 - out[k] * out[k]));
                    }
                }
                Op::Softplus(a) => {
                    let va = val(a);
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, k| gi * math::sigmoid(va[k]));
                    }
                }
                Op::Exp(a) => {
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, k| gi * out[k]);
                    }
                }
                Op::Log(a) => {
                    let va = val(a);
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, k| gi / va[k]);
                    }
                }
                Op::Square(a) => {
                    let va = val(a);
                    if let Some(r) = slot!(a) {
                        acc(&mut gin[r], g, |gi, k| 2.0 * va[k] * gi);
                    }
                }
                Op::Sum(a) => {
                    if let Some(r) = slot!(a) {
                        let g0 = g[0];
                        gin[r].iter_mut().for_each(|x| *x += g0);
                    }
                }
                Op::LogSumExp(a) => {
                    let (va, y, g0) = (val(a), out[0], g[0]);
                    if let Some(r) = slot!(a) {
                        if y.is_finite() {
                            for (x, &v) in gin[r].iter_mut().zip(va) {
                                *x += g0 * math::exp(v - y);
                            }
                        }
                    }
                }
                Op::Concat { start, count } => {
                    let mut pos = 0;
                    for &p in &self.links[start..start + count] {
                        let len = nodes[p.index()].shape.len();
                        if let Some(r) = slot!(p) {
                            for (x, gi) in gin[r].iter_mut().zip(&g[pos..pos + len]) {
                                *x += gi;
                            }
                        }
                        pos += len;
                    }
                }
                Op::Gather { input, map } => {
                    if let Some(r) = slot!(input) {
                        let dst = &mut gin[r];
                        for (&m, gi) in self.maps[map].iter().zip(g) {
                            if m != ZERO_SLOT {
                                dst[m as usize] += gi;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds the gradient of every parameter leaf into `out`, a flat buffer
    /// laid out like the bound [`ParamSet`]. Parameters that do not reach the
    /// loss receive exactly zero.
    pub fn accumulate_param_grads(&self, out: &mut [f64]) -> Result<()> {
        if self.grads.len() != self.values.len() {
            return Err(Error::BackwardBeforeForward);
        }
        for n in &self.nodes {
            if let Op::Param { offset } = n.op {
                let len = n.shape.len();
                for (o, g) in out[offset..offset + len].iter_mut().zip(&self.grads[n.offset..n.offset + len]) {
                    *o += g;
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn map_into(out: &mut [f64], a: &[f64], f: impl Fn(f64) -> f64) {
    for (o, &x) in out.iter_mut().zip(a) {
        *o = f(x);
    }
}

#[inline]
fn zip_into(out: &mut [f64], a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}

#[inline]
fn acc(dst: &mut [f64], g: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (k, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
        *d += f(gi, k);
    }
}

#[inline]
pub(crate) fn matvec_into(out: &mut [f64], m: &[f64], v: &[f64], cols: usize) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

#[inline]
fn outer_acc(dst: &mut [f64], g: &[f64], v: &[f64]) {
    let cols = v.len();
    for (row, &gi) in dst.chunks_exact_mut(cols).zip(g) {
        if gi != 0.0 {
            for (d, &vj) in row.iter_mut().zip(v) {
                *d += gi * vj;
            }
        }
    }
}

#[inline]
fn transpose_matvec_acc(dst: &mut [f64], m: &[f64], g: &[f64], cols: usize) {
    for (row, &gi) in m.chunks_exact(cols).zip(g) {
        if gi != 0.0 {
            for (d, &mij) in dst.iter_mut().zip(row) {
                *d += mij * gi;
            }
        }
    }
}

/// Central finite-difference check of an analytic gradient.
///
/// `loss` evaluates the objective at the given parameters and, when asked,
/// adds its analytic gradient into the supplied buffer. Returns
/// `max_p |analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(mut loss: F, params: &ParamSet, step: f64) -> Result<f64>
where
    F: FnMut(&ParamSet, Option<&mut [f64]>) -> Result<f64>,
{
    let mut analytic = vec![0.0; params.len()];
    let base = loss(params, Some(&mut analytic))?;
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss { param: usize::MAX });
    }
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + step;
        let up = loss(&probe, None)?;
        probe.values_mut()[i] = orig - step;
        let down = loss(&probe, None)?;
        probe.values_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss { param: i });
        }
        let numeric = (up - down) / (2.0 * step);
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
