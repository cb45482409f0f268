//! The autodiff tape.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes over
//! 2-D `f64` arrays; [`Tape::backward`] walks the list in reverse and returns
//! per-parameter gradients. Parameters live outside the tape in a
//! [`ParamSet`] and are shared by reference-counted handles, so building a
//! graph never copies weight matrices.
//!
//! Reductions are plain sequential loops; for a fixed graph the result is
//! bit-reproducible run to run.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;
const LN_EPS: f64 = 1e-5;

/// Tanh-approximation GELU, shared by the tape op and the no-grad forward
/// paths so both produce identical values.
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

/// Row-wise layer norm used by both the tape op and the no-grad forward.
pub(crate) fn layer_norm_rows(
    xv: &Array2<f64>,
    gain: &Array2<f64>,
    bias: &Array2<f64>,
) -> Array2<f64> {
    let g = gain.row(0);
    let b = bias.row(0);
    let d = xv.ncols() as f64;
    let mut out = Array2::zeros(xv.dim());
    for (r, row) in xv.rows().into_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (c, v) in row.iter().enumerate() {
            out[[r, c]] = (v - mean) * inv * g[c] + b[c];
        }
    }
    out
}

/// Named parameter arrays. Handles are `Arc` so tapes can reference them
/// without copying; the optimizer mutates them through `Arc::make_mut` while
/// no tape is alive.
#[derive(Default, Clone)]
pub struct ParamSet {
    arrays: Vec<Arc<Array2<f64>>>,
    names: Vec<String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, array: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.arrays.push(Arc::new(array));
        self.arrays.len() - 1
    }

    /// Gaussian-initialized parameter.
    pub fn push_gauss(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> usize {
        let a = Array2::from_shape_fn((rows, cols), |_| gauss(rng) * std);
        self.push(name, a)
    }

    /// Zero-initialized parameter.
    pub fn push_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.push(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, idx: usize) -> &Array2<f64> {
        &self.arrays[idx]
    }

    pub fn handle(&self, idx: usize) -> Arc<Array2<f64>> {
        Arc::clone(&self.arrays[idx])
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        Arc::make_mut(&mut self.arrays[idx])
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }

    /// Flattens every parameter into one vector (row-major, param order).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for a in &self.arrays {
            out.extend(a.iter().copied());
        }
        out
    }

    /// Overwrites every parameter from a flat vector written by [`Self::to_flat`].
    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat size mismatch");
        let mut off = 0;
        for i in 0..self.arrays.len() {
            let a = self.get_mut(i);
            for v in a.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two uniform draws per sample keeps the stream alignment simple.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(usize),
    /// Row gather from a parameter table (embedding lookup).
    Embed {
        pidx: usize,
        indices: Arc<Vec<usize>>,
    },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `[n,d] + [1,d]` broadcast over rows.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    SoftmaxRows(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, Range<usize>),
    SliceCols(NodeId, Range<usize>),
    Transpose(NodeId),
    /// Weighted sum of per-row cross-entropies; value is `[1,1]`.
    CrossEntropy {
        logits: NodeId,
        targets: Arc<Vec<usize>>,
        weights: Arc<Vec<f64>>,
    },
    /// Sum of squared entries; value is `[1,1]`.
    SumSquares(NodeId),
}

struct Node {
    value: Arc<Array2<f64>>,
    op: Op,
}

/// A recorded forward computation.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `[1,1]` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, pidx: usize) -> NodeId {
        let value = self.params.handle(pidx);
        self.nodes.push(Node {
            value,
            op: Op::Param(pidx),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Embedding lookup: rows of parameter `pidx` at `indices`.
    pub fn embed(&mut self, pidx: usize, indices: &[usize]) -> NodeId {
        let table = self.params.get(pidx);
        let d = table.ncols();
        let mut out = Array2::zeros((indices.len(), d));
        for (r, &ix) in indices.iter().enumerate() {
            out.row_mut(r).assign(&table.row(ix));
        }
        self.push(
            out,
            Op::Embed {
                pidx,
                indices: Arc::new(indices.to_vec()),
            },
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a[n,d] + b[1,d]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bv = self.value(b).row(0).to_owned();
        let v = self.value(a) + &bv;
        self.push(v, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu_scalar);
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalization with learnable gain/bias (`[1,d]` each).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let out = layer_norm_rows(self.value(x), self.value(gain), self.value(bias));
        self.push(out, Op::LayerNorm { x, gain, bias })
    }

    /// Row-wise softmax. Entries at or below `-1e30` underflow to exactly
    /// zero probability, which the causal-masking contract relies on.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut out = Array2::zeros(av.dim());
        for (r, row) in av.rows().into_iter().enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, v) in row.iter().enumerate() {
                let e = (v - m).exp();
                out[[r, c]] = e;
                sum += e;
            }
            for c in 0..av.ncols() {
                out[[r, c]] /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows shape");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols shape");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, range: Range<usize>) -> NodeId {
        let v = self
            .value(a)
            .slice(s![range.clone(), ..])
            .to_owned();
        self.push(v, Op::SliceRows(a, range))
    }

    pub fn slice_cols(&mut self, a: NodeId, range: Range<usize>) -> NodeId {
        let v = self
            .value(a)
            .slice(s![.., range.clone()])
            .to_owned();
        self.push(v, Op::SliceCols(a, range))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Weighted sum of per-row cross-entropies against integer targets.
    /// Rows with weight 0 contribute nothing to value or gradient.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[f64]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        assert_eq!(lv.nrows(), weights.len());
        let mut total = 0.0;
        for (r, row) in lv.rows().into_iter().enumerate() {
            if weights[r] == 0.0 {
                continue;
            }
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += weights[r] * (lse - row[targets[r]]);
        }
        let v = Array2::from_elem((1, 1), total);
        self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: Arc::new(targets.to_vec()),
                weights: Arc::new(weights.to_vec()),
            },
        )
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).iter().map(|v| v * v).sum::<f64>();
        self.push(Array2::from_elem((1, 1), total), Op::SumSquares(a))
    }

    /// Backpropagates from a `[1,1]` root with upstream weight `seed` and
    /// accumulates parameter gradients into `grads` (indexed like the
    /// `ParamSet`; `None` slots are allocated on first touch).
    pub fn backward(&self, root: NodeId, seed: f64, grads: &mut [Option<Array2<f64>>]) {
        assert_eq!(grads.len(), self.params.len(), "grad buffer size");
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut node_grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[root.0] = Some(Array2::from_elem((1, 1), seed));

        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = node_grads[i].take() else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(pidx) => accumulate(&mut grads[*pidx], &dy),
                Op::Embed { pidx, indices } => {
                    let table = self.params.get(*pidx);
                    let g = grads[*pidx].get_or_insert_with(|| Array2::zeros(table.dim()));
                    for (r, &ix) in indices.iter().enumerate() {
                        let mut row = g.row_mut(ix);
                        row += &dy.row(r);
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    add_grad(&mut node_grads, *a, dy.dot(&bv.t()));
                    add_grad(&mut node_grads, *b, av.t().dot(&dy));
                }
                Op::Add(a, b) => {
                    add_grad(&mut node_grads, *a, dy.clone());
                    add_grad(&mut node_grads, *b, dy);
                }
                Op::AddRow(a, b) => {
                    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_grad(&mut node_grads, *a, dy);
                    add_grad(&mut node_grads, *b, db);
                }
                Op::Mul(a, b) => {
                    let da = &dy * self.value(*b);
                    let db = &dy * self.value(*a);
                    add_grad(&mut node_grads, *a, da);
                    add_grad(&mut node_grads, *b, db);
                }
                Op::Scale(a, k) => add_grad(&mut node_grads, *a, &dy * *k),
                Op::Gelu(a) => {
                    let xv = self.value(*a);
                    let mut dx = dy;
                    dx.zip_mut_with(xv, |g, &x| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *g *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    });
                    add_grad(&mut node_grads, *a, dx);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let xv = self.value(*x);
                    let g = self.value(*gain).row(0).to_owned();
                    let d = xv.ncols() as f64;
                    let mut dx = Array2::zeros(xv.dim());
                    let mut dgain = Array1::<f64>::zeros(xv.ncols());
                    let mut dbias = Array1::<f64>::zeros(xv.ncols());
                    for (r, row) in xv.rows().into_iter().enumerate() {
                        let mean = row.sum() / d;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let dyr = dy.row(r);
                        let mut sum_gdy = 0.0;
                        let mut sum_gdy_xhat = 0.0;
                        for c in 0..xv.ncols() {
                            let gdy = g[c] * dyr[c];
                            sum_gdy += gdy;
                            sum_gdy_xhat += gdy * xhat[c];
                            dgain[c] += dyr[c] * xhat[c];
                            dbias[c] += dyr[c];
                        }
                        for c in 0..xv.ncols() {
                            let gdy = g[c] * dyr[c];
                            dx[[r, c]] =
                                inv * (gdy - sum_gdy / d - xhat[c] * sum_gdy_xhat / d);
                        }
                    }
                    add_grad(&mut node_grads, *x, dx);
                    add_grad(&mut node_grads, *gain, dgain.insert_axis(Axis(0)));
                    add_grad(&mut node_grads, *bias, dbias.insert_axis(Axis(0)));
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(NodeId(i));
                    let mut dx = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let yr = y.row(r);
                        let dyr = dy.row(r);
                        let dot: f64 = yr.iter().zip(dyr.iter()).map(|(a, b)| a * b).sum();
                        for c in 0..y.ncols() {
                            dx[[r, c]] = yr[c] * (dyr[c] - dot);
                        }
                    }
                    add_grad(&mut node_grads, *a, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let n = self.value(*p).nrows();
                        let slice = dy.slice(s![r0..r0 + n, ..]).to_owned();
                        add_grad(&mut node_grads, *p, slice);
                        r0 += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let n = self.value(*p).ncols();
                        let slice = dy.slice(s![.., c0..c0 + n]).to_owned();
                        add_grad(&mut node_grads, *p, slice);
                        c0 += n;
                    }
                }
                Op::SliceRows(a, range) => {
                    let full = self.value(*a);
                    let mut da = Array2::zeros(full.dim());
                    da.slice_mut(s![range.clone(), ..]).assign(&dy);
                    add_grad(&mut node_grads, *a, da);
                }
                Op::SliceCols(a, range) => {
                    let full = self.value(*a);
                    let mut da = Array2::zeros(full.dim());
                    da.slice_mut(s![.., range.clone()]).assign(&dy);
                    add_grad(&mut node_grads, *a, da);
                }
                Op::Transpose(a) => add_grad(&mut node_grads, *a, dy.t().to_owned()),
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                } => {
                    let up = dy[[0, 0]];
                    let lv = self.value(*logits);
                    let mut dl = Array2::zeros(lv.dim());
                    for (r, row) in lv.rows().into_iter().enumerate() {
                        let w = weights[r];
                        if w == 0.0 {
                            continue;
                        }
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
                        for c in 0..lv.ncols() {
                            let p = (row[c] - m).exp() / denom;
                            let ind = if c == targets[r] { 1.0 } else { 0.0 };
                            dl[[r, c]] = up * w * (p - ind);
                        }
                    }
                    add_grad(&mut node_grads, *logits, dl);
                }
                Op::SumSquares(a) => {
                    let up = dy[[0, 0]];
                    let da = self.value(*a) * (2.0 * up);
                    add_grad(&mut node_grads, *a, da);
                }
            }
        }
    }
}

fn add_grad(grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
    match &mut grads[id.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: &Array2<f64>) {
    match slot {
        Some(g) => *g += delta,
        none => *none = Some(delta.clone()),
    }
}

/// Merges gradient buffers: `into += from`, moving allocations when possible.
pub fn merge_grads(into: &mut [Option<Array2<f64>>], from: Vec<Option<Array2<f64>>>) {
    for (slot, g) in into.iter_mut().zip(from) {
        if let Some(g) = g {
            match slot {
                Some(acc) => *acc += &g,
                none => *none = Some(g),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_with(arrays: Vec<Array2<f64>>) -> ParamSet {
        let mut p = ParamSet::new();
        for (i, a) in arrays.into_iter().enumerate() {
            p.push(format!("p{i}"), a);
        }
        p
    }

    /// Central-difference check of a scalar-valued tape builder.
    fn grad_check(params: &mut ParamSet, build: impl Fn(&mut Tape) -> NodeId) {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; params.len()];
        {
            let mut tape = Tape::new(params);
            let root = build(&mut tape);
            tape.backward(root, 1.0, &mut grads);
        }
        let h = 1e-5;
        for pidx in 0..params.len() {
            let dim = params.get(pidx).dim();
            for r in 0..dim.0 {
                for c in 0..dim.1 {
                    let orig = params.get(pidx)[[r, c]];
                    params.get_mut(pidx)[[r, c]] = orig + h;
                    let fp = {
                        let mut t = Tape::new(params);
                        let root = build(&mut t);
                        t.scalar(root)
                    };
                    params.get_mut(pidx)[[r, c]] = orig - h;
                    let fm = {
                        let mut t = Tape::new(params);
                        let root = build(&mut t);
                        t.scalar(root)
                    };
                    params.get_mut(pidx)[[r, c]] = orig;
                    let numeric = (fp - fm) / (2.0 * h);
                    let analytic = grads[pidx].as_ref().map_or(0.0, |g| g[[r, c]]);
                    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        (analytic - numeric).abs() / denom < 1e-5,
                        "param {pidx} [{r},{c}]: analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn grad_matmul_chain() {
        let mut rng = crate::rng::stream(1, "tape-test", 0);
        let a = Array2::from_shape_fn((3, 4), |_| rng.random::<f64>() - 0.5);
        let b = Array2::from_shape_fn((4, 2), |_| rng.random::<f64>() - 0.5);
        let mut params = params_with(vec![a, b]);
        grad_check(&mut params, |t| {
            let a = t.param(0);
            let b = t.param(1);
            let y = t.matmul(a, b);
            let g = t.gelu(y);
            t.sum_squares(g)
        });
    }

    #[test]
    fn grad_layernorm_softmax_ce() {
        let mut rng = crate::rng::stream(2, "tape-test", 0);
        let x = Array2::from_shape_fn((3, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
        let g = Array2::from_shape_fn((1, 5), |_| rng.random::<f64>() + 0.5);
        let b = Array2::from_shape_fn((1, 5), |_| rng.random::<f64>() - 0.5);
        let mut params = params_with(vec![x, g, b]);
        grad_check(&mut params, |t| {
            let x = t.param(0);
            let g = t.param(1);
            let b = t.param(2);
            let n = t.layer_norm(x, g, b);
            t.cross_entropy(n, &[1, 0, 4], &[1.0, 0.5, 1.0])
        });
    }

    #[test]
    fn grad_embed_concat_slice() {
        let mut rng = crate::rng::stream(3, "tape-test", 0);
        let table = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>() - 0.5);
        let w = Array2::from_shape_fn((4, 3), |_| rng.random::<f64>() - 0.5);
        let mut params = params_with(vec![table, w]);
        grad_check(&mut params, |t| {
            let e = t.embed(0, &[2, 5, 2]);
            let w = t.param(1);
            let h = t.matmul(e, w);
            let top = t.slice_rows(h, 0..2);
            let sm = t.softmax_rows(top);
            let joined = t.concat_cols(&[sm, top]);
            t.sum_squares(joined)
        });
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let params = ParamSet::new();
        let mut t = Tape::new(&params);
        let x = t.input(Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1e31, 0.0, 1.0]).unwrap());
        let y = t.softmax_rows(x);
        let v = t.value(y);
        for r in 0..2 {
            let s: f64 = v.row(r).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Entry under the mask floor underflows to exactly zero.
        assert_eq!(v[[1, 0]], 0.0);
    }
}
