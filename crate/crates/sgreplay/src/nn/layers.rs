//! Transformer building blocks: layer norm, multi-head attention with an
//! arbitrary additive mask, and pre-norm residual blocks.
//!
//! Parameters are registered up front (construction) and referenced by index
//! when a block is applied to a tape, so one parameter set serves many
//! forward passes.

use ndarray::Array2;
use rand::Rng;

use super::tape::{NodeId, ParamSet, Tape};

/// The additive score for masked-out attention pairs. Large enough that
/// `exp(x - max)` underflows to exactly 0.0 in f64, which makes causality
/// bit-exact rather than approximately suppressed.
pub const MASK_OFF: f64 = -1e30;

/// Gain/bias pair for one layer norm.
#[derive(Clone, Copy)]
pub struct LayerNormParams {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNormParams {
    pub fn init(params: &mut ParamSet, name: &str, d: usize) -> Self {
        let gain = params.push(format!("{name}.gain"), Array2::ones((1, d)));
        let bias = params.push_zeros(format!("{name}.bias"), 1, d);
        LayerNormParams { gain, bias }
    }

    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head attention projections. Heads are carved out of the projected
/// matrices by column slicing; `d` must divide evenly by `heads`.
#[derive(Clone, Copy)]
pub struct AttentionParams {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub heads: usize,
    pub d: usize,
}

impl AttentionParams {
    pub fn init(params: &mut ParamSet, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(d % heads == 0, "width {d} not divisible by {heads} heads");
        let std = 1.0 / (d as f64).sqrt();
        AttentionParams {
            wq: params.push_gauss(format!("{name}.wq"), d, d, std, rng),
            wk: params.push_gauss(format!("{name}.wk"), d, d, std, rng),
            wv: params.push_gauss(format!("{name}.wv"), d, d, std, rng),
            wo: params.push_gauss(format!("{name}.wo"), d, d, std, rng),
            heads,
            d,
        }
    }

    /// Attention with queries from `xq` (n rows) and keys/values from `xkv`
    /// (m rows). `mask` must be an `[n,m]` additive-bias node (0 where
    /// attention is allowed, [`MASK_OFF`] where it is not).
    pub fn apply(&self, tape: &mut Tape, xq: NodeId, xkv: NodeId, mask: NodeId) -> NodeId {
        let dh = self.d / self.heads;
        let wq = tape.param(self.wq);
        let wk = tape.param(self.wk);
        let wv = tape.param(self.wv);
        let q = tape.matmul(xq, wq);
        let k = tape.matmul(xkv, wk);
        let v = tape.matmul(xkv, wv);
        let scale = 1.0 / (dh as f64).sqrt();

        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = tape.slice_cols(q, cols.clone());
            let kh = tape.slice_cols(k, cols.clone());
            let vh = tape.slice_cols(v, cols);
            let kt = tape.transpose(kh);
            let raw = tape.matmul(qh, kt);
            let scaled = tape.scale(raw, scale);
            let biased = tape.add(scaled, mask);
            let attn = tape.softmax_rows(biased);
            head_outs.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&head_outs);
        let wo = tape.param(self.wo);
        tape.matmul(merged, wo)
    }
}

/// One pre-norm transformer block: `x += attn(ln1(x)); x += mlp(ln2(x))`
/// with a GELU MLP at 4x width.
#[derive(Clone)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub w_up: usize,
    pub b_up: usize,
    pub w_down: usize,
    pub b_down: usize,
}

impl BlockParams {
    pub fn init(params: &mut ParamSet, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        let hidden = 4 * d;
        BlockParams {
            ln1: LayerNormParams::init(params, &format!("{name}.ln1"), d),
            attn: AttentionParams::init(params, &format!("{name}.attn"), d, heads, rng),
            ln2: LayerNormParams::init(params, &format!("{name}.ln2"), d),
            w_up: params.push_gauss(format!("{name}.mlp.up"), d, hidden, std, rng),
            b_up: params.push_zeros(format!("{name}.mlp.up_bias"), 1, hidden),
            w_down: params.push_gauss(
                format!("{name}.mlp.down"),
                hidden,
                d,
                1.0 / (hidden as f64).sqrt(),
                rng,
            ),
            b_down: params.push_zeros(format!("{name}.mlp.down_bias"), 1, d),
        }
    }

    /// Self-attention over `x` under `mask` (`[n,n]` additive bias).
    pub fn apply(&self, tape: &mut Tape, x: NodeId, mask: NodeId) -> NodeId {
        let normed = self.ln1.apply(tape, x);
        let att = self.attn.apply(tape, normed, normed, mask);
        let x = tape.add(x, att);

        let normed = self.ln2.apply(tape, x);
        let w_up = tape.param(self.w_up);
        let b_up = tape.param(self.b_up);
        let h = tape.matmul(normed, w_up);
        let h = tape.add_row(h, b_up);
        let h = tape.gelu(h);
        let w_down = tape.param(self.w_down);
        let b_down = tape.param(self.b_down);
        let h = tape.matmul(h, w_down);
        let h = tape.add_row(h, b_down);
        tape.add(x, h)
    }
}

/// A stack of pre-norm blocks followed by a final layer norm.
#[derive(Clone)]
pub struct TransformerStack {
    pub blocks: Vec<BlockParams>,
    pub ln_final: LayerNormParams,
    pub d: usize,
}

impl TransformerStack {
    pub fn init(params: &mut ParamSet, name: &str, depth: usize, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let blocks = (0..depth)
            .map(|i| BlockParams::init(params, &format!("{name}.block{i}"), d, heads, rng))
            .collect();
        TransformerStack {
            blocks,
            ln_final: LayerNormParams::init(params, &format!("{name}.ln_final"), d),
            d,
        }
    }

    pub fn apply(&self, tape: &mut Tape, mut x: NodeId, mask: NodeId) -> NodeId {
        for block in &self.blocks {
            x = block.apply(tape, x, mask);
        }
        self.ln_final.apply(tape, x)
    }
}

/// Lower-triangular causal mask: position i attends to positions <= i.
pub fn causal_mask(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if j <= i { 0.0 } else { MASK_OFF })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// A perturbation after position t must not change outputs at or
    /// before t — exactly, not just within tolerance.
    #[test]
    fn causal_mask_is_bit_exact() {
        let mut r = rng::stream(7, "layers-test", 0);
        let mut params = ParamSet::new();
        let stack = TransformerStack::init(&mut params, "t", 2, 16, 4, &mut r);

        let n = 6;
        let base = Array2::from_shape_fn((n, 16), |_| r.random::<f64>() - 0.5);
        let mut bumped = base.clone();
        for c in 0..16 {
            bumped[[n - 1, c]] += 3.0; // perturb only the last position
        }

        let run = |input: Array2<f64>| -> Array2<f64> {
            let mut tape = Tape::new(&params);
            let x = tape.input(input);
            let mask = tape.input(causal_mask(n));
            let y = stack.apply(&mut tape, x, mask);
            tape.value(y).clone()
        };
        let ya = run(base);
        let yb = run(bumped);
        for i in 0..n - 1 {
            for c in 0..16 {
                assert_eq!(ya[[i, c]].to_bits(), yb[[i, c]].to_bits(), "row {i} col {c}");
            }
        }
        // And the perturbed position itself must differ (sanity).
        assert_ne!(ya[[n - 1, 0]].to_bits(), yb[[n - 1, 0]].to_bits());
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut r = rng::stream(8, "layers-test", 0);
        let mut params = ParamSet::new();
        let block = BlockParams::init(&mut params, "b", 8, 2, &mut r);
        let input = Array2::from_shape_fn((3, 8), |_| r.random::<f64>() - 0.5);
        let mask = causal_mask(3);

        let build = |t: &mut Tape| -> NodeId {
            let x = t.input(input.clone());
            let m = t.input(mask.clone());
            let y = block.apply(t, x, m);
            t.cross_entropy(y, &[1, 5, 0], &[1.0, 1.0, 1.0])
        };

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; params.len()];
        {
            let mut tape = Tape::new(&params);
            let root = build(&mut tape);
            tape.backward(root, 1.0, &mut grads);
        }

        // Spot-check a handful of coordinates in every parameter.
        let h = 1e-5;
        let mut probe = rng::stream(8, "layers-probe", 1);
        for pidx in 0..params.len() {
            let dim = params.get(pidx).dim();
            for _ in 0..3 {
                let rr = probe.random_range(0..dim.0);
                let cc = probe.random_range(0..dim.1);
                let orig = params.get(pidx)[[rr, cc]];
                params.get_mut(pidx)[[rr, cc]] = orig + h;
                let fp = {
                    let mut t = Tape::new(&params);
                    let root = build(&mut t);
                    t.scalar(root)
                };
                params.get_mut(pidx)[[rr, cc]] = orig - h;
                let fm = {
                    let mut t = Tape::new(&params);
                    let root = build(&mut t);
                    t.scalar(root)
                };
                params.get_mut(pidx)[[rr, cc]] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let analytic = grads[pidx].as_ref().map_or(0.0, |g| g[[rr, cc]]);
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "{} [{rr},{cc}]: analytic {analytic} vs numeric {numeric}",
                    params.name(pidx)
                );
            }
        }
    }
}
