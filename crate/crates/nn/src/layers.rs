//! Transformer building blocks over a [`ParamStore`].

use rand::Rng;

use crate::ops;
use crate::{Bound, ParamId, ParamStore, Scalar, Var};

/// Standard deviation used for weight initialization.
pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        Linear::with_std(store, name, din, dout, INIT_STD, rng)
    }

    pub fn with_std<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_normal(&format!("{name}.weight"), &[din, dout], std, rng);
        let b = store.add_const(&format!("{name}.bias"), &[dout], 0.0);
        Linear { w, b }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        ops::linear(x, p.get(self.w), Some(p.get(self.b)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = store.add_const(&format!("{name}.gamma"), &[dim], 1.0);
        let beta = store.add_const(&format!("{name}.beta"), &[dim], 0.0);
        LayerNorm { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        ops::layer_norm(x, p.get(self.gamma), p.get(self.beta), LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(dim % heads == 0, "{name}: width {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    /// `x` is `[B, L, D]`; keys and values come from `context` (`[B, M, D]`)
    /// when given, otherwise from `x` itself.
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>, context: Option<&Var<T>>, causal: bool) -> Var<T> {
        let kv_src = context.unwrap_or(x);
        let q = self.q.forward(p, x);
        let k = self.k.forward(p, kv_src);
        let v = self.v.forward(p, kv_src);
        let a = ops::attention(&q, &k, &v, self.heads, causal);
        self.o.forward(p, &a)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let h = ops::gelu(&self.up.forward(p, x));
        self.down.forward(p, &h)
    }
}

/// Pre-norm transformer block: self-attention, optional cross-attention
/// (queries from the sequence, keys/values from a context), feed-forward.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross: Option<(LayerNorm, MultiHeadAttention)>,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
    pub causal: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockShape {
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub cross: bool,
    pub causal: bool,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: BlockShape, rng: &mut impl Rng) -> Self {
        let BlockShape { dim, heads, ffn, cross, causal } = shape;
        let ln_self = LayerNorm::new(store, &format!("{name}.ln_self"), dim);
        let self_attn = MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng);
        let cross = cross.then(|| {
            (
                LayerNorm::new(store, &format!("{name}.ln_cross"), dim),
                MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng),
            )
        });
        let ln_ffn = LayerNorm::new(store, &format!("{name}.ln_ffn"), dim);
        let ffn = FeedForward::new(store, &format!("{name}.ffn"), dim, ffn, rng);
        TransformerBlock { ln_self, self_attn, cross, ln_ffn, ffn, causal }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>, context: Option<&Var<T>>) -> Var<T> {
        let h = self.ln_self.forward(p, x);
        let mut x = ops::add(x, &self.self_attn.forward(p, &h, None, self.causal));
        if let Some((ln, attn)) = &self.cross {
            let ctx = context.expect("cross-attention block needs a context");
            let h = ln.forward(p, &x);
            x = ops::add(&x, &attn.forward(p, &h, Some(ctx), false));
        }
        let h = self.ln_ffn.forward(p, &x);
        ops::add(&x, &self.ffn.forward(p, &h))
    }
}
