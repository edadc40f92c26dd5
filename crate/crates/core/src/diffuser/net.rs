use ladx_nn::layers::{BlockShape, LayerNorm, Linear, TransformerBlock, INIT_STD};
use ladx_nn::{ops, Bound, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIFFUSER_PREFIX: &str = "diffuser";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffuserConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl Default for DiffuserConfig {
    fn default() -> Self {
        DiffuserConfig { blocks: 6, dim: 256, heads: 4, ffn: 1024 }
    }
}

impl DiffuserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.heads == 0 || self.dim % self.heads != 0 || self.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "diffuser needs >= 1 block and an even dim divisible by heads (got {} blocks, dim {}, {} heads)",
                self.blocks, self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Sinusoidal features of integer timesteps, `[t.len(), dim]`.
pub fn timestep_features<T: Scalar>(t: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let row_start = out.len();
        out.resize(row_start + dim, T::zero());
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let a = step as f64 * freq;
            out[row_start + i] = T::from_f64_lossy(a.sin());
            out[row_start + half + i] = T::from_f64_lossy(a.cos());
        }
    }
    Tensor::new(vec![t.len(), dim], out)
}

/// Transformer predicting the clean latent from a noisy one.
///
/// Input rows are `[x_t ; self_cond]` projected to the model width, plus a
/// learned position embedding and a timestep embedding shared by all
/// positions. Every block cross-attends to the condition slots.
#[derive(Clone, Debug)]
pub struct Diffuser {
    pub dim: usize,
    pub latent_dim: usize,
    pub max_len: usize,
    pub slots: usize,
    in_proj: Linear,
    pos: ParamId,
    time_hidden: Linear,
    time_out: Linear,
    cond_pos: ParamId,
    blocks: Vec<TransformerBlock>,
    out_ln: LayerNorm,
    out_proj: Linear,
}

impl Diffuser {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &DiffuserConfig,
        latent_dim: usize,
        max_len: usize,
        slots: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.dim;
        let name = |s: &str| format!("{DIFFUSER_PREFIX}.{s}");
        let shape = BlockShape { dim: d, heads: cfg.heads, ffn: cfg.ffn, cross: true, causal: false };
        Diffuser {
            dim: d,
            latent_dim,
            max_len,
            slots,
            in_proj: Linear::new(store, &name("in_proj"), 2 * latent_dim, d, rng),
            pos: store.add_normal(&name("pos"), &[max_len, d], INIT_STD, rng),
            time_hidden: Linear::new(store, &name("time.0"), d, d, rng),
            time_out: Linear::new(store, &name("time.1"), d, d, rng),
            cond_pos: store.add_normal(&name("cond_pos"), &[slots, d], INIT_STD, rng),
            blocks: (0..cfg.blocks).map(|i| TransformerBlock::new(store, &name(&format!("blocks.{i}")), shape, rng)).collect(),
            out_ln: LayerNorm::new(store, &name("out_ln"), d),
            out_proj: Linear::new(store, &name("out_proj"), d, latent_dim, rng),
        }
    }

    /// `x_t`, `self_cond`: `[B, L, latent_dim]`; `cond`: `[B, slots, dim]`;
    /// one timestep per batch element. Returns the predicted clean latent.
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x_t: &Var<T>, self_cond: &Var<T>, t: &[usize], cond: &Var<T>) -> Var<T> {
        let b = t.len();
        let (l, d) = (self.max_len, self.dim);
        assert_eq!(x_t.shape(), [b, l, self.latent_dim], "noisy latent shape");
        assert_eq!(self_cond.shape(), x_t.shape(), "self-conditioning shape");
        assert_eq!(cond.shape(), [b, self.slots, d], "condition shape");
        let features = timestep_features::<T>(t, d);
        let temb = self.time_out.forward(p, &ops::gelu(&self.time_hidden.forward(p, &Var::constant(features))));
        let h = self.in_proj.forward(p, &ops::concat_last(x_t, self_cond));
        let h = ops::add_tiled(&h, p.get(self.pos));
        let mut h = ops::add_grouped(&h, &temb, l);
        let context = ops::add_tiled(cond, p.get(self.cond_pos));
        for blk in &self.blocks {
            h = blk.forward(p, &h, Some(&context));
        }
        self.out_proj.forward(p, &self.out_ln.forward(p, &h))
    }
}
