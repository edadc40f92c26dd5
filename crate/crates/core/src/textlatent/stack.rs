//! The text autoencoder whose middle layer defines the latent space: the
//! lower blocks encode tokens into latents, the upper blocks plus the LM
//! head decode latents back to per-position vocabulary logits in parallel.

use ladx_nn::layers::{BlockShape, LayerNorm, Linear, TransformerBlock, INIT_STD};
use ladx_nn::{ops, Bound, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textlatent::{zero_special_rows, LatentSeq, LatentStats, TokenSeq, Vocabulary, DEFAULT_STATS_EPS};

pub const ENC_PREFIX: &str = "text.enc";
pub const DEC_PREFIX: &str = "text.dec";
pub const HEAD_PREFIX: &str = "text.lm_head";

const CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub dim: usize,
    /// Total transformer layers of the autoencoder.
    pub layers: usize,
    /// How many of them belong to the encoder.
    pub split: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Captions used to estimate the latent statistics.
    pub stats_samples: usize,
    pub stats_eps: f64,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig { dim: 256, layers: 4, split: 2, heads: 4, ffn: 1024, stats_samples: 2000, stats_eps: DEFAULT_STATS_EPS }
    }
}

impl TextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split == 0 || self.split >= self.layers {
            return Err(Error::Config(format!("encoder split {} must lie in 1..{}", self.split, self.layers)));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!("text dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TextStack {
    pub dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    tok_emb: ParamId,
    enc_pos: ParamId,
    enc_blocks: Vec<TransformerBlock>,
    enc_ln: LayerNorm,
    dec_pos: ParamId,
    dec_blocks: Vec<TransformerBlock>,
    dec_ln: LayerNorm,
    lm_head: Linear,
}

impl TextStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &TextConfig,
        vocab_size: usize,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.dim;
        let shape = BlockShape { dim: d, heads: cfg.heads, ffn: cfg.ffn, cross: false, causal: false };
        let tok_emb = store.add_normal(&format!("{ENC_PREFIX}_tok"), &[vocab_size, d], INIT_STD, rng);
        let enc_pos = store.add_normal(&format!("{ENC_PREFIX}_pos"), &[max_len, d], INIT_STD, rng);
        let enc_blocks =
            (0..cfg.split).map(|i| TransformerBlock::new(store, &format!("{ENC_PREFIX}.{i}"), shape, rng)).collect();
        let enc_ln = LayerNorm::new(store, &format!("{ENC_PREFIX}_ln"), d);
        let dec_pos = store.add_normal(&format!("{DEC_PREFIX}_pos"), &[max_len, d], INIT_STD, rng);
        let dec_blocks = (cfg.split..cfg.layers)
            .map(|i| TransformerBlock::new(store, &format!("{DEC_PREFIX}.{i}"), shape, rng))
            .collect();
        let dec_ln = LayerNorm::new(store, &format!("{DEC_PREFIX}_ln"), d);
        let lm_head = Linear::new(store, HEAD_PREFIX, d, vocab_size, rng);
        TextStack { dim: d, max_len, vocab_size, tok_emb, enc_pos, enc_blocks, enc_ln, dec_pos, dec_blocks, dec_ln, lm_head }
    }

    pub fn encoder_layers(&self) -> usize {
        self.enc_blocks.len()
    }

    pub fn decoder_layers(&self) -> usize {
        self.dec_blocks.len()
    }

    /// Token ids (`batch * max_len`, row-major) to latents `[B, L, d]`.
    pub fn encode_var<T: Scalar>(&self, p: &Bound<T>, ids: &[usize]) -> Var<T> {
        let l = self.max_len;
        assert_eq!(ids.len() % l, 0, "ids must hold whole sequences");
        let b = ids.len() / l;
        let emb = ops::embedding(p.get(self.tok_emb), ids);
        let mut h = ops::reshape(&ops::add_tiled(&emb, p.get(self.enc_pos)), vec![b, l, self.dim]);
        for blk in &self.enc_blocks {
            h = blk.forward(p, &h, None);
        }
        self.enc_ln.forward(p, &h)
    }

    /// Latents `[B, L, d]` to logits `[B, L, V]`, all positions at once.
    pub fn decode_var<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let mut h = ops::add_tiled(x, p.get(self.dec_pos));
        for blk in &self.dec_blocks {
            h = blk.forward(p, &h, None);
        }
        let h = self.dec_ln.forward(p, &h);
        self.lm_head.forward(p, &h)
    }

    /// Raw encoder latents, one per sequence.
    pub fn encode(&self, store: &ParamStore<f32>, seqs: &[TokenSeq], vocab: &Vocabulary) -> Vec<LatentSeq> {
        let p = store.bind(false);
        let (l, d) = (self.max_len, self.dim);
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(CHUNK) {
            let ids: Vec<usize> = chunk.iter().flat_map(|s| s.ids().iter().copied()).collect();
            let h = self.encode_var(&p, &ids);
            for (i, seq) in chunk.iter().enumerate() {
                let vals = h.value().data()[i * l * d..(i + 1) * l * d].to_vec();
                out.push(LatentSeq::new(Tensor::new(vec![l, d], vals), seq.special_mask(vocab)).expect("encoder output shape"));
            }
        }
        out
    }

    /// Diffusion targets: `reassign(normalize(encode(c)))`, flattened to `[B, L, d]`.
    pub fn clean_latents(
        &self,
        store: &ParamStore<f32>,
        stats: &LatentStats,
        seqs: &[TokenSeq],
        vocab: &Vocabulary,
    ) -> Tensor<f32> {
        let p = store.bind(false);
        let (l, d) = (self.max_len, self.dim);
        let mut data = Vec::with_capacity(seqs.len() * l * d);
        for chunk in seqs.chunks(CHUNK) {
            let ids: Vec<usize> = chunk.iter().flat_map(|s| s.ids().iter().copied()).collect();
            let h = self.encode_var(&p, &ids);
            let mut v = h.value().data().to_vec();
            stats.normalize_slice(&mut v);
            let mask: Vec<bool> = chunk.iter().flat_map(|s| s.special_mask(vocab)).collect();
            zero_special_rows(&mut v, &mask);
            data.extend(v);
        }
        Tensor::new(vec![seqs.len(), l, d], data)
    }

    /// Logits `[B, L, V]` for latents `[B, L, d]`, no gradient.
    pub fn decode_logits(&self, store: &ParamStore<f32>, x: &Tensor<f32>) -> Tensor<f32> {
        let p = store.bind(false);
        let b = x.shape()[0];
        let per = self.max_len * self.dim;
        let mut parts = Vec::new();
        for start in (0..b).step_by(CHUNK) {
            let end = (start + CHUNK).min(b);
            let chunk = Tensor::new(vec![end - start, self.max_len, self.dim], x.data()[start * per..end * per].to_vec());
            parts.push(self.decode_var(&p, &Var::constant(chunk)).value().clone());
        }
        Tensor::stack_rows(&parts)
    }
}

/// Per-row argmax and max softmax probability of `[.., V]` logits.
pub fn argmax_with_confidence(logits: &Tensor<f32>) -> (Vec<usize>, Vec<f32>) {
    let v = logits.last_dim();
    let mut ids = Vec::with_capacity(logits.rows());
    let mut conf = Vec::with_capacity(logits.rows());
    for row in logits.data().chunks(v) {
        let (best, &mx) = row.iter().enumerate().fold((0, &f32::NEG_INFINITY), |acc, (i, x)| if *x > *acc.1 { (i, x) } else { acc });
        let denom: f64 = row.iter().map(|&x| ((x - mx) as f64).exp()).sum();
        ids.push(best);
        conf.push((1.0 / denom) as f32);
    }
    (ids, conf)
}

/// Statistics of encoder latents over the non-special positions of `seqs`.
pub fn estimate_stats(
    stack: &TextStack,
    store: &ParamStore<f32>,
    seqs: &[TokenSeq],
    eps: f64,
    vocab: &Vocabulary,
) -> Result<LatentStats> {
    if seqs.len() < super::MIN_STATS_SAMPLES {
        return Err(Error::TooFewSamples { needed: super::MIN_STATS_SAMPLES, got: seqs.len() });
    }
    LatentStats::from_latents(&stack.encode(store, seqs, vocab), eps)
}
