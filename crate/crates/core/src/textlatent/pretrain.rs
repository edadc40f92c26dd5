//! Stage-0 training of the text autoencoder on reconstruction.

use ladx_nn::optim::{clip_grad_norm, AdamW};
use ladx_nn::{ops, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::textlatent::{argmax_with_confidence, LatentStats, TextStack, TokenSeq, Vocabulary};
use crate::trainer::LrSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub grad_clip: f64,
    /// Std of Gaussian noise added to normalized latents before decoding.
    pub latent_noise: f64,
    /// Fraction of sequences whose input is partly blanked with `[MASK]`,
    /// so that infill anchors encoded among blanks still decode to themselves.
    pub blank_prob: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 2, batch_size: 64, peak_lr: 1e-3, warmup_ratio: 0.1, grad_clip: 1.0, latent_noise: 0.1, blank_prob: 0.25 }
    }
}

/// Per-dimension mean and inverse scale over the non-special rows of a batch.
fn batch_moments(values: &[f32], mask: &[bool], d: usize, eps: f64) -> (Vec<f32>, Vec<f32>) {
    let mut sum = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    let mut n = 0usize;
    for (row, &special) in values.chunks(d).zip(mask) {
        if special {
            continue;
        }
        n += 1;
        for j in 0..d {
            let x = row[j] as f64;
            sum[j] += x;
            sq[j] += x * x;
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let inv: Vec<f32> = sq.iter().zip(&mean).map(|(q, m)| (1.0 / ((q / n - m * m).max(0.0).sqrt() + eps)) as f32).collect();
    (mean.into_iter().map(|m| m as f32).collect(), inv)
}

/// Train the whole text stack to reconstruct its input through the
/// normalized, reassigned latent. Only `text.*` parameters are updated.
/// Returns the per-step loss trace.
pub fn pretrain_autoencoder(
    stack: &TextStack,
    store: &mut ParamStore<f32>,
    seqs: &[TokenSeq],
    vocab: &Vocabulary,
    cfg: &PretrainConfig,
    seed: u64,
    eps: f64,
    mut on_step: impl FnMut(u64, f64),
) -> Result<Vec<f64>> {
    if seqs.is_empty() {
        return Err(Error::Empty("pretraining corpus"));
    }
    let bs = cfg.batch_size.max(1);
    let per_epoch = seqs.len().div_ceil(bs) as u64;
    let schedule = LrSchedule::new(cfg.peak_lr, cfg.warmup_ratio, per_epoch * cfg.epochs as u64);
    store.set_all_trainable(false);
    store.set_trainable("text.", true);
    let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
    let (l, d) = (stack.max_len, stack.dim);
    let mut trace = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut rng::stream(seed, Purpose::Pretrain, epoch as u64));
        for batch in order.chunks(bs) {
            let mut ids: Vec<usize> = batch.iter().flat_map(|&i| seqs[i].ids().iter().copied()).collect();
            let mut targets: Vec<Option<usize>> = ids.iter().map(|&t| Some(t)).collect();
            if cfg.blank_prob > 0.0 {
                let mut r = rng::stream(seed, Purpose::Pretrain, (2 << 32) + step);
                blank_inputs(&mut ids, &mut targets, l, vocab, cfg.blank_prob, &mut r);
            }
            let mask: Vec<bool> = ids.iter().map(|&t| vocab.is_special(t)).collect();
            let p = store.bind(true);
            let h = stack.encode_var(&p, &ids);
            let (mean, inv) = batch_moments(h.value().data(), &mask, d, eps);
            let mut x = ops::standardize_rows(&h, &mean, &inv, &mask);
            if cfg.latent_noise > 0.0 {
                let mut r = rng::stream(seed, Purpose::Pretrain, (1 << 32) + step);
                let mut noise = rng::normal_vec(&mut r, batch.len() * l * d);
                noise.iter_mut().for_each(|z| *z *= cfg.latent_noise as f32);
                x = ops::add(&x, &Var::constant(Tensor::new(vec![batch.len(), l, d], noise)));
            }
            let logits = stack.decode_var(&p, &x);
            let loss = ops::cross_entropy(&logits, &targets);
            let value = loss.value().item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step, latent: 0.0, caption: value });
            }
            loss.backward();
            let mut grads = p.grads();
            drop(p);
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, cfg.grad_clip);
            }
            opt.update(store, &grads, schedule.at(step));
            on_step(step, value);
            trace.push(value);
            step += 1;
        }
    }
    Ok(trace)
}

/// With probability `prob` per sequence, keep each position after `[CLS]`
/// with a per-sequence rate drawn uniformly and turn the rest into `[MASK]`
/// with no target. Mirrors how infill anchors are encoded.
fn blank_inputs(
    ids: &mut [usize],
    targets: &mut [Option<usize>],
    max_len: usize,
    vocab: &Vocabulary,
    prob: f64,
    rng: &mut impl Rng,
) {
    for (seq, tgt) in ids.chunks_mut(max_len).zip(targets.chunks_mut(max_len)) {
        if !rng.random_bool(prob) {
            continue;
        }
        let keep: f64 = rng.random();
        for (id, t) in seq.iter_mut().zip(tgt.iter_mut()).skip(1) {
            if !rng.random_bool(keep) {
                *id = vocab.mask;
                *t = None;
            }
        }
    }
}

/// Fraction of non-padding positions recovered by
/// `argmax(decode(reassign(normalize(encode(c)))))`.
pub fn reconstruction_accuracy(
    stack: &TextStack,
    store: &ParamStore<f32>,
    stats: &LatentStats,
    seqs: &[TokenSeq],
    vocab: &Vocabulary,
) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    let x0 = stack.clean_latents(store, stats, seqs, vocab);
    let (pred, _) = argmax_with_confidence(&stack.decode_logits(store, &x0));
    let truth = seqs.iter().flat_map(|s| s.ids().iter().copied());
    let (mut hits, mut total) = (0usize, 0usize);
    for (&p, t) in pred.iter().zip(truth) {
        if t != vocab.pad {
            total += 1;
            hits += usize::from(p == t);
        }
    }
    hits as f64 / total.max(1) as f64
}
