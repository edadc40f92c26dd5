//! Left-to-right transformer captioner used as the sequential baseline.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use ladx_nn::layers::{BlockShape, LayerNorm, Linear, TransformerBlock, INIT_STD};
use ladx_nn::optim::{clip_grad_norm, AdamW};
use ladx_nn::{ops, Bound, ParamId, ParamStore, Scalar, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    config_digest, optimizer_meta, optimizer_tensors, params_to_tensors, restore_params, OptimizerMeta, RawCheckpoint,
    TensorData,
};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scenegen::{CondEncoder, CondFeatures, Example, Scene};
use crate::textlatent::{strip_specials, tokenize, Vocabulary};
use crate::trainer::LrSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub cond_slots: usize,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig { blocks: 6, dim: 256, heads: 4, ffn: 1024, max_len: 24, cond_slots: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArTrainConfig {
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for ArTrainConfig {
    fn default() -> Self {
        ArTrainConfig { peak_lr: 1e-3, warmup_ratio: 0.1, batch_size: 64, epochs: 2, seed: 0, grad_clip: 1.0 }
    }
}

/// One greedy generation.
#[derive(Clone, Debug, PartialEq)]
pub struct ArGeneration {
    pub caption: String,
    pub tokens: Vec<usize>,
    /// Tokens emitted, `[SEP]` included; one counted pass each.
    pub forward_passes: u64,
    pub wall_ms: f64,
}

pub struct ArModel {
    pub config: ArConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<f32>,
    pub cond: CondEncoder,
    tok_emb: ParamId,
    pos: ParamId,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    head: Linear,
    passes: AtomicU64,
}

impl ArModel {
    pub fn new(config: ArConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.heads == 0 || config.dim % config.heads != 0 || config.blocks == 0 {
            return Err(Error::Config(format!("invalid baseline shape {config:?}")));
        }
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, Purpose::Baseline, 0);
        let d = config.dim;
        let cond = CondEncoder::new(&mut store, d, config.cond_slots, &mut r);
        let tok_emb = store.add_normal("ar.tok_emb", &[vocab.len(), d], INIT_STD, &mut r);
        let pos = store.add_normal("ar.pos", &[config.max_len, d], INIT_STD, &mut r);
        let shape = BlockShape { dim: d, heads: config.heads, ffn: config.ffn, cross: true, causal: true };
        let blocks = (0..config.blocks).map(|i| TransformerBlock::new(&mut store, &format!("ar.blocks.{i}"), shape, &mut r)).collect();
        let ln = LayerNorm::new(&mut store, "ar.ln", d);
        let head = Linear::new(&mut store, "ar.head", d, vocab.len(), &mut r);
        Ok(ArModel { config, vocab, store, cond, tok_emb, pos, blocks, ln, head, passes: AtomicU64::new(0) })
    }

    pub fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    /// Logits `[B, k, V]` for prefixes `[B, k]` under conditions `[B, slots, d]`.
    fn logits<T: Scalar>(&self, p: &Bound<T>, prefix: &[usize], k: usize, cond: &Var<T>) -> Var<T> {
        let b = prefix.len() / k;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..k).collect();
        let h = ops::add(&ops::embedding(p.get(self.tok_emb), prefix), &ops::embedding(p.get(self.pos), &positions));
        let mut h = ops::reshape(&h, vec![b, k, self.config.dim]);
        for blk in &self.blocks {
            h = blk.forward(p, &h, Some(cond));
        }
        self.head.forward(p, &self.ln.forward(p, &h))
    }

    /// Teacher-forced next-token loss; targets after `[SEP]` are ignored.
    pub fn loss<T: Scalar>(&self, p: &Bound<T>, scenes: &[&Scene], ids: &[usize]) -> Var<T> {
        let l = self.config.max_len;
        let b = scenes.len();
        let k = l - 1;
        let prefix: Vec<usize> = ids.chunks(l).flat_map(|s| s[..k].iter().copied()).collect();
        let mut targets = Vec::with_capacity(b * k);
        for s in ids.chunks(l) {
            let sep = s.iter().position(|&t| t == self.vocab.sep).unwrap_or(k);
            targets.extend((1..l).map(|i| (i <= sep).then_some(s[i])));
        }
        let cond = self.cond.forward(p, &scenes.iter().map(|s| Some(*s)).collect::<Vec<_>>());
        ops::cross_entropy(&self.logits(p, &prefix, k, &cond), &targets)
    }

    pub fn encode_condition(&self, scene: &Scene) -> CondFeatures {
        self.cond.encode_condition(&self.store, scene)
    }

    /// Greedy decoding for a batch; each step is one counted pass.
    pub fn generate(&self, conds: &[&CondFeatures]) -> Vec<ArGeneration> {
        let start = Instant::now();
        let (b, l, v) = (conds.len(), self.config.max_len, self.vocab.len());
        let parts: Vec<_> = conds.iter().map(|c| c.values.clone()).collect();
        let cond = Var::constant(ladx_nn::Tensor::stack_rows(&parts).reshape(vec![b, self.config.cond_slots, self.config.dim]));
        let p = self.store.bind(false);
        let mut seqs: Vec<Vec<usize>> = vec![vec![self.vocab.cls]; b];
        let mut emitted = vec![0u64; b];
        let mut done = vec![false; b];
        for k in 1..l {
            if done.iter().all(|&d| d) {
                break;
            }
            self.passes.fetch_add(1, Ordering::Relaxed);
            let prefix: Vec<usize> = seqs.iter().flatten().copied().collect();
            let logits = self.logits(&p, &prefix, k, &cond);
            for (s, seq) in seqs.iter_mut().enumerate() {
                if done[s] {
                    seq.push(self.vocab.pad);
                    continue;
                }
                let row = &logits.value().data()[(s * k + k - 1) * v..(s * k + k) * v];
                let next = row.iter().enumerate().fold((0, f32::NEG_INFINITY), |a, (i, &x)| if x > a.1 { (i, x) } else { a }).0;
                seq.push(next);
                emitted[s] += 1;
                done[s] = next == self.vocab.sep;
            }
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3 / b.max(1) as f64;
        seqs.into_iter()
            .zip(emitted)
            .map(|(mut tokens, n)| {
                tokens.resize(l, self.vocab.pad);
                ArGeneration { caption: strip_specials(&tokens, &self.vocab), tokens, forward_passes: n, wall_ms }
            })
            .collect()
    }

    pub fn sample(&self, scenes: &[Scene]) -> Vec<ArGeneration> {
        let feats: Vec<CondFeatures> = scenes.iter().map(|s| self.encode_condition(s)).collect();
        feats.chunks(crate::sampler::CHUNK).flat_map(|c| self.generate(&c.iter().collect::<Vec<_>>())).collect()
    }
}

/// Train the baseline; returns the per-step loss trace.
pub fn train_ar(
    model: &mut ArModel,
    examples: &[Example],
    cfg: &ArTrainConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<(Vec<f64>, AdamW<f32>)> {
    if examples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let l = model.config.max_len;
    let ids: Vec<usize> = examples
        .iter()
        .map(|e| tokenize(&e.caption, &model.vocab, l))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .flat_map(|s| s.ids().to_vec())
        .collect();
    let bs = cfg.batch_size.max(1);
    let per_epoch = examples.len().div_ceil(bs) as u64;
    let sched = LrSchedule::new(cfg.peak_lr, cfg.warmup_ratio, per_epoch * cfg.epochs as u64);
    let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Baseline, 1 + epoch as u64));
        for batch in order.chunks(bs) {
            let scenes: Vec<&Scene> = batch.iter().map(|&i| &examples[i].scene).collect();
            let batch_ids: Vec<usize> = batch.iter().flat_map(|&i| ids[i * l..(i + 1) * l].iter().copied()).collect();
            let p = model.store.bind(true);
            let loss = model.loss(&p, &scenes, &batch_ids);
            let value = loss.value().item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step: opt.step, latent: 0.0, caption: value });
            }
            loss.backward();
            let mut grads = p.grads();
            drop(p);
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, cfg.grad_clip);
            }
            let step = opt.step;
            opt.update(&mut model.store, &grads, sched.at(step));
            on_step(step, value);
            trace.push(value);
        }
    }
    Ok((trace, opt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArMeta {
    kind: String,
    config: ArConfig,
    vocab: Vec<String>,
    optimizer: OptimizerMeta,
    train: Option<ArTrainConfig>,
}

pub fn save_ar(path: &std::path::Path, model: &ArModel, opt: &AdamW<f32>, train: Option<&ArTrainConfig>) -> Result<()> {
    let meta = ArMeta {
        kind: "ar".into(),
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        optimizer: optimizer_meta(opt),
        train: train.cloned(),
    };
    let mut tensors = params_to_tensors(&model.store, TensorData::F32);
    tensors.extend(optimizer_tensors(&model.store, opt));
    RawCheckpoint { digest: config_digest(&model.config), meta: serde_json::to_value(meta)?, tensors }.save(path)
}

pub fn load_ar(path: &std::path::Path) -> Result<(ArModel, AdamW<f32>)> {
    let mut raw = RawCheckpoint::load(path)?;
    let meta: ArMeta = serde_json::from_value(raw.meta.clone()).map_err(|e| Error::Malformed(format!("metadata: {e}")))?;
    if meta.kind != "ar" || config_digest(&meta.config) != raw.digest {
        return Err(Error::Malformed("not a baseline checkpoint".into()));
    }
    let mut model = ArModel::new(meta.config, Vocabulary::from_tokens(meta.vocab)?, 0)?;
    let opt = restore_params(&mut raw, &mut model.store, &meta.optimizer)?;
    if let Some((name, _)) = raw.tensors.first() {
        return Err(Error::Malformed(format!("unexpected tensor {name}")));
    }
    Ok((model, opt))
}
