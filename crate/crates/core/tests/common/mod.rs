#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};

use ladx::diffuser::{LatentDecoder, LatentDenoiser};
use ladx::scenegen::CondFeatures;
use ladx_nn::Tensor;

/// Denoiser that ignores its input and returns fixed clean latents:
/// `cond_out` for real conditions, `null_out` for the null condition.
pub struct MockDenoiser {
    pub len: usize,
    pub dim: usize,
    pub cond_out: Vec<f32>,
    pub null_out: Vec<f32>,
    pub null: CondFeatures,
    pub passes: AtomicU64,
}

impl MockDenoiser {
    pub fn new(len: usize, dim: usize, cond_out: Vec<f32>, null_out: Vec<f32>) -> Self {
        assert_eq!(cond_out.len(), len * dim);
        assert_eq!(null_out.len(), len * dim);
        MockDenoiser {
            len,
            dim,
            cond_out,
            null_out,
            null: CondFeatures { values: Tensor::full(vec![4, 2], -7.0) },
            passes: AtomicU64::new(0),
        }
    }

    pub fn fixed(len: usize, dim: usize, x0: Vec<f32>) -> Self {
        Self::new(len, dim, x0.clone(), x0)
    }
}

pub fn some_condition() -> CondFeatures {
    CondFeatures { values: Tensor::full(vec![4, 2], 1.0) }
}

impl LatentDenoiser for MockDenoiser {
    fn latent_shape(&self) -> (usize, usize) {
        (self.len, self.dim)
    }

    fn denoise(&self, x_t: &Tensor<f32>, cond: &[&CondFeatures], t: &[usize], self_cond: &Tensor<f32>) -> Tensor<f32> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        assert_eq!(x_t.shape(), &[cond.len(), self.len, self.dim]);
        assert_eq!(self_cond.shape(), x_t.shape());
        assert_eq!(t.len(), cond.len());
        let mut out = Vec::with_capacity(x_t.len());
        for c in cond {
            out.extend_from_slice(if **c == self.null { &self.null_out } else { &self.cond_out });
        }
        Tensor::new(x_t.shape().to_vec(), out)
    }

    fn null_condition(&self) -> CondFeatures {
        self.null.clone()
    }

    fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }
}

/// Logits are a fixed linear map of each latent row.
impl LatentDecoder for MockDenoiser {
    fn logits(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let v = 36;
        let rows = x.len() / self.dim;
        let mut out = Vec::with_capacity(rows * v);
        for r in x.data().chunks(self.dim) {
            for k in 0..v {
                out.push(r.iter().enumerate().map(|(j, &a)| a * (((j * 7 + k * 13) % 11) as f32 - 5.0)).sum());
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = v;
        Tensor::new(shape, out)
    }
}

pub fn pseudo_random(n: usize, seed: u64) -> Vec<f32> {
    let mut r = ladx::rng::stream(seed, ladx::rng::Purpose::Data, 77);
    ladx::rng::normal_vec(&mut r, n)
}

use ladx::diffuser::DiffuserConfig;
use ladx::scenegen::{generate_dataset, Corpus};
use ladx::textlatent::{estimate_stats, tokenize, TextConfig, Vocabulary, DEFAULT_STATS_EPS};
use ladx::{LatentModel, ModelConfig};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        max_len: 20,
        cond_slots: 4,
        text: TextConfig { dim: 16, layers: 2, split: 1, heads: 2, ffn: 32, ..TextConfig::default() },
        diffuser: DiffuserConfig { blocks: 1, dim: 24, heads: 2, ffn: 48 },
        ..ModelConfig::default()
    }
}

pub fn tiny_corpus() -> Corpus {
    generate_dataset(5, 1000, 16, 16).unwrap()
}

/// Untrained tiny model with latent statistics estimated on `corpus`.
pub fn tiny_model(seed: u64, corpus: &Corpus) -> LatentModel {
    let mut model = LatentModel::new(tiny_config(), Vocabulary::default(), seed).unwrap();
    let seqs: Vec<_> = corpus.train.iter().map(|e| tokenize(&e.caption, &model.vocab, 20).unwrap()).collect();
    model.stats = Some(estimate_stats(&model.text, &model.store, &seqs, DEFAULT_STATS_EPS, &model.vocab).unwrap());
    model
}
