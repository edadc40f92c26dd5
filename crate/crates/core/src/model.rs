//! All parameters of the captioner in one store, plus the pieces that
//! index into it.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ladx_nn::{ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::diffuser::{Diffuser, DiffuserConfig, LatentDecoder, LatentDenoiser};
use crate::error::{Error, Result};
use crate::sampler::Anchors;
use crate::rng::{self, Purpose};
use crate::scenegen::{CondEncoder, CondFeatures, Scene, DEFAULT_SLOTS};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::textlatent::{LatentStats, TextConfig, TextStack, TokenSeq, Vocabulary};

/// Everything that determines the parameter layout and the forward process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub max_len: usize,
    pub cond_slots: usize,
    pub text: TextConfig,
    pub diffuser: DiffuserConfig,
    pub schedule: ScheduleConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_len: 24,
            cond_slots: DEFAULT_SLOTS,
            text: TextConfig::default(),
            diffuser: DiffuserConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        self.diffuser.validate()?;
        self.schedule.build()?;
        if self.max_len < 3 {
            return Err(Error::Config(format!("max_len {} leaves no room for words", self.max_len)));
        }
        if self.cond_slots < 4 {
            return Err(Error::Config(format!("need at least 4 condition slots, got {}", self.cond_slots)));
        }
        Ok(())
    }
}

pub struct LatentModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<f32>,
    pub text: TextStack,
    pub cond: CondEncoder,
    pub diffuser: Diffuser,
    pub schedule: NoiseSchedule,
    pub stats: Option<LatentStats>,
    passes: AtomicU64,
}

impl LatentModel {
    /// Freshly initialized parameters. Each component draws from its own
    /// stream so that changing one part's size leaves the others intact.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let text = TextStack::new(&mut store, &config.text, vocab.len(), config.max_len, &mut rng::stream(seed, Purpose::Init, 0));
        let cond =
            CondEncoder::new(&mut store, config.diffuser.dim, config.cond_slots, &mut rng::stream(seed, Purpose::Init, 1));
        let diffuser = Diffuser::new(
            &mut store,
            &config.diffuser,
            config.text.dim,
            config.max_len,
            config.cond_slots,
            &mut rng::stream(seed, Purpose::Init, 2),
        );
        let schedule = config.schedule.build()?;
        Ok(LatentModel { config, vocab, store, text, cond, diffuser, schedule, stats: None, passes: AtomicU64::new(0) })
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    pub fn latent_dim(&self) -> usize {
        self.config.text.dim
    }

    pub fn stats(&self) -> Result<&LatentStats> {
        self.stats.as_ref().ok_or(Error::MissingStats)
    }

    /// Clean diffusion targets `[B, L, d]` for token sequences.
    pub fn clean_latents(&self, seqs: &[TokenSeq]) -> Result<Tensor<f32>> {
        Ok(self.text.clean_latents(&self.store, self.stats()?, seqs, &self.vocab))
    }

    pub fn encode_condition(&self, scene: &Scene) -> CondFeatures {
        self.cond.encode_condition(&self.store, scene)
    }

    /// Latent rows for infill anchors. The anchor words are encoded in a
    /// sequence that is `[MASK]` everywhere else (with `[CLS]` at 0), then
    /// normalized like training targets; special tokens get zero rows.
    pub fn anchor_latents(&self, tokens: &BTreeMap<usize, String>) -> Result<Anchors> {
        let (l, d) = (self.max_len(), self.latent_dim());
        let stats = self.stats()?;
        let mut ids = vec![self.vocab.mask; l];
        ids[0] = self.vocab.cls;
        for (&pos, word) in tokens {
            if pos >= l {
                return Err(Error::AnchorPosition { pos, max_len: l });
            }
            ids[pos] = self.vocab.id(word).ok_or_else(|| Error::UnknownWord(word.clone()))?;
        }
        let p = self.store.bind(false);
        let mut x = self.text.encode_var(&p, &ids).value().clone().into_vec();
        stats.normalize_slice(&mut x);
        let rows = tokens
            .keys()
            .map(|&pos| {
                let row = if self.vocab.is_special(ids[pos]) { vec![0.0; d] } else { x[pos * d..(pos + 1) * d].to_vec() };
                (pos, row)
            })
            .collect();
        Anchors::new(rows, l, d)
    }

    pub fn reset_forward_passes(&self) {
        self.passes.store(0, Ordering::Relaxed);
    }
}

impl LatentDenoiser for LatentModel {
    fn latent_shape(&self) -> (usize, usize) {
        (self.max_len(), self.latent_dim())
    }

    fn denoise(&self, x_t: &Tensor<f32>, cond: &[&CondFeatures], t: &[usize], self_cond: &Tensor<f32>) -> Tensor<f32> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        let parts: Vec<Tensor<f32>> = cond.iter().map(|c| c.values.clone()).collect();
        let (m, d) = (self.diffuser.slots, self.diffuser.dim);
        let cond = Tensor::stack_rows(&parts).reshape(vec![cond.len(), m, d]);
        let p = self.store.bind(false);
        let out = self.diffuser.forward(
            &p,
            &Var::constant(x_t.clone()),
            &Var::constant(self_cond.clone()),
            t,
            &Var::constant(cond),
        );
        out.value().clone()
    }

    fn null_condition(&self) -> CondFeatures {
        self.cond.null_condition(&self.store)
    }

    fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }
}

impl LatentDecoder for LatentModel {
    fn logits(&self, x: &Tensor<f32>) -> Tensor<f32> {
        self.text.decode_logits(&self.store, x)
    }
}
