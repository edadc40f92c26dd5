use ladx_nn::optim::{clip_grad_norm, AdamW};
use ladx_nn::{ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LatentModel;
use crate::rng::{self, Purpose};
use crate::scenegen::{Example, Scene};
use crate::textlatent::{tokenize, HEAD_PREFIX};
use crate::trainer::{diffusion_loss, LossInputs, LrSchedule};
use crate::diffuser::DIFFUSER_PREFIX;
use crate::scenegen::COND_PREFIX;

pub const METRICS_HEADER: &str = "step,loss,latent_loss,caption_loss,lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the caption loss.
    pub lambda: f64,
    pub cfg_drop_prob: f64,
    pub self_cond_prob: f64,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.2,
            cfg_drop_prob: 0.1,
            self_cond_prob: 0.5,
            peak_lr: 5e-5,
            warmup_ratio: 0.1,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            grad_clip: 1.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("cfg_drop_prob", self.cfg_drop_prob)?;
        prob("self_cond_prob", self.self_cond_prob)?;
        prob("warmup_ratio", self.warmup_ratio)?;
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.peak_lr >= 0.0 && self.grad_clip >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("peak_lr, grad_clip and weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Training examples with their clean latents precomputed. The encoder is
/// frozen during diffusion training, so the targets never change.
pub struct TrainData {
    pub x0: Tensor<f32>,
    pub tokens: Vec<usize>,
    pub scenes: Vec<Scene>,
    max_len: usize,
    dim: usize,
}

impl TrainData {
    pub fn new(model: &LatentModel, examples: &[Example]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let seqs = examples
            .iter()
            .map(|e| tokenize(&e.caption, &model.vocab, model.max_len()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainData {
            x0: model.clean_latents(&seqs)?,
            tokens: seqs.iter().flat_map(|s| s.ids().iter().copied()).collect(),
            scenes: examples.iter().map(|e| e.scene.clone()).collect(),
            max_len: model.max_len(),
            dim: model.latent_dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let (l, d) = (self.max_len, self.dim);
        let mut x0 = Vec::with_capacity(idx.len() * l * d);
        let mut tokens = Vec::with_capacity(idx.len() * l);
        for &i in idx {
            x0.extend_from_slice(&self.x0.data()[i * l * d..(i + 1) * l * d]);
            tokens.extend_from_slice(&self.tokens[i * l..(i + 1) * l]);
        }
        (x0, tokens)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub latent_loss: f64,
    pub caption_loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.loss, self.latent_loss, self.caption_loss, self.lr)
    }
}

/// Only the condition encoder, the diffuser and the LM head learn during
/// diffusion training; the encoder and decoder body stay frozen.
pub fn set_diffusion_trainable(store: &mut ParamStore<f32>) {
    store.set_all_trainable(false);
    store.set_trainable(&format!("{COND_PREFIX}."), true);
    store.set_trainable(&format!("{DIFFUSER_PREFIX}."), true);
    store.set_trainable(HEAD_PREFIX, true);
}

pub fn new_optimizer(cfg: &TrainConfig) -> AdamW<f32> {
    AdamW::new(0.9, 0.999, 1e-8, cfg.weight_decay)
}

/// Diffusion training loop. The update counter of the optimizer is the
/// global step; batch order and noise depend only on `(seed, step)`, so a
/// resumed run continues exactly where an uninterrupted one would be.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub opt: AdamW<f32>,
    pub lr: LrSchedule,
    steps_per_epoch: u64,
    order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, n_examples: usize, opt: AdamW<f32>) -> Result<Self> {
        cfg.validate()?;
        if n_examples == 0 {
            return Err(Error::Empty("training set"));
        }
        let steps_per_epoch = n_examples.div_ceil(cfg.batch_size) as u64;
        let lr = LrSchedule::new(cfg.peak_lr, cfg.warmup_ratio, steps_per_epoch * cfg.epochs as u64);
        Ok(Trainer { cfg, opt, lr, steps_per_epoch, order: None })
    }

    pub fn step_index(&self) -> u64 {
        self.opt.step
    }

    pub fn total_steps(&self) -> u64 {
        self.lr.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.opt.step >= self.total_steps()
    }

    fn batch_indices(&mut self, n: usize) -> Vec<usize> {
        let step = self.opt.step;
        let epoch = step / self.steps_per_epoch;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(self.cfg.seed, Purpose::Shuffle, epoch));
            self.order = Some((epoch, order));
        }
        let order = &self.order.as_ref().unwrap().1;
        let start = (step % self.steps_per_epoch) as usize * self.cfg.batch_size;
        order[start..(start + self.cfg.batch_size).min(n)].to_vec()
    }

    pub fn step(&mut self, model: &mut LatentModel, data: &TrainData) -> Result<StepMetrics> {
        let step = self.opt.step;
        let idx = self.batch_indices(data.len());
        let b = idx.len();
        let (l, d) = (model.max_len(), model.latent_dim());
        let (x0, tokens) = data.gather(&idx);

        let mut rng = rng::stream(self.cfg.seed, Purpose::Diffusion, step);
        let use_self_cond = rng.random::<f64>() < self.cfg.self_cond_prob;
        let total = model.schedule.total_steps();
        let t: Vec<usize> = (0..b).map(|_| rng.random_range(1..=total)).collect();
        let dropped: Vec<bool> = (0..b).map(|_| rng.random::<f64>() < self.cfg.cfg_drop_prob).collect();
        let eps = rng::normal_vec(&mut rng, b * l * d);
        let mut x_t = vec![0.0f32; b * l * d];
        for i in 0..b {
            let r = i * l * d..(i + 1) * l * d;
            model.schedule.q_sample_slice(&x0[r.clone()], t[i], &eps[r.clone()], &mut x_t[r]);
        }
        let scenes: Vec<Option<&Scene>> =
            idx.iter().zip(&dropped).map(|(&i, &drop)| (!drop).then(|| &data.scenes[i])).collect();
        let shape = vec![b, l, d];
        let x_t = Tensor::new(shape.clone(), x_t);

        let self_cond = if use_self_cond {
            let p = model.store.bind(false);
            let context = model.cond.forward(&p, &scenes);
            let zeros = ladx_nn::Var::constant(Tensor::zeros(shape.clone()));
            model.diffuser.forward(&p, &ladx_nn::Var::constant(x_t.clone()), &zeros, &t, &context).value().clone()
        } else {
            Tensor::zeros(shape.clone())
        };

        let inputs = LossInputs { x0: Tensor::new(shape, x0), x_t, self_cond, t, scenes, tokens };
        let p = model.store.bind(true);
        let parts = diffusion_loss(&model.text, &model.cond, &model.diffuser, &p, &inputs, self.cfg.lambda);
        let latent = parts.latent.value().item() as f64;
        let caption = parts.caption.value().item() as f64;
        if !(latent.is_finite() && caption.is_finite()) {
            return Err(Error::NonFiniteLoss { step, latent, caption });
        }
        parts.total.backward();
        let mut grads = p.grads();
        drop(p);
        let grad_norm = if self.cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut grads, self.cfg.grad_clip)
        } else {
            grads.iter().map(|(_, g)| g.sq_norm() as f64).sum::<f64>().sqrt()
        };
        let lr = self.lr.at(step);
        self.opt.update(&mut model.store, &grads, lr);
        Ok(StepMetrics { step, loss: latent + self.cfg.lambda * caption, latent_loss: latent, caption_loss: caption, lr, grad_norm })
    }

    /// Train until the configured number of epochs is reached.
    pub fn run(
        &mut self,
        model: &mut LatentModel,
        data: &TrainData,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<Vec<StepMetrics>> {
        set_diffusion_trainable(&mut model.store);
        let mut out = Vec::new();
        while !self.is_done() {
            let m = self.step(model, data)?;
            on_step(&m);
            out.push(m);
        }
        Ok(out)
    }
}
