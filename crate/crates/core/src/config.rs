//! One TOML file describing a whole run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_digest, hex};
use crate::diffuser::DiffuserConfig;
use crate::error::{Error, Result};
use crate::evalbench::{ArConfig, ArTrainConfig};
use crate::model::ModelConfig;
use crate::sampler::SamplerConfig;
use crate::scenegen::DEFAULT_SLOTS;
use crate::schedule::ScheduleConfig;
use crate::textlatent::{PretrainConfig, TextConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { seed: 13, n_train: 8192, n_val: 512, n_test: 512 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out scenes scored by `eval`.
    pub n_eval: usize,
    /// Scenes per length bucket for BLEU in `bench`.
    pub bucket_size: usize,
    pub warmup_runs: usize,
    pub timed_runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_eval: 512, bucket_size: 64, warmup_runs: 5, timed_runs: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for parameter initialization.
    pub seed: u64,
    pub max_len: usize,
    pub cond_slots: usize,
    pub data: DataConfig,
    pub text: TextConfig,
    pub diffuser: DiffuserConfig,
    pub schedule: ScheduleConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub ar: ArConfig,
    pub ar_train: ArTrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            max_len: 24,
            cond_slots: DEFAULT_SLOTS,
            data: DataConfig::default(),
            text: TextConfig::default(),
            diffuser: DiffuserConfig::default(),
            schedule: ScheduleConfig::default(),
            pretrain: PretrainConfig { epochs: 3, ..PretrainConfig::default() },
            // A 5e-5 peak suits far longer runs; a few hundred steps at
            // desk scale need a larger one to converge.
            train: TrainConfig { peak_lr: 1e-3, epochs: 6, seed: 5, ..TrainConfig::default() },
            sampler: SamplerConfig::default(),
            ar: ArConfig::default(),
            ar_train: ArTrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train.validate()?;
        self.sampler.validate(self.schedule.steps)?;
        if self.data.n_train == 0 || self.data.n_val == 0 || self.data.n_test == 0 {
            return Err(Error::Config("every data split needs at least one example".into()));
        }
        if self.ar.max_len != self.max_len || self.ar.cond_slots != self.cond_slots {
            return Err(Error::Config("[ar] max_len and cond_slots must match the top level".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            max_len: self.max_len,
            cond_slots: self.cond_slots,
            text: self.text.clone(),
            diffuser: self.diffuser.clone(),
            schedule: self.schedule.clone(),
        }
    }

    pub fn digest(&self) -> String {
        hex(&config_digest(self))
    }
}
