//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `LADX`, `u32` version, 32-byte config
//! digest, `u32` metadata length and JSON metadata, `u32` tensor count and
//! the tensors (`u16` name length, name, `u8` dtype, `u8` rank, `u32`
//! dims, data), then a SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use ladx_nn::optim::AdamW;
use ladx_nn::{ParamStore, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{LatentModel, ModelConfig};
use crate::textlatent::{LatentStats, Vocabulary};
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 4] = b"LADX";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }
}

/// Untyped checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub digest: [u8; DIGEST_LEN],
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, TensorData)>,
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of anything serializable, over its JSON form.
pub fn config_digest<C: Serialize>(config: &C) -> [u8; 32] {
    sha256(&serde_json::to_vec(config).expect("config serializes"))
}

impl RawCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match t {
                TensorData::F32(_) => 0,
                TensorData::F64(_) => 1,
            });
            out.push(t.shape().len() as u8);
            for &dim in t.shape() {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            match t {
                TensorData::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                TensorData::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let sum = sha256(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(if MAGIC.starts_with(bytes) { Error::Truncated } else { Error::BadMagic });
        }
        if bytes.len() < 8 {
            return Err(Error::Truncated);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        if bytes.len() < 8 + DIGEST_LEN + 32 {
            return Err(Error::Truncated);
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if sha256(body) != sum {
            return Err(Error::ChecksumMismatch);
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let digest: [u8; DIGEST_LEN] = r.take(DIGEST_LEN)?.try_into().unwrap();
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Malformed("tensor name".into()))?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let t = match dtype {
                0 => TensorData::F32(Tensor::new(
                    shape,
                    r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                )),
                1 => TensorData::F64(Tensor::new(
                    shape,
                    r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                )),
                other => return Err(Error::Malformed(format!("unknown dtype {other} for {name}"))),
            };
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(Error::Malformed("trailing bytes".into()));
        }
        Ok(RawCheckpoint { digest, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { what: "checkpoint", path: path.to_path_buf() });
        }
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    fn take_f32(&mut self, name: &str) -> Option<Tensor<f32>> {
        let i = self.tensors.iter().position(|(n, t)| n == name && matches!(t, TensorData::F32(_)))?;
        match self.tensors.remove(i).1 {
            TensorData::F32(t) => Some(t),
            TensorData::F64(_) => unreachable!(),
        }
    }

    fn take_f64(&mut self, name: &str) -> Option<Tensor<f64>> {
        let i = self.tensors.iter().position(|(n, t)| n == name && matches!(t, TensorData::F64(_)))?;
        match self.tensors.remove(i).1 {
            TensorData::F64(t) => Some(t),
            TensorData::F32(_) => unreachable!(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Text autoencoder trained, diffuser untouched.
    Pretrained,
    Diffusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsMeta {
    pub eps: f64,
    pub sample_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentMeta {
    pub stage: Stage,
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub stats: Option<StatsMeta>,
    pub optimizer: OptimizerMeta,
    pub train: Option<TrainConfig>,
}

pub fn params_to_tensors<T: Scalar>(store: &ParamStore<T>, wrap: impl Fn(Tensor<T>) -> TensorData) -> Vec<(String, TensorData)> {
    store.iter().map(|(_, p)| (p.name.clone(), wrap(p.value.clone()))).collect()
}

pub fn optimizer_tensors(store: &ParamStore<f32>, opt: &AdamW<f32>) -> Vec<(String, TensorData)> {
    let mut out = Vec::new();
    for (id, p) in store.iter() {
        if let Some((m, v)) = opt.moments(id) {
            out.push((format!("opt.m.{}", p.name), TensorData::F32(m.clone())));
            out.push((format!("opt.v.{}", p.name), TensorData::F32(v.clone())));
        }
    }
    out
}

pub fn optimizer_meta(opt: &AdamW<f32>) -> OptimizerMeta {
    OptimizerMeta { beta1: opt.beta1, beta2: opt.beta2, eps: opt.eps, weight_decay: opt.weight_decay, step: opt.step }
}

/// Move parameters and optimizer moments out of `raw` into `store`.
pub fn restore_params(raw: &mut RawCheckpoint, store: &mut ParamStore<f32>, meta: &OptimizerMeta) -> Result<AdamW<f32>> {
    let mut opt = AdamW::new(meta.beta1, meta.beta2, meta.eps, meta.weight_decay);
    opt.step = meta.step;
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.shape().to_vec())).collect();
    for (id, name, shape) in ids {
        let t = raw.take_f32(&name).ok_or_else(|| Error::Malformed(format!("missing parameter {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Malformed(format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape())));
        }
        *store.value_mut(id) = t;
        match (raw.take_f32(&format!("opt.m.{name}")), raw.take_f32(&format!("opt.v.{name}"))) {
            (Some(m), Some(v)) if m.shape() == shape.as_slice() && v.shape() == shape.as_slice() => opt.set_moments(id, m, v),
            (None, None) => {}
            _ => return Err(Error::Malformed(format!("incomplete optimizer state for {name}"))),
        }
    }
    Ok(opt)
}

/// Model, stats and training progress as stored on disk.
pub struct LatentCheckpoint {
    pub model: LatentModel,
    pub stage: Stage,
    pub optimizer: AdamW<f32>,
    pub train: Option<TrainConfig>,
}

pub fn save_latent(
    path: &Path,
    model: &LatentModel,
    stage: Stage,
    opt: &AdamW<f32>,
    train: Option<&TrainConfig>,
) -> Result<()> {
    latent_to_raw(model, stage, opt, train).save(path)
}

pub fn latent_to_raw(model: &LatentModel, stage: Stage, opt: &AdamW<f32>, train: Option<&TrainConfig>) -> RawCheckpoint {
    let meta = LatentMeta {
        stage,
        model: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        stats: model.stats.as_ref().map(|s| StatsMeta { eps: s.eps, sample_count: s.sample_count }),
        optimizer: optimizer_meta(opt),
        train: train.cloned(),
    };
    let mut tensors = params_to_tensors(&model.store, TensorData::F32);
    if let Some(s) = &model.stats {
        tensors.push(("stats.mean".into(), TensorData::F64(Tensor::new(vec![s.mean.len()], s.mean.clone()))));
        tensors.push(("stats.std".into(), TensorData::F64(Tensor::new(vec![s.std.len()], s.std.clone()))));
    }
    tensors.extend(optimizer_tensors(&model.store, opt));
    RawCheckpoint {
        digest: config_digest(&model.config),
        meta: serde_json::to_value(meta).expect("metadata serializes"),
        tensors,
    }
}

pub fn load_latent(path: &Path) -> Result<LatentCheckpoint> {
    latent_from_raw(RawCheckpoint::load(path)?)
}

pub fn latent_from_raw(mut raw: RawCheckpoint) -> Result<LatentCheckpoint> {
    let meta: LatentMeta =
        serde_json::from_value(raw.meta.clone()).map_err(|e| Error::Malformed(format!("metadata: {e}")))?;
    if config_digest(&meta.model) != raw.digest {
        return Err(Error::Malformed("config digest does not match metadata".into()));
    }
    let vocab = Vocabulary::from_tokens(meta.vocab.clone())?;
    let mut model = LatentModel::new(meta.model.clone(), vocab, 0)?;
    let optimizer = restore_params(&mut raw, &mut model.store, &meta.optimizer)?;
    model.stats = match &meta.stats {
        Some(s) => {
            let mean = raw.take_f64("stats.mean").ok_or_else(|| Error::Malformed("missing stats.mean".into()))?;
            let std = raw.take_f64("stats.std").ok_or_else(|| Error::Malformed("missing stats.std".into()))?;
            if mean.len() != model.latent_dim() || std.len() != model.latent_dim() {
                return Err(Error::Malformed("stats width".into()));
            }
            Some(LatentStats { mean: mean.into_vec(), std: std.into_vec(), eps: s.eps, sample_count: s.sample_count })
        }
        None => None,
    };
    if let Some((name, _)) = raw.tensors.first() {
        return Err(Error::Malformed(format!("unexpected tensor {name}")));
    }
    Ok(LatentCheckpoint { model, stage: meta.stage, optimizer, train: meta.train })
}
