use ladx_nn::Tensor;

use crate::error::{Error, Result};

/// Minimum number of captions for estimating latent statistics.
pub const MIN_STATS_SAMPLES: usize = 1000;
pub const DEFAULT_STATS_EPS: f64 = 1e-5;

/// One sentence latent: `[L, d]` values plus a mask marking the positions
/// of special tokens (`[CLS]`, `[SEP]`, `[PAD]`).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSeq {
    values: Tensor<f32>,
    special_mask: Vec<bool>,
}

impl LatentSeq {
    pub fn new(values: Tensor<f32>, special_mask: Vec<bool>) -> Result<Self> {
        if values.shape().len() != 2 || values.shape()[0] != special_mask.len() {
            return Err(Error::Shape { expected: vec![special_mask.len(), values.last_dim()], got: values.shape().to_vec() });
        }
        Ok(LatentSeq { values, special_mask })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        LatentSeq { values: Tensor::zeros(vec![len, dim]), special_mask: vec![false; len] }
    }

    pub fn values(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn special_mask(&self) -> &[bool] {
        &self.special_mask
    }

    pub fn len(&self) -> usize {
        self.special_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.special_mask.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.last_dim()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.values.row(i)
    }

    /// Same mask, new values of identical shape.
    pub fn with_values(&self, values: Vec<f32>) -> Self {
        LatentSeq { values: Tensor::new(self.values.shape().to_vec(), values), special_mask: self.special_mask.clone() }
    }
}

/// Per-dimension moments of encoder latents over non-special positions.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
    /// Number of captions the moments were computed from.
    pub sample_count: usize,
}

impl LatentStats {
    /// Moments over every row whose mask entry is `false`.
    pub fn from_latents(latents: &[LatentSeq], eps: f64) -> Result<Self> {
        if latents.len() < MIN_STATS_SAMPLES {
            return Err(Error::TooFewSamples { needed: MIN_STATS_SAMPLES, got: latents.len() });
        }
        let d = latents[0].dim();
        let mut sum = vec![0.0f64; d];
        let mut count = 0usize;
        for seq in latents {
            for (i, &special) in seq.special_mask().iter().enumerate() {
                if special {
                    continue;
                }
                count += 1;
                for (s, &v) in sum.iter_mut().zip(seq.row(i)) {
                    *s += v as f64;
                }
            }
        }
        if count == 0 {
            return Err(Error::Empty("no content positions to estimate statistics from"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; d];
        for seq in latents {
            for (i, &special) in seq.special_mask().iter().enumerate() {
                if special {
                    continue;
                }
                for ((s, &v), m) in sq.iter_mut().zip(seq.row(i)).zip(&mean) {
                    let c = v as f64 - m;
                    *s += c * c;
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        Ok(LatentStats { mean, std, eps, sample_count: latents.len() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `1 / (std + eps)` per dimension.
    pub fn inv_scale(&self) -> Vec<f64> {
        self.std.iter().map(|s| 1.0 / (s + self.eps)).collect()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::Shape { expected: vec![self.dim()], got: vec![d] });
        }
        Ok(())
    }

    /// `(x - mean) / (std + eps)` over rows of width `d`.
    pub fn normalize_slice(&self, x: &mut [f32]) {
        let d = self.dim();
        for row in x.chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((*v as f64 - self.mean[j]) / (self.std[j] + self.eps)) as f32;
            }
        }
    }

    pub fn denormalize_slice(&self, x: &mut [f32]) {
        let d = self.dim();
        for row in x.chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v as f64 * (self.std[j] + self.eps) + self.mean[j]) as f32;
            }
        }
    }
}

pub fn normalize(x: &LatentSeq, stats: Option<&LatentStats>) -> Result<LatentSeq> {
    let stats = stats.ok_or(Error::MissingStats)?;
    stats.check_dim(x.dim())?;
    let mut v = x.values().data().to_vec();
    stats.normalize_slice(&mut v);
    Ok(x.with_values(v))
}

pub fn denormalize(x: &LatentSeq, stats: Option<&LatentStats>) -> Result<LatentSeq> {
    let stats = stats.ok_or(Error::MissingStats)?;
    stats.check_dim(x.dim())?;
    let mut v = x.values().data().to_vec();
    stats.denormalize_slice(&mut v);
    Ok(x.with_values(v))
}

/// Replace the rows of special positions with the zero vector.
pub fn reassign(x: &LatentSeq) -> LatentSeq {
    let mut v = x.values().data().to_vec();
    zero_special_rows(&mut v, x.special_mask());
    x.with_values(v)
}

/// Zero every row `i` (of width `len / mask.len()`) where `mask[i]`.
pub fn zero_special_rows(values: &mut [f32], mask: &[bool]) {
    if mask.is_empty() {
        return;
    }
    let d = values.len() / mask.len();
    for (row, &special) in values.chunks_mut(d).zip(mask) {
        if special {
            row.fill(0.0);
        }
    }
}
