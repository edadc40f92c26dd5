//! Iterative denoising from Gaussian noise to a caption.

mod ddim;
mod mbr;

use std::collections::BTreeMap;
use std::time::Instant;

use ladx_nn::Tensor;
use serde::{Deserialize, Serialize};

pub use ddim::{ddim_coefficients, ddim_sigma, ddim_step, timesteps};
pub use mbr::mbr_select;

use crate::diffuser::{cfg_denoise, LatentDecoder, LatentDenoiser};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scenegen::CondFeatures;
use crate::schedule::NoiseSchedule;
use crate::textlatent::{argmax_with_confidence, enforce_layout, strip_specials, Vocabulary};

/// Generations denoised together in one batched chain.
pub const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackRefineConfig {
    /// Rollback happens once the chain reaches `t_frac * T`.
    pub t_frac: f64,
    /// Fraction of positions renoised.
    pub l_frac: f64,
}

impl Default for BackRefineConfig {
    fn default() -> Self {
        BackRefineConfig { t_frac: 0.5, l_frac: 0.5 }
    }
}

impl BackRefineConfig {
    /// Positions kept out of `valid` eligible ones.
    pub fn keep_count(&self, valid: usize) -> usize {
        (((1.0 - self.l_frac) * valid as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub eta: f64,
    pub guidance: f64,
    pub back_refine: Option<BackRefineConfig>,
    pub mbr_candidates: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 30, eta: 0.0, guidance: 1.0, back_refine: None, mbr_candidates: 1, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        timesteps(total_steps, self.steps)?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !self.guidance.is_finite() {
            return Err(Error::Config("guidance weight must be finite".into()));
        }
        if let Some(br) = &self.back_refine {
            let open = |x: f64| x > 0.0 && x < 1.0;
            if !open(br.t_frac) || !open(br.l_frac) {
                return Err(Error::Config(format!("back-refine fractions must lie in (0, 1), got {br:?}")));
            }
        }
        if self.mbr_candidates == 0 {
            return Err(Error::Config("mbr_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

/// Latent rows pinned to fixed positions during infilling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Anchors {
    rows: BTreeMap<usize, Vec<f32>>,
}

impl Anchors {
    pub fn new(rows: BTreeMap<usize, Vec<f32>>, max_len: usize, dim: usize) -> Result<Self> {
        for (&pos, row) in &rows {
            if pos >= max_len {
                return Err(Error::AnchorPosition { pos, max_len });
            }
            if row.len() != dim {
                return Err(Error::Shape { expected: vec![dim], got: vec![row.len()] });
            }
        }
        Ok(Anchors { rows })
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    pub fn row(&self, pos: usize) -> Option<&[f32]> {
        self.rows.get(&pos).map(|r| r.as_slice())
    }

    fn write(&self, x: &mut [f32], d: usize) {
        for (&pos, row) in &self.rows {
            x[pos * d..(pos + 1) * d].copy_from_slice(row);
        }
    }
}

/// Merge `(position, token)` pairs, rejecting two different tokens at one position.
pub fn merge_anchor_tokens(pairs: &[(usize, String)]) -> Result<BTreeMap<usize, String>> {
    let mut out = BTreeMap::new();
    for (pos, tok) in pairs {
        if let Some(prev) = out.insert(*pos, tok.clone()) {
            if &prev != tok {
                return Err(Error::ConflictingAnchor(*pos));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineTrace {
    /// Positions whose latents were kept, in decreasing confidence.
    pub kept: Vec<usize>,
    /// The full latent at the restart of the chain.
    pub restart: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub caption: String,
    pub tokens: Vec<usize>,
    /// Max softmax probability per position of the final decode.
    pub confidences: Vec<f32>,
    pub forward_passes: u64,
    pub wall_ms: f64,
    /// Final latent, `L * d` values.
    pub latent: Vec<f32>,
    pub refine: Option<RefineTrace>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Initial,
    Refine,
}

/// State after one denoising iteration, for observers.
pub struct StepView<'a> {
    pub phase: Phase,
    pub t: usize,
    pub t_prev: usize,
    /// `[B, L, d]` after the update and any reinsertion.
    pub x: &'a Tensor<f32>,
    pub x0_hat: &'a Tensor<f32>,
}

fn row_slice(x: &mut [f32], b: usize, pos: usize, l: usize, d: usize) -> &mut [f32] {
    let start = (b * l + pos) * d;
    &mut x[start..start + d]
}

/// Run the chain for a batch of conditions. Generation `i` draws all its
/// randomness from its own stream `indices[i]`, so results do not depend
/// on how generations are grouped into batches.
#[allow(clippy::too_many_arguments)]
pub fn generate<M>(
    model: &M,
    sched: &NoiseSchedule,
    vocab: &Vocabulary,
    conds: &[&CondFeatures],
    indices: &[u64],
    cfg: &SamplerConfig,
    anchors: Option<&Anchors>,
    mut observer: Option<&mut dyn FnMut(&StepView<'_>)>,
) -> Result<Vec<Generation>>
where
    M: LatentDenoiser + LatentDecoder + ?Sized,
{
    cfg.validate(sched.total_steps())?;
    assert_eq!(conds.len(), indices.len(), "one stream index per condition");
    if conds.is_empty() {
        return Ok(Vec::new());
    }
    let (l, d) = model.latent_shape();
    let (b, n) = (conds.len(), l * d);
    let taus = timesteps(sched.total_steps(), cfg.steps)?;
    let f = sched.noise_factor as f32;
    let mut rngs: Vec<rng::Rng> = indices.iter().map(|&i| rng::stream(cfg.seed, Purpose::Sampling, i)).collect();
    let gaussian = |rngs: &mut [rng::Rng]| -> Vec<f32> {
        rngs.iter_mut().flat_map(|r| rng::normal_vec(r, n)).map(|z| z * f).collect()
    };
    let write_anchors = |x: &mut [f32]| {
        if let Some(a) = anchors {
            for chunk in x.chunks_mut(n) {
                a.write(chunk, d);
            }
        }
    };

    let start = Instant::now();
    let passes_before = model.forward_passes();
    let shape = vec![b, l, d];
    let mut x = gaussian(&mut rngs);
    write_anchors(&mut x);
    let mut self_cond = Tensor::zeros(shape.clone());
    let mut phase = Phase::Initial;
    let mut kept: Vec<Vec<(usize, Vec<f32>)>> = vec![Vec::new(); b];
    let mut traces: Vec<Option<RefineTrace>> = vec![None; b];
    let refine_at = cfg.back_refine.map(|br| br.t_frac * sched.total_steps() as f64);
    let w = cfg.guidance as f32;

    let mut i = cfg.steps;
    while i >= 1 {
        let (t, t_prev) = (taus[i], taus[i - 1]);
        let x_t = Tensor::new(shape.clone(), x);
        let x0_hat = cfg_denoise(model, &x_t, conds, &vec![t; b], &self_cond, w);
        let mut next = vec![0.0f32; b * n];
        let noise = if cfg.eta > 0.0 {
            rngs.iter_mut().flat_map(|r| rng::normal_vec(r, n)).collect()
        } else {
            vec![0.0f32; b * n]
        };
        ddim_step(sched, x_t.data(), x0_hat.data(), t, t_prev, cfg.eta, &noise, &mut next);
        if t_prev > 0 {
            for (s, rows) in kept.iter().enumerate() {
                for (pos, row) in rows {
                    row_slice(&mut next, s, *pos, l, d).copy_from_slice(row);
                }
            }
        }
        write_anchors(&mut next);
        let next_t = Tensor::new(shape.clone(), next);
        if let Some(obs) = observer.as_mut() {
            obs(&StepView { phase, t, t_prev, x: &next_t, x0_hat: &x0_hat });
        }
        x = next_t.into_vec();
        self_cond = x0_hat;

        if phase == Phase::Initial && refine_at.is_some_and(|at| t_prev as f64 <= at) {
            let br = cfg.back_refine.expect("refine point implies config");
            let (_, conf) = argmax_with_confidence(&model.logits(&self_cond));
            let keep = br.keep_count(l - 1);
            x = gaussian(&mut rngs);
            for s in 0..b {
                let mut order: Vec<usize> = (1..l).collect();
                order.sort_by(|&p, &q| conf[s * l + q].total_cmp(&conf[s * l + p]).then(p.cmp(&q)));
                order.truncate(keep);
                let mut rows: Vec<(usize, Vec<f32>)> =
                    order.iter().map(|&p| (p, self_cond.data()[(s * l + p) * d..(s * l + p + 1) * d].to_vec())).collect();
                rows.push((0, self_cond.data()[s * n..s * n + d].to_vec()));
                for (pos, row) in &rows {
                    row_slice(&mut x, s, *pos, l, d).copy_from_slice(row);
                }
                kept[s] = rows;
            }
            write_anchors(&mut x);
            for (s, tr) in traces.iter_mut().enumerate() {
                *tr = Some(RefineTrace { kept: kept[s][..keep].iter().map(|(p, _)| *p).collect(), restart: x[s * n..(s + 1) * n].to_vec() });
            }
            self_cond = Tensor::zeros(shape.clone());
            phase = Phase::Refine;
            i = cfg.steps;
            continue;
        }
        i -= 1;
    }

    let passes = model.forward_passes() - passes_before;
    let logits = model.logits(&Tensor::new(shape, x.clone()));
    let (ids, conf) = argmax_with_confidence(&logits);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3 / b as f64;
    Ok((0..b)
        .map(|s| {
            let mut tokens = ids[s * l..(s + 1) * l].to_vec();
            enforce_layout(&mut tokens, vocab);
            Generation {
                caption: strip_specials(&tokens, vocab),
                tokens,
                confidences: conf[s * l..(s + 1) * l].to_vec(),
                forward_passes: passes,
                wall_ms,
                latent: x[s * n..(s + 1) * n].to_vec(),
                refine: traces[s].take(),
            }
        })
        .collect())
}

/// Sample one caption per condition, in chunks. With `mbr_candidates = k`
/// each condition `g` draws candidates from streams `g*k .. g*k+k` of
/// `first_index` onward and keeps the MBR choice.
#[allow(clippy::too_many_arguments)]
pub fn sample<M>(
    model: &M,
    sched: &NoiseSchedule,
    vocab: &Vocabulary,
    conds: &[CondFeatures],
    first_index: u64,
    cfg: &SamplerConfig,
    anchors: Option<&Anchors>,
) -> Result<Vec<Generation>>
where
    M: LatentDenoiser + LatentDecoder + ?Sized,
{
    let k = cfg.mbr_candidates.max(1);
    let per_chunk = (CHUNK / k).max(1);
    let mut out = Vec::with_capacity(conds.len());
    for (c, chunk) in conds.chunks(per_chunk).enumerate() {
        let base = first_index + (c * per_chunk) as u64;
        let refs: Vec<&CondFeatures> = chunk.iter().flat_map(|v| std::iter::repeat_n(v, k)).collect();
        let idx: Vec<u64> = (0..chunk.len() as u64).flat_map(|g| (0..k as u64).map(move |j| (base + g) * k as u64 + j)).collect();
        let gens = generate(model, sched, vocab, &refs, &idx, cfg, anchors, None)?;
        for group in gens.chunks(k) {
            let captions: Vec<String> = group.iter().map(|g| g.caption.clone()).collect();
            let mut chosen = group[mbr_select(&captions)?].clone();
            chosen.forward_passes *= k as u64;
            chosen.wall_ms *= k as f64;
            out.push(chosen);
        }
    }
    Ok(out)
}

/// JSON line for one generation. Back&Refine runs add the kept positions.
pub fn diagnostics_line(g: &Generation) -> String {
    let mut v = serde_json::json!({
        "caption": g.caption,
        "forward_passes": g.forward_passes,
        "wall_ms": g.wall_ms,
        "confidences": g.confidences,
    });
    if let Some(r) = &g.refine {
        v["kept_positions"] = serde_json::json!(r.kept);
    }
    v.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_counts() {
        let br = BackRefineConfig::default();
        assert_eq!(br.keep_count(24), 12);
        assert_eq!(br.keep_count(23), 12);
        let br = BackRefineConfig { t_frac: 0.5, l_frac: 0.8 };
        assert_eq!(br.keep_count(23), 5);
        assert_eq!(BackRefineConfig { t_frac: 0.5, l_frac: 0.2 }.keep_count(10), 8);
    }

    #[test]
    fn conflicting_anchor_tokens() {
        let p = |v: &[(usize, &str)]| v.iter().map(|(a, b)| (*a, b.to_string())).collect::<Vec<_>>();
        assert!(merge_anchor_tokens(&p(&[(3, "red"), (5, "star")])).is_ok());
        assert!(merge_anchor_tokens(&p(&[(3, "red"), (3, "red")])).is_ok());
        assert!(matches!(merge_anchor_tokens(&p(&[(3, "red"), (3, "blue")])), Err(Error::ConflictingAnchor(3))));
    }
}
