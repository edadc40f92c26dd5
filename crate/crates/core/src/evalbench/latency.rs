use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalbench::{bleu4, median, ArModel};
use crate::model::LatentModel;
use crate::sampler::{sample, SamplerConfig};
use crate::scenegen::Scene;
use crate::textlatent::Vocabulary;

pub const LENGTH_BUCKETS: [usize; 4] = [6, 10, 14, 18];
pub const BENCH_HEADER: &str = "model,length_bucket,mean_wall_ms,forward_passes,bleu4";

/// Caption text plus the cost of producing it.
#[derive(Clone, Debug, PartialEq)]
pub struct Captioned {
    pub caption: String,
    /// Tokens after `[CLS]` up to and including the first `[SEP]`.
    pub length: usize,
    pub forward_passes: u64,
    pub wall_ms: f64,
}

fn emitted_length(tokens: &[usize], vocab: &Vocabulary) -> usize {
    let body = tokens.get(1..).unwrap_or_default();
    match body.iter().position(|&t| t == vocab.sep) {
        Some(i) => i + 1,
        None => body.iter().filter(|&&t| t != vocab.pad).count(),
    }
}

pub trait Captioner {
    fn name(&self) -> &str;
    fn caption(&self, scenes: &[Scene]) -> Result<Vec<Captioned>>;
}

pub struct DiffusionCaptioner<'a> {
    pub model: &'a LatentModel,
    pub config: SamplerConfig,
}

impl Captioner for DiffusionCaptioner<'_> {
    fn name(&self) -> &str {
        "diffusion"
    }

    fn caption(&self, scenes: &[Scene]) -> Result<Vec<Captioned>> {
        let conds: Vec<_> = scenes.iter().map(|s| self.model.encode_condition(s)).collect();
        let gens = sample(self.model, &self.model.schedule, &self.model.vocab, &conds, 0, &self.config, None)?;
        let vocab = &self.model.vocab;
        Ok(gens
            .into_iter()
            .map(|g| Captioned {
                length: emitted_length(&g.tokens, vocab),
                caption: g.caption,
                forward_passes: g.forward_passes,
                wall_ms: g.wall_ms,
            })
            .collect())
    }
}

impl Captioner for ArModel {
    fn name(&self) -> &str {
        "ar"
    }

    fn caption(&self, scenes: &[Scene]) -> Result<Vec<Captioned>> {
        Ok(self
            .sample(scenes)
            .into_iter()
            .map(|g| Captioned {
                length: emitted_length(&g.tokens, &self.vocab),
                caption: g.caption,
                forward_passes: g.forward_passes,
                wall_ms: g.wall_ms,
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub model: String,
    pub length_bucket: usize,
    pub mean_wall_ms: f64,
    pub median_wall_ms: f64,
    /// Mean counted passes per caption over the timed runs.
    pub forward_passes: f64,
    /// Passes of every timed run.
    pub passes: Vec<u64>,
    /// Emitted length of every timed run.
    pub lengths: Vec<usize>,
    pub bleu4: f64,
}

/// Time single-caption generation per length bucket. The first `warmup`
/// scenes of a bucket are generated and discarded, the next `runs` timed
/// one at a time; BLEU is measured on the whole bucket in one batch.
pub fn latency_sweep(
    captioner: &dyn Captioner,
    buckets: &[(usize, Vec<Scene>)],
    warmup: usize,
    runs: usize,
) -> Result<Vec<LatencyRow>> {
    let mut rows = Vec::new();
    for (bucket, scenes) in buckets {
        if scenes.len() < warmup + runs {
            return Err(Error::Config(format!("bucket {bucket} holds {} scenes, need {}", scenes.len(), warmup + runs)));
        }
        for s in &scenes[..warmup] {
            captioner.caption(std::slice::from_ref(s))?;
        }
        let mut walls = Vec::with_capacity(runs);
        let mut passes = Vec::with_capacity(runs);
        let mut lengths = Vec::with_capacity(runs);
        for s in &scenes[warmup..warmup + runs] {
            let out = captioner.caption(std::slice::from_ref(s))?.remove(0);
            walls.push(out.wall_ms);
            passes.push(out.forward_passes);
            lengths.push(out.length);
        }
        let outs = captioner.caption(scenes)?;
        let hyps: Vec<&str> = outs.iter().map(|o| o.caption.as_str()).collect();
        let refs: Vec<Vec<String>> = scenes.iter().map(|s| vec![s.caption()]).collect();
        rows.push(LatencyRow {
            model: captioner.name().to_string(),
            length_bucket: *bucket,
            mean_wall_ms: walls.iter().sum::<f64>() / runs as f64,
            median_wall_ms: median(&walls),
            forward_passes: passes.iter().sum::<u64>() as f64 / runs as f64,
            passes,
            lengths,
            bleu4: bleu4(&hyps, &refs)?,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[LatencyRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{:.4},{},{:.6}", r.model, r.length_bucket, r.mean_wall_ms, r.forward_passes, r.bleu4).unwrap();
    }
    out
}
