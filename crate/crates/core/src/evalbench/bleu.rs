use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

fn ngram_counts<'s, 'a>(tokens: &'s [&'a str], n: usize) -> HashMap<&'s [&'a str], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Sufficient statistics of one sentence: clipped matches and totals per
/// order, hypothesis length, closest reference length.
#[derive(Clone, Copy, Debug, Default)]
struct Stats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

impl std::ops::AddAssign for Stats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn sentence_stats(hyp: &[&str], refs: &[Vec<&str>]) -> Stats {
    let mut s = Stats { hyp_len: hyp.len(), ..Stats::default() };
    s.ref_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(hyp.len()), len))
        .unwrap_or(0);
    for n in 1..=MAX_ORDER {
        let hyp_counts = ngram_counts(hyp, n);
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        for (g, c) in &hyp_counts {
            let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            s.matches[n - 1] += (*c).min(max_ref);
        }
        s.totals[n - 1] += hyp.len().saturating_sub(n - 1);
    }
    s
}

fn score(s: &Stats) -> f64 {
    if s.hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        if s.matches[n] == 0 {
            return 0.0;
        }
        log_sum += (s.matches[n] as f64 / s.totals[n] as f64).ln();
    }
    let bp = if s.hyp_len > s.ref_len { 1.0 } else { (1.0 - s.ref_len as f64 / s.hyp_len as f64).exp() };
    bp * (log_sum / MAX_ORDER as f64).exp()
}

/// Corpus BLEU-4 over whitespace-tokenized text, uniform weights, no
/// smoothing, brevity penalty from the closest reference length.
pub fn bleu4<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[Vec<R>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Shape { expected: vec![hypotheses.len()], got: vec![references.len()] });
    }
    let mut total = Stats::default();
    for (h, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Empty("reference list"));
        }
        let hyp: Vec<&str> = h.as_ref().split_whitespace().collect();
        let refs: Vec<Vec<&str>> = refs.iter().map(|r| r.as_ref().split_whitespace().collect()).collect();
        total += sentence_stats(&hyp, &refs);
    }
    Ok(score(&total))
}

/// Unsmoothed BLEU-4 of a single tokenized sentence.
pub fn sentence_bleu(hyp: &[&str], refs: &[Vec<&str>]) -> f64 {
    score(&sentence_stats(hyp, refs))
}
