use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalbench::bleu4;
use crate::textlatent::{strip_specials, TokenSeq, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// Reference length in tokens, `[SEP]` included.
    pub length: usize,
    pub count: usize,
    pub bleu4: f64,
    pub token_accuracy: f64,
    pub length_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub bleu4: f64,
    pub token_accuracy: f64,
    /// Fraction of outputs with exactly the reference word count.
    pub length_accuracy: f64,
    pub buckets: Vec<BucketReport>,
    pub forward_passes_per_caption: f64,
    pub median_wall_ms: f64,
    pub mean_wall_ms: f64,
}

struct Scores {
    bleu4: f64,
    token_accuracy: f64,
    length_accuracy: f64,
}

fn score(pred: &[&[usize]], refs: &[&TokenSeq], vocab: &Vocabulary) -> Result<Scores> {
    let hyps: Vec<String> = pred.iter().map(|p| strip_specials(p, vocab)).collect();
    let texts: Vec<Vec<String>> = refs.iter().map(|r| vec![strip_specials(r.ids(), vocab)]).collect();
    let (mut hits, mut total, mut lengths) = (0usize, 0usize, 0usize);
    for ((p, r), (h, t)) in pred.iter().zip(refs).zip(hyps.iter().zip(&texts)) {
        let sep = r.sep_position(vocab);
        hits += (1..=sep).filter(|&i| p.get(i) == Some(&r.ids()[i])).count();
        total += sep;
        lengths += usize::from(h.split_whitespace().count() == t[0].split_whitespace().count());
    }
    Ok(Scores {
        bleu4: bleu4(&hyps, &texts)?,
        token_accuracy: hits as f64 / total.max(1) as f64,
        length_accuracy: lengths as f64 / pred.len() as f64,
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Compare predicted token rows with reference sequences. Token accuracy
/// counts positions `1..=[SEP]` of the reference.
pub fn evaluate(
    predictions: &[Vec<usize>],
    references: &[TokenSeq],
    vocab: &Vocabulary,
    forward_passes: &[u64],
    wall_ms: &[f64],
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if predictions.len() != references.len() {
        return Err(Error::Shape { expected: vec![references.len()], got: vec![predictions.len()] });
    }
    let pred: Vec<&[usize]> = predictions.iter().map(|p| p.as_slice()).collect();
    let refs: Vec<&TokenSeq> = references.iter().collect();
    let all = score(&pred, &refs, vocab)?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in references.iter().enumerate() {
        groups.entry(r.sep_position(vocab)).or_default().push(i);
    }
    let buckets = groups
        .into_iter()
        .map(|(length, idx)| {
            let p: Vec<&[usize]> = idx.iter().map(|&i| pred[i]).collect();
            let r: Vec<&TokenSeq> = idx.iter().map(|&i| refs[i]).collect();
            let s = score(&p, &r, vocab)?;
            Ok(BucketReport {
                length,
                count: idx.len(),
                bleu4: s.bleu4,
                token_accuracy: s.token_accuracy,
                length_accuracy: s.length_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let passes: Vec<f64> = forward_passes.iter().map(|&p| p as f64).collect();
    Ok(EvalReport {
        count: predictions.len(),
        bleu4: all.bleu4,
        token_accuracy: all.token_accuracy,
        length_accuracy: all.length_accuracy,
        buckets,
        forward_passes_per_caption: mean(&passes),
        median_wall_ms: median(wall_ms),
        mean_wall_ms: mean(wall_ms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textlatent::tokenize;

    #[test]
    fn perfect_and_shifted_predictions() {
        let v = Vocabulary::default();
        let refs: Vec<TokenSeq> = ["a small red circle", "a large blue star above a small green square"]
            .iter()
            .map(|c| tokenize(c, &v, 24).unwrap())
            .collect();
        let pred: Vec<Vec<usize>> = refs.iter().map(|r| r.ids().to_vec()).collect();
        let rep = evaluate(&pred, &refs, &v, &[60, 60], &[1.0, 3.0]).unwrap();
        assert_eq!((rep.bleu4, rep.token_accuracy, rep.length_accuracy), (1.0, 1.0, 1.0));
        assert_eq!(rep.buckets.len(), 2);
        assert_eq!(rep.median_wall_ms, 2.0);
        assert_eq!(rep.forward_passes_per_caption, 60.0);

        let mut wrong = pred.clone();
        wrong[0][2] = v.id("blue").unwrap();
        wrong[1][9] = v.pad;
        let rep = evaluate(&wrong, &refs, &v, &[], &[]).unwrap();
        assert!((rep.token_accuracy - 13.0 / 15.0).abs() < 1e-12);
        assert_eq!(rep.length_accuracy, 0.5);
    }
}
