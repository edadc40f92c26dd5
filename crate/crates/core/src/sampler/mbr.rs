use crate::error::{Error, Result};
use crate::evalbench::sentence_bleu;

/// Index of the candidate with the highest mean sentence BLEU against the
/// others; the lowest index wins ties.
pub fn mbr_select(candidates: &[String]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    if candidates.len() == 1 {
        return Ok(0);
    }
    let tokens: Vec<Vec<&str>> = candidates.iter().map(|c| c.split_whitespace().collect()).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, hyp) in tokens.iter().enumerate() {
        let total: f64 = tokens
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, r)| sentence_bleu(hyp, std::slice::from_ref(r)))
            .sum();
        let score = total / (tokens.len() - 1) as f64;
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn single_and_identical() {
        assert_eq!(mbr_select(&s(&["a b c d"])).unwrap(), 0);
        assert_eq!(mbr_select(&s(&["a b c d e", "a b c d e", "a b c d e"])).unwrap(), 0);
        assert!(mbr_select(&[]).is_err());
    }

    #[test]
    fn majority_wins() {
        let c = s(&["a small red circle above a large blue square", "a large blue star", "a large blue star"]);
        assert_eq!(mbr_select(&c).unwrap(), 1);
    }
}
