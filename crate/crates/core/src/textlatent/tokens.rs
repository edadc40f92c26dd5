use crate::error::{Error, Result};
use crate::textlatent::Vocabulary;

/// Fixed-length caption: `[CLS] w1 .. wn [SEP] [PAD] ..`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<usize>,
}

impl TokenSeq {
    /// Validate the `[CLS] .. [SEP] [PAD]*` layout.
    pub fn new(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if ids.first() != Some(&vocab.cls) {
            return Err(Error::InvalidTokens("position 0 must be [CLS]".into()));
        }
        let seps: Vec<usize> = ids.iter().enumerate().filter(|(_, &id)| id == vocab.sep).map(|(i, _)| i).collect();
        let [sep] = seps[..] else {
            return Err(Error::InvalidTokens(format!("expected exactly one [SEP], found {}", seps.len())));
        };
        if ids[sep + 1..].iter().any(|&id| id != vocab.pad) {
            return Err(Error::InvalidTokens("non-[PAD] token after [SEP]".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab.len()) {
            return Err(Error::InvalidTokens(format!("id {bad} outside vocabulary")));
        }
        Ok(TokenSeq { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Index of the `[SEP]` token.
    pub fn sep_position(&self, vocab: &Vocabulary) -> usize {
        self.ids.iter().position(|&id| id == vocab.sep).expect("validated sequence has [SEP]")
    }

    /// Positions holding `[CLS]`, `[SEP]` or `[PAD]`.
    pub fn special_mask(&self, vocab: &Vocabulary) -> Vec<bool> {
        self.ids.iter().map(|&id| vocab.is_special(id)).collect()
    }
}

pub fn tokenize(caption: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    let words: Vec<&str> = caption.split_whitespace().collect();
    if words.len() + 2 > max_len {
        return Err(Error::Overlong { needed: words.len() + 2, max_len });
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls);
    for w in words {
        match vocab.id(w) {
            Some(id) if !vocab.is_special(id) => ids.push(id),
            _ => return Err(Error::UnknownWord(w.to_string())),
        }
    }
    ids.push(vocab.sep);
    ids.resize(max_len, vocab.pad);
    Ok(TokenSeq { ids })
}

pub fn detokenize(tokens: &TokenSeq, vocab: &Vocabulary) -> String {
    strip_specials(tokens.ids(), vocab)
}

/// Drop every special token and join the remaining words. Works on raw
/// predicted ids, which need not satisfy the [`TokenSeq`] layout.
pub fn strip_specials(ids: &[usize], vocab: &Vocabulary) -> String {
    ids.iter().filter(|&&id| !vocab.is_special(id)).map(|&id| vocab.token(id)).collect::<Vec<_>>().join(" ")
}

/// Bring predicted ids into the [`TokenSeq`] layout: `[CLS]` at 0, and the
/// caption ends at the first special token after it, which becomes `[SEP]`
/// with `[PAD]` beyond. Ids with no special after position 0 are kept.
pub fn enforce_layout(ids: &mut [usize], vocab: &Vocabulary) {
    let Some(first) = ids.first_mut() else { return };
    *first = vocab.cls;
    if let Some(end) = ids.iter().skip(1).position(|&id| vocab.is_special(id)).map(|i| i + 1) {
        ids[end] = vocab.sep;
        ids[end + 1..].fill(vocab.pad);
    }
}
