use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Content words of the caption space. The first 19 are emitted by the
/// scene grammar; the rest are reserved entries the grammar never produces.
pub const CONTENT_WORDS: [&str; 32] = [
    "a", "small", "large", "red", "blue", "green", "yellow", "circle", "square", "triangle", "star", "above",
    "below", "to", "the", "left", "right", "of", "and", "purple", "orange", "white", "black", "hexagon", "diamond",
    "oval", "cross", "medium", "tiny", "huge", "near", "beside",
];

/// Dense id <-> token map with four reserved special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub pad: usize,
    pub cls: usize,
    pub sep: usize,
    pub mask: usize,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let tokens = [PAD, CLS, SEP, MASK].into_iter().chain(CONTENT_WORDS).map(String::from).collect();
        Vocabulary::from_tokens(tokens).expect("built-in vocabulary is valid")
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary entry {tok:?} at line {}", i + 1)));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {tok:?}")));
            }
        }
        let find = |t: &str| index.get(t).copied().ok_or_else(|| Error::Config(format!("vocabulary lacks {t}")));
        let (pad, cls, sep, mask) = (find(PAD)?, find(CLS)?, find(SEP)?, find(MASK)?);
        Ok(Vocabulary { tokens, index, pad, cls, sep, mask })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(&self, id: usize) -> bool {
        id == self.pad || id == self.cls || id == self.sep || id == self.mask
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Vocabulary::from_tokens(text.lines().map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_text(&text)
    }
}
