use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scenegen::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// FNV-1a over the seed bytes followed by the caption bytes.
fn fnv1a(seed: u64, caption: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(caption.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The split a scene belongs to. Depends only on the caption, so a scene
/// can never appear in two splits.
pub fn split_of(seed: u64, caption: &str) -> Split {
    match fnv1a(seed, caption) % 1000 {
        0..800 => Split::Train,
        800..900 => Split::Val,
        _ => Split::Test,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub scene: Scene,
    pub caption: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in self.iter() {
            out.push_str(&serde_json::to_string(ex).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let ex: Example = serde_json::from_str(line)?;
            ex.scene.validate()?;
            if ex.scene.caption() != ex.caption {
                return Err(Error::Config(format!("line {}: caption does not match scene", i + 1)));
            }
            match ex.split {
                Split::Train => corpus.train.push(ex),
                Split::Val => corpus.val.push(ex),
                Split::Test => corpus.test.push(ex),
            }
        }
        Ok(corpus)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Sample scenes until every split holds its quota. Rejected draws (whose
/// hashed split is already full) still consume randomness, so the result
/// is a pure function of the arguments.
pub fn generate_dataset(seed: u64, n_train: usize, n_val: usize, n_test: usize) -> Result<Corpus> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Empty("split size"));
    }
    let mut rng = rng::stream(seed, Purpose::Data, 0);
    let mut corpus = Corpus::default();
    while corpus.train.len() < n_train || corpus.val.len() < n_val || corpus.test.len() < n_test {
        let scene = Scene::random(&mut rng);
        let caption = scene.caption();
        let split = split_of(seed, &caption);
        let (bucket, quota) = match split {
            Split::Train => (&mut corpus.train, n_train),
            Split::Val => (&mut corpus.val, n_val),
            Split::Test => (&mut corpus.test, n_test),
        };
        if bucket.len() < quota {
            bucket.push(Example { scene, caption, split });
        }
    }
    Ok(corpus)
}

/// `n` held-out scenes whose token length lies in `(min_len, max_len]`.
pub fn generate_bucket(seed: u64, min_len: usize, max_len: usize, n: usize) -> Result<Vec<Scene>> {
    if ![5, 10, 13, 15, 18].iter().any(|&l| l > min_len && l <= max_len) {
        return Err(Error::Config(format!("no caption length in ({min_len}, {max_len}]")));
    }
    let mut rng = rng::stream(seed, Purpose::Data, 1 + max_len as u64);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let scene = Scene::random(&mut rng);
        let len = scene.token_len();
        if len > min_len && len <= max_len && split_of(seed, &scene.caption()) == Split::Test {
            out.push(scene);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = generate_dataset(3, 200, 20, 20).unwrap();
        let b = generate_dataset(3, 200, 20, 20).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (200, 20, 20));
        assert_ne!(a, generate_dataset(4, 200, 20, 20).unwrap());
    }

    #[test]
    fn splits_are_disjoint_and_labelled() {
        let c = generate_dataset(13, 2000, 200, 200).unwrap();
        let sets: Vec<HashSet<&str>> =
            [Split::Train, Split::Val, Split::Test].iter().map(|&s| c.split(s).iter().map(|e| e.caption.as_str()).collect()).collect();
        assert!(sets[0].is_disjoint(&sets[1]));
        assert!(sets[0].is_disjoint(&sets[2]));
        assert!(sets[1].is_disjoint(&sets[2]));
        for s in [Split::Train, Split::Val, Split::Test] {
            assert!(c.split(s).iter().all(|e| e.split == s && split_of(13, &e.caption) == s));
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let c = generate_dataset(5, 50, 5, 5).unwrap();
        let text = c.to_jsonl();
        assert_eq!(text.lines().count(), 60);
        assert_eq!(Corpus::from_jsonl(&text).unwrap(), c);
        assert!(text.starts_with(r#"{"scene":{"objects":["#));
    }

    #[test]
    fn jsonl_rejects_mismatched_caption() {
        let c = generate_dataset(5, 1, 1, 1).unwrap();
        let text = c.to_jsonl().replacen("\"caption\":\"a ", "\"caption\":\"a a ", 1);
        assert!(Corpus::from_jsonl(&text).is_err());
    }

    #[test]
    fn buckets_respect_length_caps() {
        for (lo, hi) in [(0, 6), (6, 10), (10, 14), (14, 18)] {
            let b = generate_bucket(1, lo, hi, 10).unwrap();
            assert!(b.iter().all(|s| s.token_len() > lo && s.token_len() <= hi));
        }
        assert!(generate_bucket(1, 18, 30, 1).is_err());
        assert!(generate_bucket(1, 5, 9, 1).is_err());
    }
}
