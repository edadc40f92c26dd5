//! Synthetic scenes, their captions, and the condition encoder.

mod cond;
mod dataset;
mod scene;

pub use cond::{CondEncoder, CondFeatures, COND_PREFIX, DEFAULT_SLOTS};
pub use dataset::{generate_bucket, generate_dataset, split_of, Corpus, Example, Split};
pub use scene::{Color, Object, Relation, Scene, Shape, Size, MAX_OBJECTS};
