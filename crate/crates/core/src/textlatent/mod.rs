//! Tokens, the split text autoencoder, and the normalized latent space.

mod latent;
mod pretrain;
mod stack;
mod tokens;
mod vocab;

pub use latent::{
    denormalize, normalize, reassign, zero_special_rows, LatentSeq, LatentStats, DEFAULT_STATS_EPS, MIN_STATS_SAMPLES,
};
pub use pretrain::{pretrain_autoencoder, reconstruction_accuracy, PretrainConfig};
pub use stack::{argmax_with_confidence, estimate_stats, TextConfig, TextStack, DEC_PREFIX, ENC_PREFIX, HEAD_PREFIX};
pub use tokens::{detokenize, enforce_layout, strip_specials, tokenize, TokenSeq};
pub use vocab::{Vocabulary, CLS, CONTENT_WORDS, MASK, PAD, SEP};
