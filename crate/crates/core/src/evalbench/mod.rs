//! Caption metrics, the autoregressive baseline, and latency sweeps.

mod ar;
mod bleu;
mod latency;
mod metrics;

pub use ar::{load_ar, save_ar, train_ar, ArConfig, ArGeneration, ArModel, ArTrainConfig};
pub use bleu::{bleu4, sentence_bleu};
pub use latency::{bench_csv, latency_sweep, Captioned, Captioner, DiffusionCaptioner, LatencyRow, BENCH_HEADER, LENGTH_BUCKETS};
pub use metrics::{evaluate, median, BucketReport, EvalReport};
