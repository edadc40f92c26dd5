use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Latent diffusion captioning on synthetic scenes.
///
/// Every command writes `config.toml` (the merged configuration) and
/// `manifest.json` into `--out` next to its artifacts. Set LADX_THREADS to
/// cap the number of worker threads.
#[derive(Clone, Debug, Parser)]
#[command(name = "ladx", version)]
pub struct Cli {
    /// TOML run configuration. Omitted keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory for this run.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    pub out: PathBuf,

    /// Directory holding `corpus.jsonl` as written by `gen-data`.
    #[arg(long, global = true, value_name = "DIR", default_value = "data")]
    pub data_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Diffusion,
    Ar,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic scene/caption corpus into `--out/corpus.jsonl`.
    GenData {
        /// Corpus seed (overrides `data.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the text autoencoder and estimate latent statistics.
    PretrainAe {
        /// Pretraining epochs (overrides `pretrain.epochs`).
        #[arg(long)]
        epochs: Option<usize>,
        /// Initialization and shuffling seed (overrides the top-level `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the diffuser from a pretrained checkpoint, or the autoregressive baseline.
    Train {
        /// Which model to train.
        #[arg(long, value_enum, default_value = "diffusion")]
        model: ModelKind,
        /// Starting checkpoint for diffusion: a pretrained autoencoder or a
        /// diffusion checkpoint to resume.
        #[arg(long, value_name = "FILE", default_value = "ae.ladx")]
        init: PathBuf,
        /// Total training epochs (overrides `train.epochs` or `ar_train.epochs`).
        #[arg(long)]
        epochs: Option<usize>,
        /// Training seed (overrides `train.seed` or `ar_train.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Caption held-out scenes, or scenes given as captions.
    Sample {
        /// Diffusion checkpoint.
        #[arg(long, value_name = "FILE", default_value = "diffusion.ladx")]
        checkpoint: PathBuf,
        /// Scene to caption, written as its reference caption. Repeatable.
        #[arg(long = "scene", value_name = "CAPTION")]
        scenes: Vec<String>,
        /// Number of held-out scenes to caption when no `--scene` is given.
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Caption held-out scenes with some token positions fixed in advance.
    Infill {
        /// Diffusion checkpoint.
        #[arg(long, value_name = "FILE", default_value = "diffusion.ladx")]
        checkpoint: PathBuf,
        /// Comma-separated `position=word` pairs, e.g. "3=red,7=square".
        #[arg(long)]
        anchors: String,
        /// Scene to caption, written as its reference caption. Repeatable.
        #[arg(long = "scene", value_name = "CAPTION")]
        scenes: Vec<String>,
        /// Number of held-out scenes when no `--scene` is given.
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Score captions for held-out scenes and write `eval.json`.
    Eval {
        /// Which model the checkpoint holds.
        #[arg(long, value_enum, default_value = "diffusion")]
        model: ModelKind,
        /// Checkpoint to evaluate.
        #[arg(long, value_name = "FILE", default_value = "diffusion.ladx")]
        checkpoint: PathBuf,
        /// Held-out scenes to score (overrides `eval.n_eval`).
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Forward passes, wall time and BLEU per caption-length bucket for both models.
    Bench {
        /// Diffusion checkpoint.
        #[arg(long, value_name = "FILE", default_value = "diffusion.ladx")]
        checkpoint: PathBuf,
        /// Autoregressive baseline checkpoint.
        #[arg(long, value_name = "FILE", default_value = "ar.ladx")]
        ar_checkpoint: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Re-run the command recorded in a manifest with its saved config,
    /// writing into `--out`.
    Replay {
        /// `manifest.json` of the run to repeat.
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
    },
}

/// Overrides for the `[sampler]` section.
#[derive(Clone, Debug, Default, Args)]
pub struct SamplerArgs {
    /// DDIM steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// DDIM stochasticity in [0, 1]; 0 is deterministic.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Classifier-free guidance weight; 0 disables the unconditional pass.
    #[arg(long, allow_negative_numbers = true)]
    pub guidance: Option<f64>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Back&Refine as "t_frac,l_frac", or "off".
    #[arg(long, value_name = "T_FRAC,L_FRAC")]
    pub back_refine: Option<String>,
    /// Candidates per caption for minimum Bayes risk selection.
    #[arg(long, value_name = "K")]
    pub mbr: Option<usize>,
}
