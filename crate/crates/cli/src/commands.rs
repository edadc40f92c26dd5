use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use ladx::checkpoint::{load_latent, save_latent, Stage};
use ladx::config::RunConfig;
use ladx::evalbench::{
    bench_csv, evaluate, latency_sweep, load_ar, save_ar, train_ar, ArModel, DiffusionCaptioner, EvalReport, LENGTH_BUCKETS,
};
use ladx::sampler::{diagnostics_line, merge_anchor_tokens, sample, Anchors, BackRefineConfig, Generation};
use ladx::scenegen::{generate_bucket, generate_dataset, Corpus, Scene};
use ladx::textlatent::{estimate_stats, pretrain_autoencoder, reconstruction_accuracy, tokenize, TokenSeq, Vocabulary};
use ladx::trainer::{new_optimizer, TrainData, Trainer, METRICS_HEADER};
use ladx::{Error, LatentModel};
use log::info;
use serde_json::json;

use crate::args::{Cli, Command, ModelKind, SamplerArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{FileRecord, Manifest, Run, CONFIG};

pub const CORPUS: &str = "corpus.jsonl";

/// Parse `argv` (program name excluded) and execute it.
pub fn run_args(argv: Vec<String>) -> CliResult<Manifest> {
    let cli = Cli::try_parse_from(std::iter::once("ladx".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    execute(cli, argv, None)
}

fn execute(cli: Cli, argv: Vec<String>, replay_of: Option<PathBuf>) -> CliResult<Manifest> {
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, &cli.out);
    }
    let mut cfg = match &cli.config {
        Some(path) if !path.is_file() => return Err(Error::MissingArtifact { what: "config", path: path.clone() }.into()),
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, &cli.command)?;
    cfg.validate()?;
    let mut run = Run::start(cfg, &cli.out)?;
    if let Some(path) = &cli.config {
        run.input("config", path)?;
    }
    let name = match &cli.command {
        Command::GenData { .. } => {
            gen_data(&mut run)?;
            "gen-data"
        }
        Command::PretrainAe { .. } => {
            pretrain(&mut run, &cli.data_dir)?;
            "pretrain-ae"
        }
        Command::Train { model: ModelKind::Diffusion, init, .. } => {
            train_diffusion(&mut run, &cli.data_dir, init)?;
            "train"
        }
        Command::Train { model: ModelKind::Ar, .. } => {
            train_baseline(&mut run, &cli.data_dir)?;
            "train"
        }
        Command::Sample { checkpoint, scenes, count, .. } => {
            caption(&mut run, &cli.data_dir, checkpoint, scenes, *count, None)?;
            "sample"
        }
        Command::Infill { checkpoint, anchors, scenes, count, .. } => {
            caption(&mut run, &cli.data_dir, checkpoint, scenes, *count, Some(anchors))?;
            "infill"
        }
        Command::Eval { model, checkpoint, .. } => {
            eval(&mut run, &cli.data_dir, *model, checkpoint)?;
            "eval"
        }
        Command::Bench { checkpoint, ar_checkpoint, .. } => {
            bench(&mut run, checkpoint, ar_checkpoint)?;
            "bench"
        }
        Command::Replay { .. } => unreachable!("handled above"),
    };
    run.finish(name, argv, replay_of)
}

fn apply_overrides(cfg: &mut RunConfig, command: &Command) -> CliResult<()> {
    match command {
        Command::GenData { seed } => set(&mut cfg.data.seed, *seed),
        Command::PretrainAe { epochs, seed } => {
            set(&mut cfg.pretrain.epochs, *epochs);
            set(&mut cfg.seed, *seed);
        }
        Command::Train { model: ModelKind::Diffusion, epochs, seed, .. } => {
            set(&mut cfg.train.epochs, *epochs);
            set(&mut cfg.train.seed, *seed);
        }
        Command::Train { model: ModelKind::Ar, epochs, seed, .. } => {
            set(&mut cfg.ar_train.epochs, *epochs);
            set(&mut cfg.ar_train.seed, *seed);
        }
        Command::Sample { sampler, .. } | Command::Infill { sampler, .. } | Command::Bench { sampler, .. } => {
            sampler_overrides(cfg, sampler)?
        }
        Command::Eval { sampler, count, .. } => {
            sampler_overrides(cfg, sampler)?;
            set(&mut cfg.eval.n_eval, *count);
        }
        Command::Replay { .. } => {}
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn sampler_overrides(cfg: &mut RunConfig, args: &SamplerArgs) -> CliResult<()> {
    let s = &mut cfg.sampler;
    set(&mut s.steps, args.steps);
    set(&mut s.eta, args.eta);
    set(&mut s.guidance, args.guidance);
    set(&mut s.seed, args.seed);
    set(&mut s.mbr_candidates, args.mbr);
    if let Some(text) = &args.back_refine {
        s.back_refine = parse_back_refine(text)?;
    }
    Ok(())
}

/// `"t_frac,l_frac"` or `"off"`.
pub fn parse_back_refine(text: &str) -> CliResult<Option<BackRefineConfig>> {
    if matches!(text.trim(), "off" | "none") {
        return Ok(None);
    }
    let bad = || CliError::Usage(format!("--back-refine expects t_frac,l_frac or off, got {text:?}"));
    let (t, l) = text.split_once(',').ok_or_else(bad)?;
    let t_frac = t.trim().parse().map_err(|_| bad())?;
    let l_frac = l.trim().parse().map_err(|_| bad())?;
    Ok(Some(BackRefineConfig { t_frac, l_frac }))
}

/// `"3=red,7=square"` to a position map.
pub fn parse_anchors(text: &str) -> CliResult<BTreeMap<usize, String>> {
    let mut pairs = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || CliError::Usage(format!("anchor {part:?} is not position=word"));
        let (pos, word) = part.split_once('=').ok_or_else(bad)?;
        pairs.push((pos.trim().parse().map_err(|_| bad())?, word.trim().to_string()));
    }
    if pairs.is_empty() {
        return Err(CliError::Usage("--anchors is empty".into()));
    }
    Ok(merge_anchor_tokens(&pairs)?)
}

fn load_corpus(run: &mut Run, data_dir: &Path) -> CliResult<Corpus> {
    let path = run.input("corpus", &data_dir.join(CORPUS))?;
    Ok(Corpus::load(&path)?)
}

fn load_model(run: &mut Run, path: &Path) -> CliResult<LatentModel> {
    let path = run.input("diffusion checkpoint", path)?;
    let ck = load_latent(&path)?;
    if ck.stage != Stage::Diffusion {
        return Err(Error::Config(format!("{} holds an autoencoder that has not been through diffusion training", path.display())).into());
    }
    Ok(ck.model)
}

fn tokens(examples: &[ladx::scenegen::Example], vocab: &Vocabulary, max_len: usize) -> CliResult<Vec<TokenSeq>> {
    Ok(examples.iter().map(|e| tokenize(&e.caption, vocab, max_len)).collect::<ladx::Result<Vec<_>>>()?)
}

fn gen_data(run: &mut Run) -> CliResult<()> {
    let d = run.cfg.data.clone();
    let corpus = run.timed("generate", |_| Ok(generate_dataset(d.seed, d.n_train, d.n_val, d.n_test)?))?;
    info!("{} train / {} val / {} test captions", corpus.train.len(), corpus.val.len(), corpus.test.len());
    run.write(CORPUS, corpus.to_jsonl())?;
    Ok(())
}

fn pretrain(run: &mut Run, data_dir: &Path) -> CliResult<()> {
    let corpus = load_corpus(run, data_dir)?;
    let cfg = run.cfg.clone();
    let mut model = LatentModel::new(cfg.model(), Vocabulary::default(), cfg.seed)?;
    let train = tokens(&corpus.train, &model.vocab, cfg.max_len)?;
    let val = tokens(&corpus.val, &model.vocab, cfg.max_len)?;
    let text = model.text.clone();
    let mut csv = String::from("step,loss\n");
    run.timed("pretrain", |_| {
        pretrain_autoencoder(&text, &mut model.store, &train, &model.vocab, &cfg.pretrain, cfg.seed, cfg.text.stats_eps, |s, l| {
            writeln!(csv, "{s},{l}").unwrap();
            if s % 50 == 0 {
                info!("pretrain step {s} loss {l:.4}");
            }
        })?;
        Ok(())
    })?;
    let n_stats = cfg.text.stats_samples.min(train.len());
    let stats = estimate_stats(&model.text, &model.store, &train[..n_stats], cfg.text.stats_eps, &model.vocab)?;
    let train_acc = reconstruction_accuracy(&model.text, &model.store, &stats, &train, &model.vocab);
    let val_acc = reconstruction_accuracy(&model.text, &model.store, &stats, &val, &model.vocab);
    info!("reconstruction accuracy: train {train_acc:.4}, held-out {val_acc:.4}");
    model.stats = Some(stats);
    run.write("pretrain_metrics.csv", csv)?;
    let report = json!({ "train_accuracy": train_acc, "heldout_accuracy": val_acc });
    run.write("pretrain.json", serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n")?;
    let path = run.output("ae.ladx");
    save_latent(&path, &model, Stage::Pretrained, &new_optimizer(&cfg.train), None)?;
    Ok(())
}

fn train_diffusion(run: &mut Run, data_dir: &Path, init: &Path) -> CliResult<()> {
    let corpus = load_corpus(run, data_dir)?;
    let init = run.input("pretrained checkpoint", init)?;
    let ck = load_latent(&init)?;
    if ck.model.config != run.cfg.model() {
        return Err(Error::Config(format!("{} was built with a different model configuration", init.display())).into());
    }
    let mut model = ck.model;
    let (tcfg, opt) = match (ck.stage, &ck.train) {
        (Stage::Diffusion, Some(t)) => (ladx::trainer::TrainConfig { epochs: run.cfg.train.epochs, ..t.clone() }, ck.optimizer.clone()),
        _ => (run.cfg.train.clone(), new_optimizer(&run.cfg.train)),
    };
    let data = TrainData::new(&model, &corpus.train)?;
    let mut trainer = Trainer::new(tcfg.clone(), data.len(), opt)?;
    let start = trainer.step_index();
    info!("diffusion training from step {start} to {}", trainer.total_steps());
    let mut csv = format!("{METRICS_HEADER}\n");
    run.timed("train", |_| {
        trainer.run(&mut model, &data, |m| {
            csv.push_str(&m.csv_row());
            csv.push('\n');
            if m.step % 20 == 0 {
                info!("step {} loss {:.4} (latent {:.4}, caption {:.4})", m.step, m.loss, m.latent_loss, m.caption_loss);
            }
        })?;
        Ok(())
    })?;
    run.write("metrics.csv", csv)?;
    let path = run.output("diffusion.ladx");
    if trainer.step_index() == start {
        // Nothing ran: write the input state back unchanged.
        save_latent(&path, &model, ck.stage, &ck.optimizer, ck.train.as_ref())?;
    } else {
        save_latent(&path, &model, Stage::Diffusion, &trainer.opt, Some(&tcfg))?;
    }
    Ok(())
}

fn train_baseline(run: &mut Run, data_dir: &Path) -> CliResult<()> {
    let corpus = load_corpus(run, data_dir)?;
    let cfg = run.cfg.clone();
    let mut model = ArModel::new(cfg.ar.clone(), Vocabulary::default(), cfg.seed)?;
    let mut csv = String::from("step,loss\n");
    let (_, opt) = run.timed("train", |_| {
        Ok(train_ar(&mut model, &corpus.train, &cfg.ar_train, |s, l| {
            writeln!(csv, "{s},{l}").unwrap();
            if s % 20 == 0 {
                info!("baseline step {s} loss {l:.4}");
            }
        })?)
    })?;
    run.write("ar_metrics.csv", csv)?;
    let path = run.output("ar.ladx");
    save_ar(&path, &model, &opt, Some(&cfg.ar_train))?;
    Ok(())
}

fn held_out_scenes(run: &mut Run, data_dir: &Path, given: &[String], count: usize) -> CliResult<Vec<Scene>> {
    if !given.is_empty() {
        return Ok(given.iter().map(|c| Scene::parse(c)).collect::<ladx::Result<Vec<_>>>()?);
    }
    let corpus = load_corpus(run, data_dir)?;
    if count > corpus.test.len() {
        return Err(Error::Config(format!("asked for {count} held-out scenes, corpus has {}", corpus.test.len())).into());
    }
    Ok(corpus.test[..count].iter().map(|e| e.scene.clone()).collect())
}

fn write_generations(run: &mut Run, gens: &[Generation]) -> CliResult<()> {
    let mut diag = String::new();
    let mut captions = String::new();
    for g in gens {
        diag.push_str(&diagnostics_line(g));
        diag.push('\n');
        captions.push_str(&g.caption);
        captions.push('\n');
    }
    run.write("diagnostics.jsonl", diag)?;
    run.write("captions.txt", captions)?;
    Ok(())
}

fn caption(
    run: &mut Run,
    data_dir: &Path,
    checkpoint: &Path,
    scenes: &[String],
    count: usize,
    anchors: Option<&String>,
) -> CliResult<()> {
    let anchor_tokens = anchors.map(|a| parse_anchors(a)).transpose()?;
    let model = load_model(run, checkpoint)?;
    let scenes = held_out_scenes(run, data_dir, scenes, count)?;
    let anchors: Option<Anchors> = anchor_tokens.map(|t| model.anchor_latents(&t)).transpose()?;
    let cfg = run.cfg.sampler.clone();
    let gens = run.timed("sample", |_| {
        let conds: Vec<_> = scenes.iter().map(|s| model.encode_condition(s)).collect();
        Ok(sample(&model, &model.schedule, &model.vocab, &conds, 0, &cfg, anchors.as_ref())?)
    })?;
    write_generations(run, &gens)
}

fn report_json(report: &EvalReport) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(report).map_err(Error::from)? + "\n")
}

fn eval(run: &mut Run, data_dir: &Path, kind: ModelKind, checkpoint: &Path) -> CliResult<()> {
    let corpus = load_corpus(run, data_dir)?;
    let n = run.cfg.eval.n_eval;
    if n > corpus.test.len() {
        return Err(Error::Config(format!("eval.n_eval {n} exceeds the {} held-out captions", corpus.test.len())).into());
    }
    let examples = &corpus.test[..n];
    let scenes: Vec<Scene> = examples.iter().map(|e| e.scene.clone()).collect();
    let vocab = Vocabulary::default();
    let refs = tokens(examples, &vocab, run.cfg.max_len)?;
    let report = match kind {
        ModelKind::Diffusion => {
            let model = load_model(run, checkpoint)?;
            let cfg = run.cfg.sampler.clone();
            let gens = run.timed("sample", |_| {
                let conds: Vec<_> = scenes.iter().map(|s| model.encode_condition(s)).collect();
                Ok(sample(&model, &model.schedule, &model.vocab, &conds, 0, &cfg, None)?)
            })?;
            write_generations(run, &gens)?;
            let preds: Vec<Vec<usize>> = gens.iter().map(|g| g.tokens.clone()).collect();
            let passes: Vec<u64> = gens.iter().map(|g| g.forward_passes).collect();
            let walls: Vec<f64> = gens.iter().map(|g| g.wall_ms).collect();
            evaluate(&preds, &refs, &vocab, &passes, &walls)?
        }
        ModelKind::Ar => {
            let path = run.input("baseline checkpoint", checkpoint)?;
            let (model, _) = load_ar(&path)?;
            let gens = run.timed("sample", |_| Ok(model.sample(&scenes)))?;
            let captions: String = gens.iter().map(|g| format!("{}\n", g.caption)).collect();
            run.write("captions.txt", captions)?;
            let preds: Vec<Vec<usize>> = gens.iter().map(|g| g.tokens.clone()).collect();
            let passes: Vec<u64> = gens.iter().map(|g| g.forward_passes).collect();
            let walls: Vec<f64> = gens.iter().map(|g| g.wall_ms).collect();
            evaluate(&preds, &refs, &vocab, &passes, &walls)?
        }
    };
    info!(
        "BLEU-4 {:.4}, token accuracy {:.4}, length accuracy {:.4}",
        report.bleu4, report.token_accuracy, report.length_accuracy
    );
    run.write("eval.json", report_json(&report)?)?;
    Ok(())
}

fn bench(run: &mut Run, checkpoint: &Path, ar_checkpoint: &Path) -> CliResult<()> {
    let model = load_model(run, checkpoint)?;
    let ar_path = run.input("baseline checkpoint", ar_checkpoint)?;
    let (ar, _) = load_ar(&ar_path)?;
    let ev = run.cfg.eval.clone();
    let mut buckets = Vec::new();
    let mut lower = 0;
    for &cap in &LENGTH_BUCKETS {
        buckets.push((cap, generate_bucket(run.cfg.data.seed, lower, cap, ev.bucket_size)?));
        lower = cap;
    }
    let diffusion = DiffusionCaptioner { model: &model, config: run.cfg.sampler.clone() };
    let mut rows = run.timed("diffusion", |_| Ok(latency_sweep(&diffusion, &buckets, ev.warmup_runs, ev.timed_runs)?))?;
    rows.extend(run.timed("ar", |_| Ok(latency_sweep(&ar, &buckets, ev.warmup_runs, ev.timed_runs)?))?);
    for r in &rows {
        info!("{} bucket {}: {:.1} ms, {} passes, BLEU-4 {:.4}", r.model, r.length_bucket, r.mean_wall_ms, r.forward_passes, r.bleu4);
    }
    run.write("bench.csv", bench_csv(&rows))?;
    run.write("bench.json", serde_json::to_string_pretty(&rows).map_err(Error::from)? + "\n")?;
    Ok(())
}

/// Repeat a recorded run: same arguments and working directory, the saved
/// merged config, and a fresh output directory. Inputs must be unchanged.
fn replay(manifest_path: &Path, out: &Path) -> CliResult<Manifest> {
    let manifest = Manifest::load(manifest_path)?;
    let run_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let config = absolute(&run_dir.join(CONFIG))?;
    let out = absolute(out)?;
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    std::env::set_current_dir(&manifest.cwd).map_err(|e| Error::io(&manifest.cwd, e))?;
    let result = (|| {
        for rec in &manifest.inputs {
            if rec.path.file_name().map(|n| n == CONFIG).unwrap_or(false) {
                continue;
            }
            if FileRecord::of(&rec.path)?.hash != rec.hash {
                return Err(CliError::InputChanged { path: rec.path.clone() });
            }
        }
        let mut cli = Cli::try_parse_from(std::iter::once("ladx".to_string()).chain(manifest.argv.iter().cloned()))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        cli.config = Some(config.clone());
        cli.out = out.clone();
        execute(cli, manifest.argv.clone(), Some(absolute(manifest_path)?))
    })();
    std::env::set_current_dir(&cwd).map_err(|e| Error::io(&cwd, e))?;
    result
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    Ok(std::path::absolute(path).map_err(|e| Error::io(path, e))?)
}
