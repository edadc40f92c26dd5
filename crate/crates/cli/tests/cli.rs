use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ladx_cli::Manifest;

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.toml")
}

fn ladx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ladx")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = ladx(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap_or_else(|_| panic!("not JSON: {line}"));
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = tiny_config();
    ok(&["gen-data", "--seed", "13", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["gen-data", "--seed", "13", "--config", p(&cfg), "--out", p(&b)]);
    let ja = fs::read(a.join("corpus.jsonl")).unwrap();
    assert!(!ja.is_empty());
    assert_eq!(ja, fs::read(b.join("corpus.jsonl")).unwrap());
    let m: Manifest = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "gen-data");
    assert_eq!(m.outputs[0].hash, ladx_cli::content_hash(&ja));
    assert!(fs::read_to_string(a.join("config.toml")).unwrap().contains("seed = 13"));
}

#[test]
fn missing_prerequisites_fail_with_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = ladx(&["sample", "--checkpoint", p(&dir.path().join("none.ladx")), "--out", p(&dir.path().join("s"))]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "missing_artifact");

    let out = ladx(&["pretrain-ae", "--data-dir", p(&dir.path().join("nodata")), "--out", p(&dir.path().join("p"))]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "missing_artifact");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[sampler]\neta = 3.0\n").unwrap();
    let out = ladx(&["gen-data", "--config", p(&bad), "--out", p(&dir.path().join("g"))]);
    assert_eq!(error_kind(&out), "invalid_config");

    let out = ladx(&["sample", "--back-refine", "half", "--out", p(&dir.path().join("s"))]);
    assert_eq!(error_kind(&out), "usage");

    let out = ladx(&["frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn help_documents_every_flag() {
    let out = ladx(&["sample", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--steps", "--eta", "--guidance", "--seed", "--back-refine", "--mbr", "--checkpoint", "--config", "--out", "--data-dir"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let out = ladx(&["infill", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("--anchors"));
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let cfg = tiny_config();
    let c = p(&cfg);
    ok(&["gen-data", "--config", c, "--out", p(&d("data"))]);
    ok(&["pretrain-ae", "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("ae"))]);
    let ae = d("ae").join("ae.ladx");

    // Zero epochs leaves the checkpoint untouched.
    ok(&["train", "--epochs", "0", "--init", p(&ae), "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("noop"))]);
    assert_eq!(fs::read(&ae).unwrap(), fs::read(d("noop").join("diffusion.ladx")).unwrap());

    ok(&["train", "--init", p(&ae), "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("diff"))]);
    let ck = d("diff").join("diffusion.ladx");
    let metrics = fs::read_to_string(d("diff").join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("step,loss,latent_loss,caption_loss,lr"));
    assert_eq!(metrics.lines().count(), 1 + 1000usize.div_ceil(64));

    // A finished diffusion checkpoint also passes through unchanged.
    ok(&["train", "--epochs", "1", "--init", p(&ck), "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("again"))]);
    assert_eq!(fs::read(&ck).unwrap(), fs::read(d("again").join("diffusion.ladx")).unwrap());

    ok(&["sample", "--checkpoint", p(&ck), "--count", "4", "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("sample"))]);
    let diag = fs::read_to_string(d("sample").join("diagnostics.jsonl")).unwrap();
    assert_eq!(diag.lines().count(), 4);
    for line in diag.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["forward_passes"], 10);
        for key in ["caption", "wall_ms", "confidences"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    ok(&["infill", "--checkpoint", p(&ck), "--anchors", "3=red,4=circle", "--count", "3", "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("infill"))]);
    assert_eq!(fs::read_to_string(d("infill").join("captions.txt")).unwrap().lines().count(), 3);
    let out = ladx(&["infill", "--checkpoint", p(&ck), "--anchors", "3=red,3=blue", "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("bad"))]);
    assert_eq!(error_kind(&out), "bad_anchor");

    ok(&["sample", "--checkpoint", p(&ck), "--scene", "a small red circle", "--back-refine", "0.5,0.5", "--mbr", "2", "--config", c, "--out", p(&d("br"))]);
    let v: serde_json::Value = serde_json::from_str(fs::read_to_string(d("br").join("diagnostics.jsonl")).unwrap().trim()).unwrap();
    // 3 + 5 iterations with guidance, times 2 candidates.
    assert_eq!(v["forward_passes"], 2 * 2 * 8);

    ok(&["eval", "--checkpoint", p(&ck), "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("eval"))]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d("eval").join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["count"], 16);
    for key in ["bleu4", "token_accuracy", "length_accuracy"] {
        let x = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{key} = {x}");
    }

    ok(&["train", "--model", "ar", "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("ar"))]);
    let ar = d("ar").join("ar.ladx");
    ok(&["eval", "--model", "ar", "--checkpoint", p(&ar), "--config", c, "--data-dir", p(&d("data")), "--out", p(&d("ar_eval"))]);
    ok(&["bench", "--checkpoint", p(&ck), "--ar-checkpoint", p(&ar), "--config", c, "--out", p(&d("bench"))]);
    let csv = fs::read_to_string(d("bench").join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,length_bucket,mean_wall_ms,forward_passes,bleu4");
    assert_eq!(lines.len(), 1 + 8);
    for row in &lines[1..5] {
        assert_eq!(row.split(',').nth(3), Some("10"), "{row}");
    }

    // Replaying the training run reproduces the checkpoint bit for bit.
    ok(&["replay", "--manifest", p(&d("diff").join("manifest.json")), "--out", p(&d("replay"))]);
    assert_eq!(fs::read(&ck).unwrap(), fs::read(d("replay").join("diffusion.ladx")).unwrap());
    let m: Manifest = serde_json::from_slice(&fs::read(d("replay").join("manifest.json")).unwrap()).unwrap();
    assert!(m.replay_of.is_some());
}
