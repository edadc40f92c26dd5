mod common;

use common::tiny_corpus;
use ladx::evalbench::*;
use ladx::scenegen::Scene;
use ladx::textlatent::{tokenize, Vocabulary};
use proptest::prelude::*;

fn tiny_ar(seed: u64) -> ArModel {
    let cfg = ArConfig { blocks: 1, dim: 16, heads: 2, ffn: 32, max_len: 20, cond_slots: 4 };
    ArModel::new(cfg, Vocabulary::default(), seed).unwrap()
}

#[test]
fn bleu_reference_cases() {
    let r = vec![vec!["a small red circle above a large blue square"]];
    assert_eq!(bleu4(&["a small red circle above a large blue square"], &r).unwrap(), 1.0);
    assert_eq!(bleu4(&["square blue large a above circle red small a"], &r).unwrap(), 0.0);
    // 8 of 9 words, all n-grams match: brevity penalty exp(1 - 9/8).
    let got = bleu4(&["a small red circle above a large blue"], &r).unwrap();
    assert!((got - (1.0f64 - 9.0 / 8.0).exp()).abs() < 1e-12, "{got}");
}

proptest! {
    #[test]
    fn corpus_bleu_ignores_pair_order(seed in any::<u64>(), rot in 0usize..8) {
        let mut r = ladx::rng::stream(seed, ladx::rng::Purpose::Data, 0);
        let hyps: Vec<String> = (0..8).map(|_| Scene::random(&mut r).caption()).collect();
        let refs: Vec<Vec<String>> = (0..8).map(|_| vec![Scene::random(&mut r).caption()]).collect();
        let base = bleu4(&hyps, &refs).unwrap();
        let mut h2 = hyps.clone();
        let mut r2 = refs.clone();
        h2.rotate_left(rot);
        r2.rotate_left(rot);
        prop_assert!((bleu4(&h2, &r2).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn exact_copies_score_one(seed in any::<u64>()) {
        let mut r = ladx::rng::stream(seed, ladx::rng::Purpose::Data, 1);
        let caps: Vec<String> = (0..5).map(|_| Scene::random(&mut r).caption()).collect();
        let refs: Vec<Vec<String>> = caps.iter().map(|c| vec![c.clone()]).collect();
        prop_assert_eq!(bleu4(&caps, &refs).unwrap(), 1.0);
    }

    #[test]
    fn verbatim_pair_never_lowers_bleu(seed in any::<u64>(), n in 1usize..10) {
        let mut r = ladx::rng::stream(seed, ladx::rng::Purpose::Data, 2);
        let mut hyps: Vec<String> = (0..n).map(|_| Scene::random(&mut r).caption()).collect();
        let mut refs: Vec<Vec<String>> = (0..n).map(|_| vec![Scene::random(&mut r).caption()]).collect();
        let base = bleu4(&hyps, &refs).unwrap();
        let extra = Scene::random(&mut r).caption();
        hyps.push(extra.clone());
        refs.push(vec![extra]);
        prop_assert!(bleu4(&hyps, &refs).unwrap() >= base - 1e-12);
    }
}

#[test]
fn evaluation_counts_tokens_and_lengths() {
    let vocab = Vocabulary::default();
    let refs: Vec<_> = ["a small red circle", "a large blue star above a small green square"]
        .iter()
        .map(|c| tokenize(c, &vocab, 20).unwrap())
        .collect();
    let mut wrong = refs[1].ids().to_vec();
    wrong[2] = vocab.id("green").unwrap();
    let preds = vec![refs[0].ids().to_vec(), wrong];
    let report = evaluate(&preds, &refs, &vocab, &[60, 60], &[1.0, 3.0]).unwrap();
    assert_eq!(report.count, 2);
    assert!((report.token_accuracy - 14.0 / 15.0).abs() < 1e-12);
    assert_eq!(report.length_accuracy, 1.0);
    assert_eq!(report.forward_passes_per_caption, 60.0);
    assert_eq!(report.median_wall_ms, 2.0);
    assert_eq!(report.buckets.len(), 2);
    assert_eq!(report.buckets[0].token_accuracy, 1.0);
}

#[test]
fn ar_passes_equal_emitted_tokens() {
    let model = tiny_ar(1);
    let scenes: Vec<Scene> = tiny_corpus().test.iter().map(|e| e.scene.clone()).collect();
    let gens = model.sample(&scenes);
    let vocab = Vocabulary::default();
    for g in &gens {
        let emitted = match g.tokens.iter().position(|&t| t == vocab.sep) {
            Some(p) => p,
            None => 19,
        };
        assert_eq!(g.forward_passes as usize, emitted);
    }
    assert_eq!(gens, tiny_ar(1).sample(&scenes).into_iter().zip(&gens).map(|(mut a, b)| { a.wall_ms = b.wall_ms; a }).collect::<Vec<_>>());
    let buckets = vec![(10, scenes[..6].to_vec())];
    let rows = latency_sweep(&model, &buckets, 1, 5).unwrap();
    assert_eq!(rows[0].passes.len(), 5);
    assert!(rows[0].passes.iter().zip(&rows[0].lengths).all(|(&p, &n)| p as usize == n));
}

#[test]
fn trained_ar_emits_reference_lengths() {
    let corpus = tiny_corpus();
    let mut model = tiny_ar(2);
    let cfg = ArTrainConfig { epochs: 4, batch_size: 32, peak_lr: 3e-3, ..ArTrainConfig::default() };
    let (trace, _) = train_ar(&mut model, &corpus.train, &cfg, |_, _| {}).unwrap();
    assert!(trace.last().unwrap() < &(0.5 * trace[0]));
    let mut again = tiny_ar(2);
    let (trace2, _) = train_ar(&mut again, &corpus.train, &cfg, |_, _| {}).unwrap();
    assert_eq!(trace, trace2);

    let vocab = Vocabulary::default();
    let scenes: Vec<Scene> = corpus.test.iter().map(|e| e.scene.clone()).collect();
    for (g, s) in model.sample(&scenes).iter().zip(&scenes) {
        if g.tokens.get(s.token_len()) == Some(&vocab.sep) {
            assert_eq!(g.forward_passes as usize, s.token_len());
        }
    }
}

#[test]
fn median_and_csv() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    let row = LatencyRow {
        model: "ar".into(),
        length_bucket: 6,
        mean_wall_ms: 1.5,
        median_wall_ms: 1.0,
        forward_passes: 5.0,
        passes: vec![5, 5],
        lengths: vec![5, 5],
        bleu4: 0.5,
    };
    let csv = bench_csv(&[row]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(BENCH_HEADER));
    assert_eq!(lines.next().unwrap().split(',').count(), 5);
}
