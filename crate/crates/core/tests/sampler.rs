mod common;

use std::collections::BTreeMap;

use common::{pseudo_random, some_condition, MockDenoiser};
use ladx::sampler::*;
use ladx::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use ladx::textlatent::Vocabulary;

fn cosine() -> NoiseSchedule {
    make_schedule(ScheduleKind::Cosine, 1000, 0.008).unwrap()
}

fn run(
    mock: &MockDenoiser,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    batch: usize,
    anchors: Option<&Anchors>,
    observer: Option<&mut dyn FnMut(&StepView<'_>)>,
) -> Vec<Generation> {
    let c = some_condition();
    let conds = vec![&c; batch];
    let idx: Vec<u64> = (0..batch as u64).collect();
    generate(mock, sched, &Vocabulary::default(), &conds, &idx, cfg, anchors, observer).unwrap()
}

fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
    let den: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum();
    (num / den).sqrt()
}

#[test]
fn oracle_denoiser_is_recovered() {
    let (l, d) = (24, 8);
    let x0 = pseudo_random(l * d, 1);
    let mock = MockDenoiser::fixed(l, d, x0.clone());
    for steps in [5, 10, 30] {
        for guidance in [0.0, 1.0] {
            let cfg = SamplerConfig { steps, guidance, ..Default::default() };
            for g in run(&mock, &cosine(), &cfg, 3, None, None) {
                assert!(rel_err(&g.latent, &x0) < 1e-6, "S={steps}");
            }
        }
    }
}

#[test]
fn eta_zero_is_deterministic_and_batch_independent() {
    let (l, d) = (6, 4);
    let mock = MockDenoiser::new(l, d, pseudo_random(l * d, 2), pseudo_random(l * d, 3));
    let cfg = SamplerConfig { steps: 10, eta: 0.0, ..Default::default() };
    let mut trace_a = Vec::new();
    let mut trace_b = Vec::new();
    let a = run(&mock, &cosine(), &cfg, 4, None, Some(&mut |v: &StepView<'_>| trace_a.push(v.x.data().to_vec())));
    let b = run(&mock, &cosine(), &cfg, 4, None, Some(&mut |v: &StepView<'_>| trace_b.push(v.x.data().to_vec())));
    assert_eq!(trace_a, trace_b);
    assert_eq!(a.iter().map(|g| &g.latent).collect::<Vec<_>>(), b.iter().map(|g| &g.latent).collect::<Vec<_>>());

    let c = some_condition();
    let single = generate(&mock, &cosine(), &Vocabulary::default(), &[&c], &[2], &cfg, None, None).unwrap();
    assert_eq!(single[0].latent, a[2].latent);
}

#[test]
fn eta_zero_ignores_noise_argument() {
    let s = cosine();
    let x_t = pseudo_random(32, 4);
    let x0 = pseudo_random(32, 5);
    let mut a = vec![0.0; 32];
    let mut b = vec![0.0; 32];
    ddim_step(&s, &x_t, &x0, 500, 400, 0.0, &pseudo_random(32, 6), &mut a);
    ddim_step(&s, &x_t, &x0, 500, 400, 0.0, &pseudo_random(32, 7), &mut b);
    assert_eq!(a, b);
}

#[test]
fn ddim_hand_example() {
    // alpha_bar(1) = 0.5, alpha_bar(2) = 0.25.
    let s = NoiseSchedule::from_alpha_bars(ScheduleKind::Cosine, &[0.5, 0.25]).unwrap();
    let x0 = pseudo_random(16, 8);
    let eps = pseudo_random(16, 9);
    let x_t: Vec<f32> = x0.iter().zip(&eps).map(|(a, e)| 0.5 * a + 0.75f32.sqrt() * e).collect();
    let mut out = vec![0.0; 16];
    ddim_step(&s, &x_t, &x0, 2, 1, 0.0, &[0.0; 16], &mut out);
    for i in 0..16 {
        let want = 0.5f64.sqrt() * x0[i] as f64 + 0.5f64.sqrt() * eps[i] as f64;
        assert!((out[i] as f64 - want).abs() < 1e-5, "{} vs {want}", out[i]);
    }
}

#[test]
fn eta_one_full_steps_match_the_posterior() {
    let s = cosine();
    for t in [1usize, 2, 10, 250, 500, 999, 1000] {
        let (a, b, c) = ddim_coefficients(&s, t, t - 1, 1.0);
        let (ab_t, ab_prev, beta, alpha) = (s.alpha_bar(t), s.alpha_bar(t - 1), s.beta(t), s.alpha(t));
        let mean_x0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let mean_xt = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
        assert!((a - mean_x0).abs() < 1e-9, "t={t}: {a} vs {mean_x0}");
        assert!((b - mean_xt).abs() < 1e-9, "t={t}: {b} vs {mean_xt}");
        assert!((c * c - var).abs() < 1e-9, "t={t}: {} vs {var}", c * c);
    }
}

#[test]
fn forward_pass_budget() {
    for l in [6, 24] {
        let mock = MockDenoiser::fixed(l, 4, pseudo_random(l * 4, 10));
        let count = |cfg: SamplerConfig| run(&mock, &cosine(), &cfg, 2, None, None)[0].forward_passes;
        assert_eq!(count(SamplerConfig { steps: 30, guidance: 1.0, ..Default::default() }), 60);
        assert_eq!(count(SamplerConfig { steps: 30, guidance: 0.0, ..Default::default() }), 30);
        assert_eq!(count(SamplerConfig { steps: 5, guidance: 2.0, ..Default::default() }), 10);
        let br = Some(BackRefineConfig::default());
        assert_eq!(count(SamplerConfig { steps: 30, guidance: 1.0, back_refine: br, ..Default::default() }), 2 * (15 + 30));
        assert_eq!(count(SamplerConfig { steps: 5, guidance: 0.0, back_refine: br, ..Default::default() }), 3 + 5);
    }
}

#[test]
fn back_refine_keeps_half_and_reinserts() {
    let (l, d) = (24, 8);
    let mock = MockDenoiser::fixed(l, d, pseudo_random(l * d, 11));
    let cfg = SamplerConfig { steps: 10, back_refine: Some(BackRefineConfig::default()), ..Default::default() };
    let mut views: Vec<(Phase, usize, Vec<f32>)> = Vec::new();
    let gens = run(&mock, &cosine(), &cfg, 3, None, Some(&mut |v: &StepView<'_>| views.push((v.phase, v.t_prev, v.x.data().to_vec()))));
    let x0 = &mock.cond_out;
    for (s, g) in gens.iter().enumerate() {
        let tr = g.refine.as_ref().unwrap();
        assert_eq!(tr.kept.len(), 12);
        assert!(tr.kept.iter().all(|&p| p >= 1 && p < l));
        for (phase, t_prev, x) in &views {
            if *phase != Phase::Refine || *t_prev == 0 {
                continue;
            }
            for &p in tr.kept.iter().chain([0].iter()) {
                let at = (s * l + p) * d;
                assert_eq!(&x[at..at + d], &x0[p * d..(p + 1) * d]);
            }
        }
    }
    assert_eq!(views.iter().filter(|v| v.0 == Phase::Refine).count(), 10);
}

#[test]
fn back_refine_renoises_with_standard_normals() {
    let (l, d) = (24, 8);
    let mock = MockDenoiser::fixed(l, d, vec![3.0; l * d]);
    let cfg = SamplerConfig { steps: 5, back_refine: Some(BackRefineConfig::default()), guidance: 0.0, ..Default::default() };
    let gens = run(&mock, &cosine(), &cfg, 200, None, None);
    let mut values = Vec::new();
    for g in &gens {
        let tr = g.refine.as_ref().unwrap();
        for p in 1..l {
            if !tr.kept.contains(&p) {
                values.extend_from_slice(&tr.restart[p * d..(p + 1) * d]);
            }
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "var {var}");
}

#[test]
fn back_refine_accepts_the_ablation_grid() {
    let mock = MockDenoiser::fixed(24, 4, pseudo_random(96, 12));
    for t_frac in [0.2, 0.5, 0.8] {
        for l_frac in [0.2, 0.5, 0.8] {
            let br = BackRefineConfig { t_frac, l_frac };
            let cfg = SamplerConfig { steps: 10, back_refine: Some(br), ..Default::default() };
            let g = &run(&mock, &cosine(), &cfg, 1, None, None)[0];
            assert_eq!(g.refine.as_ref().unwrap().kept.len(), br.keep_count(23));
        }
    }
}

#[test]
fn anchors_persist_after_every_step() {
    let (l, d) = (24, 8);
    let mock = MockDenoiser::fixed(l, d, pseudo_random(l * d, 13));
    let rows = BTreeMap::from([(3, vec![0.5; d]), (7, pseudo_random(d, 14))]);
    let anchors = Anchors::new(rows.clone(), l, d).unwrap();
    for back_refine in [None, Some(BackRefineConfig::default())] {
        let cfg = SamplerConfig { steps: 10, back_refine, ..Default::default() };
        let mut steps = 0;
        let gens = run(
            &mock,
            &cosine(),
            &cfg,
            2,
            Some(&anchors),
            Some(&mut |v: &StepView<'_>| {
                steps += 1;
                for s in 0..2 {
                    for (p, row) in &rows {
                        let at = (s * l + p) * d;
                        assert_eq!(&v.x.data()[at..at + d], row.as_slice());
                    }
                }
            }),
        );
        assert!(steps >= 10);
        for g in gens {
            for (p, row) in &rows {
                assert_eq!(&g.latent[p * d..(p + 1) * d], row.as_slice());
            }
        }
    }
}

#[test]
fn full_anchoring_fixes_the_output_and_empty_anchoring_changes_nothing() {
    let (l, d) = (6, 8);
    let mock = MockDenoiser::fixed(l, d, pseudo_random(l * d, 15));
    let target = pseudo_random(l * d, 16);
    let rows: BTreeMap<usize, Vec<f32>> = (0..l).map(|p| (p, target[p * d..(p + 1) * d].to_vec())).collect();
    let full = Anchors::new(rows, l, d).unwrap();
    let cfg = SamplerConfig { steps: 5, ..Default::default() };
    let g = &run(&mock, &cosine(), &cfg, 1, Some(&full), None)[0];
    assert_eq!(g.latent, target);

    let empty = Anchors::default();
    let with = run(&mock, &cosine(), &cfg, 2, Some(&empty), None);
    let without = run(&mock, &cosine(), &cfg, 2, None, None);
    assert_eq!(with, without.into_iter().map(|mut g| { g.wall_ms = with[0].wall_ms; g }).collect::<Vec<_>>());
}

#[test]
fn anchor_validation() {
    assert!(Anchors::new(BTreeMap::from([(24, vec![0.0; 4])]), 24, 4).is_err());
    assert!(Anchors::new(BTreeMap::from([(2, vec![0.0; 3])]), 24, 4).is_err());
}

#[test]
fn mbr_prefers_consensus() {
    let a = "a small red circle above a large blue square".to_string();
    let b = "a small red circle below a large green star".to_string();
    assert_eq!(mbr_select(&[a.clone(), a.clone(), b.clone()]).unwrap(), 0);
    assert_eq!(mbr_select(&[b.clone(), a.clone(), a.clone()]).unwrap(), 1);
}

#[test]
fn config_validation() {
    let ok = SamplerConfig::default();
    assert!(ok.validate(1000).is_ok());
    assert!(SamplerConfig { eta: 1.5, ..ok.clone() }.validate(1000).is_err());
    assert!(SamplerConfig { steps: 2000, ..ok.clone() }.validate(1000).is_err());
    let br = BackRefineConfig { t_frac: 1.0, l_frac: 0.5 };
    assert!(SamplerConfig { back_refine: Some(br), ..ok.clone() }.validate(1000).is_err());
    assert!(SamplerConfig { mbr_candidates: 0, ..ok }.validate(1000).is_err());
}
