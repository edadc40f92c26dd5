use std::f64::consts::FRAC_PI_2;

use ladx::rng::{self, Purpose};
use ladx::schedule::{make_schedule, q_sample, ScheduleKind, BETA_CLIP};
use ladx::textlatent::LatentSeq;
use ladx_nn::Tensor;
use proptest::prelude::*;

fn closed_form(t: usize, total: usize, s: f64) -> f64 {
    let f = |t: f64| ((t / total as f64 + s) / (1.0 + s) * FRAC_PI_2).cos().powi(2);
    f(t as f64) / f(0.0)
}

#[test]
fn cosine_matches_clipped_closed_form() {
    let sched = make_schedule(ScheduleKind::Cosine, 1000, 0.008).unwrap();
    let mut product = 1.0;
    for t in 1..=1000 {
        let raw = 1.0 - closed_form(t, 1000, 0.008) / closed_form(t - 1, 1000, 0.008);
        product *= 1.0 - raw.clamp(1e-4, BETA_CLIP);
        assert!((sched.alpha_bar(t) - product).abs() <= 1e-12 * product, "t={t}");
        if t < 1000 {
            // The floor on early betas shifts the unclipped curve only slightly.
            let unclipped = closed_form(t, 1000, 0.008);
            assert!((sched.alpha_bar(t) / unclipped - 1.0).abs() < 1e-3, "t={t}");
        }
    }
    assert!((sched.alpha_bar(500) - 0.494).abs() < 0.01);
    assert!(sched.alpha_bar(1000) < 1e-4);
}

proptest! {
    #[test]
    fn schedules_are_monotone(total in 2usize..2000, s in 0.0f64..0.1, linear in any::<bool>()) {
        let kind = if linear { ScheduleKind::Linear } else { ScheduleKind::Cosine };
        let sched = make_schedule(kind, total, s).unwrap();
        prop_assert_eq!(sched.alpha_bars().len(), total + 1);
        prop_assert_eq!(sched.alpha_bar(0), 1.0);
        for t in 1..=total {
            prop_assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
            prop_assert!(sched.beta(t) > 0.0 && sched.beta(t) <= BETA_CLIP);
            prop_assert!((sched.alpha(t) - (1.0 - sched.beta(t))).abs() < 1e-15);
        }
    }

    #[test]
    fn q_sample_is_exact_linear_mix(t in 1usize..=1000, seed in any::<u64>()) {
        let sched = make_schedule(ScheduleKind::Cosine, 1000, 0.008).unwrap();
        let mut r = rng::stream(seed, Purpose::Data, 0);
        let x0 = LatentSeq::new(Tensor::new(vec![3, 4], rng::normal_vec(&mut r, 12)), vec![false; 3]).unwrap();
        let eps = LatentSeq::new(Tensor::new(vec![3, 4], rng::normal_vec(&mut r, 12)), vec![false; 3]).unwrap();
        let xt = q_sample(&x0, t, &eps, &sched).unwrap();
        let ab = sched.alpha_bar(t);
        for i in 0..12 {
            let want = ab.sqrt() * x0.values().data()[i] as f64 + (1.0 - ab).sqrt() * eps.values().data()[i] as f64;
            prop_assert!((xt.values().data()[i] as f64 - want).abs() < 1e-5);
        }
    }
}

#[test]
fn forward_marginal_moments_at_t_max() {
    let sched = make_schedule(ScheduleKind::Cosine, 1000, 0.008).unwrap();
    let x0 = LatentSeq::new(Tensor::new(vec![1, 4], vec![2.0, -1.0, 0.5, 10.0]), vec![false]).unwrap();
    let n = 10_000;
    let mut r = rng::stream(3, Purpose::Data, 0);
    let mut sum = [0.0f64; 4];
    let mut sq = [0.0f64; 4];
    for _ in 0..n {
        let eps = LatentSeq::new(Tensor::new(vec![1, 4], rng::normal_vec(&mut r, 4)), vec![false]).unwrap();
        let x = q_sample(&x0, 1000, &eps, &sched).unwrap();
        for k in 0..4 {
            let v = x.values().data()[k] as f64;
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let ab = sched.alpha_bar(1000);
    for k in 0..4 {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        let stderr = ((1.0 - ab) / n as f64).sqrt();
        assert!((mean - ab.sqrt() * x0.values().data()[k] as f64).abs() < 3.0 * stderr, "mean {mean}");
        assert!((var / (1.0 - ab) - 1.0).abs() < 0.05, "var {var}");
    }
}

#[test]
fn timesteps_outside_range_are_rejected() {
    let sched = make_schedule(ScheduleKind::Cosine, 1000, 0.008).unwrap();
    let x = LatentSeq::zeros(2, 2);
    assert!(q_sample(&x, 0, &x, &sched).is_err());
    assert!(q_sample(&x, 1001, &x, &sched).is_err());
}
