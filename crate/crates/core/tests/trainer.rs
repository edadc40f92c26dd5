mod common;

use common::{tiny_corpus, tiny_model};
use ladx::checkpoint::{latent_from_raw, latent_to_raw, RawCheckpoint, Stage};
use ladx::rng::{self, Purpose};
use ladx::scenegen::Scene;
use ladx::textlatent::tokenize;
use ladx::trainer::*;
use ladx::LatentModel;
use ladx_nn::ops::cross_entropy;
use ladx_nn::{Tensor, Var};

fn snapshot(model: &LatentModel) -> Vec<(String, Vec<f32>)> {
    model.store.iter().map(|(_, p)| (p.name.clone(), p.value.data().to_vec())).collect()
}

fn small_cfg(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size, peak_lr: 1e-3, seed: 9, ..TrainConfig::default() }
}

#[test]
fn mse_matches_double_loop() {
    let a = rng::normal_vec(&mut rng::stream(1, Purpose::Data, 0), 2 * 3 * 5);
    let b = rng::normal_vec(&mut rng::stream(2, Purpose::Data, 0), 2 * 3 * 5);
    let to64 = |v: &[f32]| Var::constant(Tensor::new(vec![2, 3, 5], v.iter().map(|&x| x as f64).collect()));
    let got = latent_loss(&to64(&a), &to64(&b)).value().item();
    let mut want = 0.0;
    for i in 0..2 {
        for j in 0..3 {
            for k in 0..5 {
                let at = (i * 3 + j) * 5 + k;
                want += (a[at] as f64 - b[at] as f64).powi(2);
            }
        }
    }
    want /= 30.0;
    assert!((got - want).abs() < 1e-9);
}

#[test]
fn nll_matches_softmax_oracle() {
    let v = 36;
    let logits = rng::normal_vec(&mut rng::stream(3, Purpose::Data, 0), 4 * v);
    let targets = [0usize, 5, 35, 17];
    let var = Var::constant(Tensor::new(vec![4, v], logits.iter().map(|&x| x as f64 * 3.0).collect()));
    let got = cross_entropy(&var, &targets.map(Some)).value().item();
    let mut want = 0.0;
    for (r, &tgt) in targets.iter().enumerate() {
        let row: Vec<f64> = logits[r * v..(r + 1) * v].iter().map(|&x| x as f64 * 3.0).collect();
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        want -= (row[tgt].exp() / z).ln();
    }
    want /= 4.0;
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");

    let uniform = Var::constant(Tensor::<f64>::zeros(vec![3, v]));
    let got = cross_entropy(&uniform, &[Some(1), Some(2), Some(30)]).value().item();
    assert!((got - (36f64).ln()).abs() < 1e-12);
}

#[test]
fn zero_lambda_drops_the_caption_term() {
    let corpus = tiny_corpus();
    let model = tiny_model(1, &corpus);
    let vocab = &model.vocab;
    let scenes = [Scene::parse("a small red circle").unwrap(), Scene::parse("a large blue star above a small green square").unwrap()];
    let tokens: Vec<usize> = scenes.iter().flat_map(|s| tokenize(&s.caption(), vocab, 20).unwrap().ids().to_vec()).collect();
    let n = 2 * 20 * 16;
    let normal = |i| Tensor::new(vec![2, 20, 16], rng::normal_vec(&mut rng::stream(i, Purpose::Data, 0), n));
    let inputs = LossInputs {
        x0: normal(1),
        x_t: normal(2),
        self_cond: Tensor::zeros(vec![2, 20, 16]),
        t: vec![10, 600],
        scenes: vec![Some(&scenes[0]), Some(&scenes[1])],
        tokens,
    };
    let p = model.store.bind(false);
    let parts = diffusion_loss(&model.text, &model.cond, &model.diffuser, &p, &inputs, 0.0);
    assert_eq!(parts.total.value().item(), parts.latent.value().item());
    assert!(parts.caption.value().item() > 0.0);
    let parts = diffusion_loss(&model.text, &model.cond, &model.diffuser, &p, &inputs, 0.2);
    let want = parts.latent.value().item() + 0.2 * parts.caption.value().item();
    assert!((parts.total.value().item() - want).abs() < 1e-5);
}

fn train_steps(model: &mut LatentModel, data: &TrainData, cfg: &TrainConfig, steps: usize) -> Vec<StepMetrics> {
    set_diffusion_trainable(&mut model.store);
    let mut trainer = Trainer::new(cfg.clone(), data.len(), new_optimizer(cfg)).unwrap();
    (0..steps).map(|_| trainer.step(model, data).unwrap()).collect()
}

#[test]
fn training_is_deterministic_and_freezes_the_encoder() {
    let corpus = tiny_corpus();
    let cfg = small_cfg(1, 16);
    let mut a = tiny_model(2, &corpus);
    let mut b = tiny_model(2, &corpus);
    let data = TrainData::new(&a, &corpus.train[..64]).unwrap();
    let before = snapshot(&a);
    let ma = train_steps(&mut a, &data, &cfg, 4);
    let mb = train_steps(&mut b, &data, &cfg, 4);
    assert_eq!(ma, mb);
    assert_eq!(snapshot(&a), snapshot(&b));

    for ((name, old), (_, new)) in before.iter().zip(snapshot(&a)) {
        let frozen = name.starts_with("text.") && !name.starts_with("text.lm_head");
        if frozen {
            assert_eq!(old, &new, "{name} moved");
        } else if name.starts_with("diffuser.blocks") || name.starts_with("text.lm_head") {
            assert_ne!(old, &new, "{name} did not move");
        }
    }
}

#[test]
fn metrics_rows_are_well_formed() {
    let corpus = tiny_corpus();
    let mut model = tiny_model(3, &corpus);
    let data = TrainData::new(&model, &corpus.train[..32]).unwrap();
    let m = &train_steps(&mut model, &data, &small_cfg(1, 16), 1)[0];
    assert_eq!(METRICS_HEADER.split(',').count(), m.csv_row().split(',').count());
    assert!((m.loss - (m.latent_loss + 0.2 * m.caption_loss)).abs() < 1e-12);
    assert!(m.lr > 0.0);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let corpus = tiny_corpus();
    let cfg = small_cfg(1, 8);
    let mut straight = tiny_model(4, &corpus);
    let data = TrainData::new(&straight, &corpus.train[..80]).unwrap();
    let full = train_steps(&mut straight, &data, &cfg, 10);

    let mut first = tiny_model(4, &corpus);
    set_diffusion_trainable(&mut first.store);
    let mut trainer = Trainer::new(cfg.clone(), data.len(), new_optimizer(&cfg)).unwrap();
    let mut resumed: Vec<StepMetrics> = (0..5).map(|_| trainer.step(&mut first, &data).unwrap()).collect();
    let bytes = latent_to_raw(&first, Stage::Diffusion, &trainer.opt, Some(&cfg)).to_bytes();
    drop(first);

    let ck = latent_from_raw(RawCheckpoint::from_bytes(&bytes).unwrap()).unwrap();
    let mut second = ck.model;
    set_diffusion_trainable(&mut second.store);
    let cfg2 = ck.train.unwrap();
    let mut trainer = Trainer::new(cfg2, data.len(), ck.optimizer).unwrap();
    assert_eq!(trainer.step_index(), 5);
    resumed.extend((0..5).map(|_| trainer.step(&mut second, &data).unwrap()));

    assert_eq!(full, resumed);
    assert_eq!(snapshot(&straight), snapshot(&second));
}

#[test]
fn overfits_a_small_batch() {
    let corpus = tiny_corpus();
    let mut model = tiny_model(5, &corpus);
    let data = TrainData::new(&model, &corpus.train[..32]).unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: 32, peak_lr: 2e-3, seed: 1, ..TrainConfig::default() };
    let mut trainer = Trainer::new(cfg.clone(), data.len(), new_optimizer(&cfg)).unwrap();
    let trace = trainer.run(&mut model, &data, |_| {}).unwrap();
    assert_eq!(trace.len(), 200);
    assert!(trainer.is_done());
    let initial = trace[0].loss;
    let last: f64 = trace[190..].iter().map(|m| m.loss).sum::<f64>() / 10.0;
    assert!(last < 0.5 * initial, "initial {initial}, final {last}");
}

#[test]
fn rejects_bad_configs() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    assert!(TrainConfig { batch_size: 0, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { cfg_drop_prob: 1.5, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { peak_lr: -1.0, ..ok }.validate().is_err());
}
