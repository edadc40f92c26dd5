//! Finite-difference check of the full training objective in double
//! precision on a toy configuration.

use ladx_nn::{ParamStore, Tensor};
use rand::Rng;

use crate::diffuser::{Diffuser, DiffuserConfig, DIFFUSER_PREFIX};
use crate::rng::{self, Purpose};
use crate::scenegen::{CondEncoder, Scene, COND_PREFIX};
use crate::textlatent::{tokenize, TextConfig, TextStack, Vocabulary, HEAD_PREFIX};
use crate::trainer::{diffusion_loss, LossInputs};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Coordinates compared.
    pub checked: usize,
    pub max_rel_error: f64,
    /// Name and index of the worst coordinate.
    pub worst: (String, usize),
}

/// Compare analytic and central-difference gradients of
/// `latent + lambda * caption` for `samples` random coordinates of every
/// trainable tensor. Toy sizes: latent width `dim`, `len` positions,
/// one diffuser block; `len` must hold a one-object caption (>= 6).
pub fn check_loss_gradients(seed: u64, dim: usize, len: usize, lambda: f64, samples: usize, step: f64) -> GradCheckReport {
    let vocab = Vocabulary::default();
    let mut r = rng::stream(seed, Purpose::Init, 99);
    let mut store = ParamStore::<f64>::new();
    let heads = 2;
    let text_cfg = TextConfig { dim, layers: 2, split: 1, heads, ffn: 2 * dim, ..TextConfig::default() };
    let text = TextStack::new(&mut store, &text_cfg, vocab.len(), len, &mut r);
    let cond = CondEncoder::new(&mut store, dim, 4, &mut r);
    let dcfg = DiffuserConfig { blocks: 1, dim, heads, ffn: 2 * dim };
    let diffuser = Diffuser::new(&mut store, &dcfg, dim, len, 4, &mut r);
    store.set_all_trainable(false);
    store.set_trainable(&format!("{COND_PREFIX}."), true);
    store.set_trainable(&format!("{DIFFUSER_PREFIX}."), true);
    store.set_trainable(HEAD_PREFIX, true);
    // Non-trivial layer norms and biases so every path carries gradient.
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }

    let scenes = [Scene::parse("a small red circle").unwrap(), Scene::parse("a large blue star").unwrap()];
    let b = scenes.len();
    let mut tokens = Vec::new();
    for s in &scenes {
        tokens.extend_from_slice(tokenize(&s.caption(), &vocab, len).expect("toy length fits one object").ids());
    }
    let normal = |r: &mut rng::Rng| Tensor::new(vec![b, len, dim], rng::normal_vec(r, b * len * dim).into_iter().map(f64::from).collect());
    let inputs = LossInputs {
        x0: normal(&mut r),
        x_t: normal(&mut r),
        self_cond: normal(&mut r),
        t: vec![3, 740],
        scenes: vec![Some(&scenes[0]), None],
        tokens,
    };
    let loss = |store: &ParamStore<f64>| {
        let p = store.bind(false);
        diffusion_loss(&text, &cond, &diffuser, &p, &inputs, lambda).total.value().item()
    };

    let p = store.bind(true);
    let parts = diffusion_loss(&text, &cond, &diffuser, &p, &inputs, lambda);
    parts.total.backward();
    let grads = p.grads();
    drop(p);

    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: (String::new(), 0) };
    for (id, g) in grads {
        let n = g.len();
        for _ in 0..samples.min(n) {
            let i = r.random_range(0..n);
            let orig = store.get(id).value.data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let up = loss(&store);
            store.value_mut(id).data_mut()[i] = orig - step;
            let down = loss(&store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = g.data()[i];
            let scale = numeric.abs().max(analytic.abs());
            let rel = if scale < 1e-7 { 0.0 } else { (numeric - analytic).abs() / scale };
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (store.get(id).name.clone(), i);
            }
        }
    }
    report
}
