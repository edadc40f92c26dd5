use ladx_nn::{ops, Bound, Scalar, Tensor, Var};

use crate::diffuser::Diffuser;
use crate::scenegen::{CondEncoder, Scene};
use crate::textlatent::TextStack;

/// Mean squared error over every position and dimension.
pub fn latent_loss<T: Scalar>(pred: &Var<T>, target: &Var<T>) -> Var<T> {
    ops::mse(pred, target)
}

/// Mean token negative log-likelihood of `targets` (one id per latent
/// row, PAD included) under the decoder logits of `pred`.
pub fn caption_loss<T: Scalar>(text: &TextStack, p: &Bound<T>, pred: &Var<T>, targets: &[usize]) -> Var<T> {
    let logits = text.decode_var(p, pred);
    let targets: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
    ops::cross_entropy(&logits, &targets)
}

/// Inputs of one loss evaluation; randomness is already drawn.
pub struct LossInputs<'a, T: Scalar> {
    pub x0: Tensor<T>,
    pub x_t: Tensor<T>,
    pub self_cond: Tensor<T>,
    pub t: Vec<usize>,
    /// `None` marks a dropped condition.
    pub scenes: Vec<Option<&'a Scene>>,
    pub tokens: Vec<usize>,
}

pub struct LossParts<T: Scalar> {
    pub total: Var<T>,
    pub latent: Var<T>,
    pub caption: Var<T>,
}

/// `latent + lambda * caption` for the predicted clean latent.
pub fn diffusion_loss<T: Scalar>(
    text: &TextStack,
    cond: &CondEncoder,
    diffuser: &Diffuser,
    p: &Bound<T>,
    inputs: &LossInputs<'_, T>,
    lambda: f64,
) -> LossParts<T> {
    let context = cond.forward(p, &inputs.scenes);
    let pred = diffuser.forward(
        p,
        &Var::constant(inputs.x_t.clone()),
        &Var::constant(inputs.self_cond.clone()),
        &inputs.t,
        &context,
    );
    let latent = latent_loss(&pred, &Var::constant(inputs.x0.clone()));
    let caption = caption_loss(text, p, &pred, &inputs.tokens);
    let total = ops::add(&latent, &ops::scale(&caption, T::from_f64_lossy(lambda)));
    LossParts { total, latent, caption }
}
