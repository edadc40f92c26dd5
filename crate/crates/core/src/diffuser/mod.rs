//! The conditional denoiser and classifier-free guidance.

mod net;

use ladx_nn::Tensor;

pub use net::{timestep_features, Diffuser, DiffuserConfig, DIFFUSER_PREFIX};

use crate::scenegen::CondFeatures;

/// Anything that predicts clean latents from noisy ones.
///
/// Batched: `x_t` and `self_cond` are `[B, L, d]` with one condition and
/// one timestep per batch element. Each call is one counted forward pass.
pub trait LatentDenoiser {
    /// `(L, d)` of one latent sequence.
    fn latent_shape(&self) -> (usize, usize);

    fn denoise(&self, x_t: &Tensor<f32>, cond: &[&CondFeatures], t: &[usize], self_cond: &Tensor<f32>) -> Tensor<f32>;

    fn null_condition(&self) -> CondFeatures;

    /// Counted forward passes so far.
    fn forward_passes(&self) -> u64;
}

/// Maps latents `[B, L, d]` to vocabulary logits `[B, L, V]`.
pub trait LatentDecoder {
    fn logits(&self, x: &Tensor<f32>) -> Tensor<f32>;
}

/// `(1 + w) * f(x, v) - w * f(x, null)`. A single pass when `w == 0`.
pub fn cfg_denoise<D: LatentDenoiser + ?Sized>(
    model: &D,
    x_t: &Tensor<f32>,
    cond: &[&CondFeatures],
    t: &[usize],
    self_cond: &Tensor<f32>,
    w: f32,
) -> Tensor<f32> {
    let conditional = model.denoise(x_t, cond, t, self_cond);
    if w == 0.0 {
        return conditional;
    }
    let null = model.null_condition();
    let nulls = vec![&null; cond.len()];
    let unconditional = model.denoise(x_t, &nulls, t, self_cond);
    guidance_combine(&conditional, &unconditional, w)
}

pub fn guidance_combine(conditional: &Tensor<f32>, unconditional: &Tensor<f32>, w: f32) -> Tensor<f32> {
    conditional.zip_map(unconditional, |c, u| (1.0 + w) * c - w * u)
}
