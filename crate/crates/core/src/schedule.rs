//! Variance schedules and the closed-form forward (noising) process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textlatent::LatentSeq;

pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX_LINEAR: f64 = 0.02;
pub const BETA_CLIP: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
    /// Offset of the cosine schedule.
    pub s: f64,
    /// Multiplier on the noise term of the forward process.
    pub noise_factor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { kind: ScheduleKind::Cosine, steps: 1000, s: 0.008, noise_factor: 1.0 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let mut sched = make_schedule(self.kind, self.steps, self.s)?;
        if !(self.noise_factor.is_finite() && self.noise_factor > 0.0) {
            return Err(Error::Schedule(format!("noise factor must be positive, got {}", self.noise_factor)));
        }
        sched.noise_factor = self.noise_factor;
        Ok(sched)
    }
}

/// Per-timestep tables of a discrete diffusion process with `T` steps.
///
/// Timesteps are 1-based: `beta(t)` for `t` in `1..=T`; `alpha_bar(0) == 1`
/// denotes the clean latent.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    pub noise_factor: f64,
}

fn cosine_g(t: f64, total: f64, s: f64) -> f64 {
    let x = ((t / total + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
    x.cos().powi(2)
}

/// Build a schedule with `total_steps` steps.
///
/// Cosine: `alpha_bar(t) = g(t) / g(0)` with `g(t) = cos^2(((t/T + s)/(1+s)) * pi/2)`,
/// betas derived from consecutive ratios and clipped to `[1e-4, 0.999]`.
/// Linear: betas evenly spaced over `[1e-4, 0.02]`. In both cases
/// `alpha_bar` is the running product of the final alphas.
pub fn make_schedule(kind: ScheduleKind, total_steps: usize, s: f64) -> Result<NoiseSchedule> {
    if total_steps < 1 {
        return Err(Error::Schedule("at least one diffusion step is required".into()));
    }
    if !s.is_finite() || s <= 0.0 {
        return Err(Error::Schedule(format!("cosine offset must be finite and positive, got {s}")));
    }
    let total = total_steps as f64;
    let betas: Vec<f64> = match kind {
        ScheduleKind::Cosine => {
            let g0 = cosine_g(0.0, total, s);
            (1..=total_steps)
                .map(|t| {
                    let prev = cosine_g((t - 1) as f64, total, s) / g0;
                    let cur = cosine_g(t as f64, total, s) / g0;
                    (1.0 - cur / prev).clamp(BETA_MIN, BETA_CLIP)
                })
                .collect()
        }
        ScheduleKind::Linear => (0..total_steps)
            .map(|i| {
                if total_steps == 1 {
                    BETA_MIN
                } else {
                    BETA_MIN + (BETA_MAX_LINEAR - BETA_MIN) * i as f64 / (total - 1.0)
                }
            })
            .collect(),
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(total_steps + 1);
    alpha_bars.push(1.0);
    for a in &alphas {
        let prev = *alpha_bars.last().unwrap();
        alpha_bars.push(prev * a);
    }
    Ok(NoiseSchedule { kind, betas, alphas, alpha_bars, noise_factor: 1.0 })
}

impl NoiseSchedule {
    /// Schedule with explicit `alpha_bar(1..=T)`, which must be strictly
    /// decreasing inside `(0, 1)`.
    pub fn from_alpha_bars(kind: ScheduleKind, alpha_bars: &[f64]) -> Result<Self> {
        if alpha_bars.is_empty() {
            return Err(Error::Schedule("at least one diffusion step is required".into()));
        }
        let mut all = vec![1.0];
        all.extend_from_slice(alpha_bars);
        if all.windows(2).any(|w| !(w[1] < w[0] && w[1] > 0.0)) {
            return Err(Error::Schedule("alpha_bar must decrease strictly inside (0, 1)".into()));
        }
        let alphas: Vec<f64> = all.windows(2).map(|w| w[1] / w[0]).collect();
        let betas = alphas.iter().map(|a| 1.0 - a).collect();
        Ok(NoiseSchedule { kind, betas, alphas, alpha_bars: all, noise_factor: 1.0 })
    }

    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta(t)`, `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `alpha_bar(t)`, `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Length `T + 1`, index 0 is exactly 1.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.total_steps() {
            return Err(Error::Timestep { t, max: self.total_steps() });
        }
        Ok(())
    }

    /// Coefficients `(sqrt(alpha_bar), F * sqrt(1 - alpha_bar))` of the forward process at `t`.
    pub fn forward_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (ab.sqrt(), self.noise_factor * (1.0 - ab).sqrt())
    }

    /// In-place forward process on raw rows: `x = sqrt(ab) x0 + F sqrt(1-ab) eps`.
    pub fn q_sample_slice(&self, x0: &[f32], t: usize, eps: &[f32], out: &mut [f32]) {
        let (a, b) = self.forward_coefficients(t);
        let (a, b) = (a as f32, b as f32);
        for ((o, &x), &e) in out.iter_mut().zip(x0).zip(eps) {
            *o = a * x + b * e;
        }
    }
}

/// Draw `x_t ~ q(x_t | x_0)` given explicit standard-normal noise `eps`.
pub fn q_sample(x0: &LatentSeq, t: usize, eps: &LatentSeq, sched: &NoiseSchedule) -> Result<LatentSeq> {
    sched.check_timestep(t)?;
    if x0.values().shape() != eps.values().shape() {
        return Err(Error::Shape { expected: x0.values().shape().to_vec(), got: eps.values().shape().to_vec() });
    }
    let mut out = vec![0.0f32; x0.values().len()];
    sched.q_sample_slice(x0.values().data(), t, eps.values().data(), &mut out);
    Ok(x0.with_values(out))
}
