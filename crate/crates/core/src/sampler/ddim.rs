use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// `[0, tau_1, .., tau_S]` with `tau_i = floor(i * T / S)`.
pub fn timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::Config(format!("sampling steps must lie in 1..={total}, got {steps}")));
    }
    Ok((0..=steps).map(|i| i * total / steps).collect())
}

/// Noise scale of a DDIM step from `t` to `t_prev`. Under step skipping the
/// single-step beta is replaced by `1 - alpha_bar(t) / alpha_bar(t_prev)`.
pub fn ddim_sigma(sched: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let (ab_t, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
    let beta = 1.0 - ab_t / ab_prev;
    (eta * (1.0 - ab_prev) / (1.0 - ab_t) * beta).max(0.0).sqrt()
}

/// `(a, b, c)` with `x_prev = a * x0_hat + b * x_t + c * noise`.
pub fn ddim_coefficients(sched: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> (f64, f64, f64) {
    assert!(t_prev < t, "ddim step must go backwards ({t} -> {t_prev})");
    let (ab_t, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
    let sigma = ddim_sigma(sched, t, t_prev, eta);
    let c_dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt() / (1.0 - ab_t).sqrt();
    (ab_prev.sqrt() - c_dir * ab_t.sqrt(), c_dir, sigma * sched.noise_factor)
}

/// One DDIM update written into `out`; all slices have equal length.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step(
    sched: &NoiseSchedule,
    x_t: &[f32],
    x0_hat: &[f32],
    t: usize,
    t_prev: usize,
    eta: f64,
    noise: &[f32],
    out: &mut [f32],
) {
    let (a, b, c) = ddim_coefficients(sched, t, t_prev, eta);
    for i in 0..out.len() {
        let z = if c == 0.0 { 0.0 } else { c * noise[i] as f64 };
        out[i] = (a * x0_hat[i] as f64 + b * x_t[i] as f64 + z) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, ScheduleKind};

    #[test]
    fn timestep_grid() {
        assert_eq!(timesteps(1000, 5).unwrap(), [0, 200, 400, 600, 800, 1000]);
        let t = timesteps(1000, 30).unwrap();
        assert_eq!(t.len(), 31);
        assert_eq!(t[1], 33);
        assert_eq!(t[15], 500);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(timesteps(7, 7).unwrap(), (0..=7).collect::<Vec<_>>());
        assert!(timesteps(10, 0).is_err());
        assert!(timesteps(10, 11).is_err());
    }

    #[test]
    fn sigma_vanishes_without_eta() {
        let s = make_schedule(ScheduleKind::Cosine, 100, 0.008).unwrap();
        assert_eq!(ddim_sigma(&s, 50, 40, 0.0), 0.0);
        assert!(ddim_sigma(&s, 50, 40, 1.0) > 0.0);
        assert_eq!(ddim_sigma(&s, 1, 0, 1.0), 0.0);
    }
}
