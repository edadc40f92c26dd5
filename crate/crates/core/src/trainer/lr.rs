use serde::{Deserialize, Serialize};

/// Linear warmup to `peak`, then linear decay towards zero at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_ratio: f64, total_steps: u64) -> Self {
        let warmup_steps = ((warmup_ratio * total_steps as f64).ceil() as u64).min(total_steps);
        LrSchedule { peak, warmup_steps, total_steps }
    }

    /// Rate for the update with zero-based index `step`.
    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            self.peak * ((step + 1) as f64 / self.warmup_steps as f64)
        } else if step >= self.total_steps {
            0.0
        } else {
            let span = (self.total_steps - self.warmup_steps) as f64;
            self.peak * ((self.total_steps - step) as f64 / span)
        }
    }
}
