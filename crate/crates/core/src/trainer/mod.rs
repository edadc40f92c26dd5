//! The two-part training objective and the diffusion training loop.

mod gradcheck;
mod loss;
mod lr;
mod train;

pub use gradcheck::{check_loss_gradients, GradCheckReport};
pub use loss::{caption_loss, diffusion_loss, latent_loss, LossInputs, LossParts};
pub use lr::LrSchedule;
pub use train::{new_optimizer, set_diffusion_trainable, StepMetrics, TrainConfig, TrainData, Trainer, METRICS_HEADER};
