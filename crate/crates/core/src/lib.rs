pub mod diffuser;
pub mod evalbench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod scenegen;
pub mod schedule;
pub mod textlatent;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{LatentModel, ModelConfig};
