//! A small CPU tensor engine with reverse-mode autodiff, enough to train
//! transformer encoders/decoders with cross-attention.

mod params;
mod scalar;
mod tensor;
mod var;

pub mod layers;
pub mod ops;
pub mod optim;

pub use params::{Bound, Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use var::Var;
