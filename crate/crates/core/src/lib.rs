//! Pixel-attention super-resolution: tensors with reverse-mode autodiff, the
//! PAN model family, analytic cost accounting, image metrics, data
//! preparation and training.

pub mod analysis;
pub mod autograd;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod imaging;
pub mod io;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use exec::{Eager, Exec, Taped};
pub use nn::{BlockType, Model, ModelConfig, Pan};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
