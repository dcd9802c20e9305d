//! Multi-branch feature fusion classifier for univariate IoT sensor series.

pub mod data;
pub mod error;
pub mod fusion;
pub mod learned;
pub mod llm;
pub mod nn;
pub mod rng;
pub mod rocket;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod tsar;

pub use error::{DataError, Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
