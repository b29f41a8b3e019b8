//! Spatio-temporal CNN engine and single-shot multi-frame video frame
//! interpolation.

pub mod bench;
mod binio;
pub mod gradcheck;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod video;

pub use binio::AnyTensor;
pub use error::{Error, Result};
pub use net::{FlavrConfig, FusionMode, LossMode, Network};
pub use scalar::{DType, Scalar};
pub use tensor::{GradPair, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
