//! Adversarial attacks and attention maps for small residual CNNs.
//!
//! The numeric core is generic over [`Scalar`] (`f64` or `f32`); the
//! `*64` / `*32` aliases below name the concrete instantiations.

pub mod analysis;
pub mod attacks;
pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod model;
pub mod network;
pub mod render;
pub mod scalar;
pub mod tensor;

pub use autodiff::{BackpropMode, ForwardRecord, Objective};
pub use error::{Error, Result};
pub use network::{Conv2d, Dense, Layer, Network, Node};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Network64 = Network<f64>;
pub type Network32 = Network<f32>;
