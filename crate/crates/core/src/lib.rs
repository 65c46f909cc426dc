//! End-to-end neural speaker diarization with encoder-decoder attractors.
//!
//! A self-attention encoder stack turns spliced log-Mel features into frame
//! embeddings; an LSTM encoder-decoder turns those embeddings into a
//! variable number of speaker attractors, each with an existence
//! probability. Per-speaker activity posteriors are the sigmoid of
//! embedding-attractor inner products.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training,
//! `f64` for gradient checks); the aliases below fix the common choices.

pub mod assign;
pub mod container;
pub mod diff;
mod error;
pub mod featfront;
pub mod infer;
pub mod mixsim;
pub mod model;
pub mod objective;
pub mod runconfig;
mod scalar;
pub mod score;
mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = diff::Graph<f32>;
pub type Graph64 = diff::Graph<f64>;
pub type Model32 = model::EendEda<f32>;
pub type Model64 = model::EendEda<f64>;
pub type FeatureSequence32 = featfront::FeatureSequence<f32>;
