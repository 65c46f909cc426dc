//! Minimal reverse-mode differentiation substrate and optimizer.

mod graph;
pub mod nn;
mod optim;
mod params;

pub use graph::{bce_term, sigmoid, Gradients, Graph, Var, LAYER_NORM_EPS};

pub use optim::{Adam, AdamConfig, TOY_WARMUP_STEPS, FULL_WARMUP_STEPS};
pub use params::{clip_grad_norm, grad_norm, ParamStore};
