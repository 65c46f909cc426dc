//! Adam with the inverse-square-root warm-up schedule.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::ParamStore;

/// Warm-up length used for full-scale training on 100k-mixture corpora.
pub const FULL_WARMUP_STEPS: u64 = 100_000;
/// Warm-up length for toy-scale runs.
pub const TOY_WARMUP_STEPS: u64 = 4_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    /// Multiplier on the schedule.
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub d_model: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { base_lr: 1.0, warmup_steps: TOY_WARMUP_STEPS, d_model: 256, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

impl AdamConfig {
    /// `base_lr · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.base_lr * (self.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        Self { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// Applies one update and returns the learning rate used.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<f64> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return shape_err(format!("adam: {} grads for {} params", grads.len(), params.len()));
        }
        self.step += 1;
        let cfg = self.config;
        let lr = cfg.lr(self.step);
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let eps = T::from_f64_lossy(cfg.eps);
        for (pid, g) in grads.iter().enumerate() {
            if g.dims() != params.get(pid).dims() {
                return shape_err(format!("adam: grad {pid} shape {:?}", g.dims()));
            }
            let (m, v) = (self.m[pid].data_mut(), self.v[pid].data_mut());
            let p = params.get_mut(pid).data_mut();
            for (((pv, mv), vv), &gv) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                *pv -= step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
        Ok(lr)
    }
}
