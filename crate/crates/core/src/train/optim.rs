use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

use super::config::{Schedule, TrainConfig};

/// Learning rate at `iter`: half-cosine from `max_lr` to `min_lr` over each
/// period.
pub fn cosine_lr(iter: u64, cfg: &TrainConfig) -> f64 {
    let t = cfg.cosine_period;
    let phase = match cfg.schedule {
        Schedule::Restarts => iter % t,
        Schedule::Single if iter >= t => return cfg.min_lr,
        Schedule::Single => iter,
    };
    cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + (PI * phase as f64 / t as f64).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Completed steps.
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<_> = params
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape()))
            .collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Nothing is modified if any gradient is
    /// non-finite; the error names the first offending parameter.
    pub fn update(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Config(format!(
                "adam: {} gradients and {} moment buffers for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.shape() != p.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.tensor.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {}",
                    p.name
                )));
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = (self.step + 1) as i32;
        let (b1, b2, eps, lr): (T, T, T, T) = (lit(beta1), lit(beta2), lit(eps), lit(lr));
        let c1: T = lit(1.0 - beta1.powi(t));
        let c2: T = lit(1.0 - beta2.powi(t));
        let one = T::one();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let w = p.tensor.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (one - b1) * gi;
                let vi = b2 * v.data()[i] + (one - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                w[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}
