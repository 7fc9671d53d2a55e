//! Adaptive moment optimizer with decoupled weight decay.

use crate::backbone::{Parameters, TensorKind};
use crate::error::{Error, Result};

use super::OptimizerConfig;

const ADAM_EPS: f64 = 1e-8;

/// Optimizer state: first/second moments per tensor plus the step count.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    /// Fresh state; moments are allocated lazily on the first step.
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update: `p -= lr * (m_hat / (sqrt(v_hat) + 1e-8) + wd * p)`
    /// with bias-corrected moments. Weight decay touches only linear-map
    /// weights — biases, normalization gains, and learned tokens are exempt.
    ///
    /// # Errors
    /// Fails when `params` and `grads` disagree on tensor names or sizes.
    pub fn step(
        &mut self,
        params: &mut Parameters,
        grads: &Parameters,
        lr: f64,
        cfg: &OptimizerConfig,
    ) -> Result<()> {
        let g_slots = grads.tensors();
        let mut p_slots = params.tensors_mut();
        if p_slots.len() != g_slots.len() {
            return Err(Error::data(format!(
                "optimizer got {} gradient tensors for {} parameters",
                g_slots.len(),
                p_slots.len()
            )));
        }
        if self.m.is_empty() {
            self.m = g_slots.iter().map(|g| vec![0.0; g.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, (p, g)) in p_slots.iter_mut().zip(g_slots.iter()).enumerate() {
            if p.name != g.name || p.data.len() != g.data.len() {
                return Err(Error::data(format!(
                    "optimizer tensor mismatch: {} vs {}",
                    p.name, g.name
                )));
            }
            let wd = if p.kind == TensorKind::Weight { cfg.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.data.len() {
                let grad = g.data[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad * grad;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p.data[k] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * p.data[k]);
            }
        }
        Ok(())
    }
}
