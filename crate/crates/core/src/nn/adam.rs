use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring a parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            config,
            step: 0,
            first: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            second: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// One bias-corrected Adam step. Non-finite gradients abort before any
    /// parameter is touched.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        if g.len() != self.first.len() || g.iter().zip(&self.first).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::shape("gradient layout does not match optimizer state"));
        }
        for (i, t) in g.iter().enumerate() {
            if let Some(j) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient {} in tensor {i} at index {j} (step {})",
                    t[j],
                    self.step + 1
                )));
            }
        }
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (first, second) = (&mut self.first, &mut self.second);
        let mut idx = 0;
        params.visit_mut("", &mut |_, p| {
            let (m, v, gt) = (&mut first[idx], &mut second[idx], g[idx]);
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * gt[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * gt[k] * gt[k];
                if lr != 0.0 {
                    let m_hat = m[k] / c1;
                    let v_hat = v[k] / c2;
                    p[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
            idx += 1;
        });
        Ok(())
    }
}
