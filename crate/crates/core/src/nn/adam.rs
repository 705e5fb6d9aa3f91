use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{PerpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment accumulators for one parameter set. Moments are allocated lazily
/// on the first step and pinned to that set's shapes afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update using the gradients stored on each
    /// tensor. No parameter is touched if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if params.len() != self.first_moment.len() {
            return Err(PerpError::Shape {
                context: "optimizer parameter count",
                expected: self.first_moment.len(),
                actual: params.len(),
            });
        }
        for ((name, t), m) in params.iter().zip(&self.first_moment) {
            if t.len() != m.len() {
                return Err(PerpError::Training {
                    param: name.clone(),
                    reason: format!("shape changed from {} to {} elements", m.len(), t.len()),
                });
            }
            if let Some(g) = t.grad() {
                if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                    return Err(PerpError::Training {
                        param: name.clone(),
                        reason: format!("non-finite gradient {bad}"),
                    });
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, t), m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let values = t.values_mut();
            for i in 0..values.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: one update of `params` with their stored gradients.
pub fn adam_step(params: &mut [(String, &mut Tensor)], state: &mut OptimizerState) -> Result<()> {
    state.step(params)
}
