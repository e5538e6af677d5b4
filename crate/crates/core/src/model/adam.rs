//! Adam optimizer over the flattened parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{ModelParameters, Scalar};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive and finite"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates, stored in f64 regardless of the model
/// precision so that resumed training is exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        })
    }

    /// Applies one update in place. Errors on a non-finite gradient entry.
    pub fn apply<F: Scalar>(
        &mut self,
        params: &mut ModelParameters<F>,
        grad: &ModelParameters<F>,
    ) -> Result<()> {
        let mut flat = params.flatten();
        let grad_flat = grad.flatten();
        if flat.len() != self.m.len() || grad_flat.len() != self.m.len() {
            return Err(Error::config(format!(
                "optimizer state covers {} parameters, model has {}",
                self.m.len(),
                flat.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..flat.len() {
            let g = grad_flat[i].cast_to_f64();
            if !g.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient at parameter {i}"
                )));
            }
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let delta = c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            flat[i] = F::cast_from(flat[i].cast_to_f64() - delta);
        }
        params.assign_from_flat(&flat)?;
        Ok(())
    }
}
