//! AdamW with decoupled weight decay. Updates apply only to trainable
//! parameters; frozen entries are never touched.

use super::params::ParamSet;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> AdamW {
        AdamW {
            cfg,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable parameter. Errors if any trainable
    /// parameter is missing its gradient.
    pub fn step(&mut self, params: &ParamSet) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, param) in params.iter() {
            if !param.trainable {
                continue;
            }
            let grad = param
                .tensor
                .grad()
                .ok_or_else(|| Error::MissingGradient(name.clone()))?;
            let n = grad.len();
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; n]);
            let mut data = param.tensor.data();
            for i in 0..n {
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * grad[i];
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.cfg.lr
                    * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * data[i]);
            }
            param.tensor.set_data(&data)?;
        }
        Ok(())
    }
}
