//! Named parameter collections with per-parameter freeze flags, plus the
//! random initializers used by every module in the crate.

use super::serialize::{checkpoint_bytes, CheckpointRecord};
use super::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// One named parameter: the shared tensor handle and whether the optimizer
/// may touch it.
#[derive(Clone)]
pub struct Param {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered map of named parameters. A parameter with `trainable == false`
/// never receives an optimizer update; its bytes stay bit-identical.
#[derive(Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    /// Registers a tensor; the trainable flag also drives gradient tracking.
    pub fn insert(&mut self, name: impl Into<String>, tensor: &Tensor, trainable: bool) {
        tensor.set_requires_grad(trainable);
        self.entries.insert(
            name.into(),
            Param {
                tensor: tensor.clone(),
                trainable,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&self) {
        for param in self.entries.values() {
            param.tensor.zero_grad();
        }
    }

    /// Flips the trainable flag (and gradient tracking) for every parameter
    /// whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, param) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                param.trainable = trainable;
                param.tensor.set_requires_grad(trainable);
            }
        }
    }

    /// (trainable element count, total element count).
    pub fn element_counts(&self) -> (usize, usize) {
        let mut trainable = 0;
        let mut total = 0;
        for param in self.entries.values() {
            let n = param.tensor.numel();
            total += n;
            if param.trainable {
                trainable += n;
            }
        }
        (trainable, total)
    }

    /// Fraction of elements the optimizer may update.
    pub fn tunable_fraction(&self) -> f64 {
        let (trainable, total) = self.element_counts();
        if total == 0 {
            0.0
        } else {
            trainable as f64 / total as f64
        }
    }

    pub fn records(&self) -> Vec<CheckpointRecord> {
        self.entries
            .iter()
            .map(|(name, p)| CheckpointRecord {
                name: name.clone(),
                trainable: p.trainable,
                data: p.tensor.data(),
                shape: p.tensor.shape(),
            })
            .collect()
    }

    /// Copies checkpoint records into matching registered tensors.
    /// Every record must match a registered parameter in name and shape.
    pub fn load_records(&self, records: &[CheckpointRecord]) -> Result<()> {
        for rec in records {
            let param = self.entries.get(&rec.name).ok_or_else(|| {
                Error::Format(format!("checkpoint names unknown parameter `{}`", rec.name))
            })?;
            if param.tensor.shape() != rec.shape {
                return Err(Error::Format(format!(
                    "checkpoint shape {:?} for `{}` does not match model shape {:?}",
                    rec.shape,
                    rec.name,
                    param.tensor.shape()
                )));
            }
            param.tensor.set_data(&rec.data)?;
        }
        Ok(())
    }

    /// SHA-256 over the serialized record stream, in name order.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let bytes = checkpoint_bytes(&self.records());
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hasher.finalize().into()
    }
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(data, shape).expect("initializer shape")
}

/// Kaiming-uniform `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, -bound, bound)
}

/// Xavier-uniform `U(-sqrt(6/(fan_in+fan_out)), ...)`; variance-preserving
/// through plain linear maps, which keeps deep residual stacks bounded.
pub fn xavier_uniform(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(rng, shape, -bound, bound)
}
