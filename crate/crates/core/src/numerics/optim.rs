//! Adam and AdamW with bias correction.
//!
//! `epsilon` is added to `sqrt(v_hat)`, outside the root. AdamW applies the
//! decoupled decay `p -= lr * weight_decay * p` in addition to the Adam
//! delta; plain Adam ignores `weight_decay`.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            weight_decay,
            ..Self::adam(lr)
        }
    }
}

/// Per-parameter moment buffers plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, shapes: &[Vec<usize>]) -> Self {
        OptimizerState {
            config,
            step_count: 0,
            first_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update over all parameters. `names` label errors; entries with
    /// `trainable == false` keep their value and their moments untouched.
    pub fn step(&mut self, params: &mut [ParamMut<'_>], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::shape(p.value.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = match c.kind {
            OptimizerKind::AdamW => c.lr * c.weight_decay,
            OptimizerKind::Adam => 0.0,
        };

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((pv, &gv), mv), vv) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                let delta = -c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
                *pv = *pv - decay * *pv + delta;
            }
        }
        Ok(())
    }
}

/// Mutable view of one named parameter handed to the optimizer.
pub struct ParamMut<'a> {
    pub name: String,
    pub value: &'a mut Tensor,
    pub trainable: bool,
}
