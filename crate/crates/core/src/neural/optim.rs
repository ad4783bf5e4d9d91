use serde::{Deserialize, Serialize};

use super::QNetwork;
use crate::error::{DockError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    /// `theta <- theta - lr * (momentum * velocity + grad)`.
    Sgd {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate plus per-parameter accumulators.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub lr: f64,
    pub kind: OptimizerKind,
    first: Option<QNetwork>,
    second: Option<QNetwork>,
    steps: u64,
}

impl Optimizer {
    pub fn new(lr: f64, kind: OptimizerKind) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(DockError::Config(format!("learning rate must be positive, got {lr}")));
        }
        let valid = match kind {
            OptimizerKind::Sgd { momentum } => (0.0..1.0).contains(&momentum),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if !valid {
            return Err(DockError::Config(format!("invalid optimizer settings {kind:?}")));
        }
        Ok(Optimizer {
            lr,
            kind,
            first: None,
            second: None,
            steps: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(lr, OptimizerKind::Sgd { momentum: 0.0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut QNetwork, grads: &QNetwork) -> Result<()> {
        params.check_same_shape(grads)?;
        self.steps += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd { momentum: 0.0 } => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Sgd { momentum } => {
                let vel = self.first.get_or_insert_with(QNetwork::zeros);
                params.check_same_shape(vel)?;
                for ((p, g), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(vel.tensors_mut())
                {
                    for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = momentum * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let m = self.first.get_or_insert_with(QNetwork::zeros);
                let s = self.second.get_or_insert_with(QNetwork::zeros);
                params.check_same_shape(m)?;
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), s) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(m.tensors_mut())
                    .zip(s.tensors_mut())
                {
                    for (((pi, gi), mi), si) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(s.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *si = beta2 * *si + (1.0 - beta2) * gi * gi;
                        *pi -= lr * (*mi / c1) / ((*si / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
