use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum { momentum: f64 },
}

/// Plain or heavy-ball SGD: `v ← μ v + g`, `θ ← θ − lr · v`.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    velocity: Option<Model<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if lr.is_nan() || lr <= 0.0 || lr.is_infinite() {
            return Err(Error::InvalidParameter(format!("learning rate {lr}")));
        }
        if let OptimizerKind::SgdMomentum { momentum } = kind {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::InvalidParameter(format!("momentum {momentum}")));
            }
        }
        Ok(Self {
            kind,
            lr,
            velocity: None,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Model<T>) -> Result<()> {
        if grads.num_params() != model.num_params() {
            return Err(Error::Dimension("gradient shape differs from model".into()));
        }
        let lr = T::of(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in model.params_mut().zip(grads.params()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::SgdMomentum { momentum } => {
                let mu = T::of(momentum);
                let v = self.velocity.get_or_insert_with(|| {
                    let mut z = grads.clone();
                    z.params_mut().for_each(|p| *p = T::zero());
                    z
                });
                for ((p, v), &g) in model.params_mut().zip(v.params_mut()).zip(grads.params()) {
                    *v = mu * *v + g;
                    *p -= lr * *v;
                }
            }
        }
        Ok(())
    }
}
