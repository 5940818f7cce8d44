//! SGD with heavy-ball momentum and coupled (L2) weight decay, plus the
//! learning-rate schedule.

use crate::error::{Error, Result};
use crate::model::Params;
use crate::tensor::Matrix;

use super::config::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Matrix>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Params) -> Self {
        Self {
            velocity: params.zeros_like(),
            step: 0,
        }
    }

    /// `g = grad + wd·θ;  v = μ·v + g;  θ = θ − lr·v`, per parameter.
    pub fn apply(&mut self, params: &mut Params, grads: &[Matrix], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(Error::contract(
                "sgd",
                format!("{} gradients for {} parameters", grads.len(), self.velocity.len()),
            ));
        }
        for ((theta, v), g) in params.matrices_mut().zip(&mut self.velocity).zip(grads) {
            if theta.shape() != g.shape() || v.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "sgd",
                    lhs: theta.shape(),
                    rhs: g.shape(),
                });
            }
            let (th, vv, gg) = (theta.as_mut_slice(), v.as_mut_slice(), g.as_slice());
            for i in 0..th.len() {
                let d = gg[i] + weight_decay * th[i];
                vv[i] = momentum * vv[i] + d;
                th[i] -= lr * vv[i];
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Learning rate at `step` of `total`. The cosine schedule starts at `base`
/// and reaches zero on the last step.
pub fn learning_rate(schedule: Schedule, base: f64, step: u64, total: u64) -> f64 {
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            if total <= 1 {
                return base;
            }
            let frac = (step.min(total - 1)) as f64 / (total - 1) as f64;
            base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}
