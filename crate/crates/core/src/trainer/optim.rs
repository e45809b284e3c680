use crate::error::{AceError, Result};
use crate::policy::{Gradient, PolicyParams};

use super::config::{OptimizerKind, TrainerConfig};

/// Plain gradient descent: `θ ← θ − lr · ∇`.
pub fn apply_gradient(
    params: &mut PolicyParams,
    gradient: &Gradient,
    learning_rate: f64,
) -> Result<()> {
    if params.shape() != gradient.shape() {
        return Err(AceError::input(
            "gradient shape does not match policy shape",
        ));
    }
    if learning_rate == 0.0 {
        return Ok(());
    }
    for (p, g) in params.logits_mut().iter_mut().zip(gradient.values()) {
        *p -= learning_rate * g;
    }
    Ok(())
}

/// Optimizer state for one run.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    AdamW {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
        t: i32,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl Optimizer {
    pub fn from_config(config: &TrainerConfig, num_params: usize) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd {
                lr: config.learning_rate,
            },
            OptimizerKind::AdamW => Optimizer::AdamW {
                lr: config.learning_rate,
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                eps: config.adam_eps,
                weight_decay: config.weight_decay,
                t: 0,
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
            },
        }
    }

    pub fn step(&mut self, params: &mut PolicyParams, gradient: &Gradient) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => apply_gradient(params, gradient, *lr),
            Optimizer::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
                t,
                m,
                v,
            } => {
                if params.shape() != gradient.shape() || m.len() != gradient.values().len() {
                    return Err(AceError::input(
                        "gradient shape does not match optimizer state",
                    ));
                }
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                for (((p, g), m), v) in params
                    .logits_mut()
                    .iter_mut()
                    .zip(gradient.values())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = *beta1 * *m + (1.0 - *beta1) * g;
                    *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + *eps);
                    *p -= *lr * (update + *weight_decay * *p);
                }
                Ok(())
            }
        }
    }
}
