//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// w -= lr * grad, parameter by parameter.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&[f64]], learning_rate: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (param, grad) in params.iter_mut().zip(grads) {
        for (w, g) in param.data_mut().iter_mut().zip(*grad) {
            *w -= learning_rate * g;
        }
    }
    Ok(())
}

/// First/second moment state for Adam, one pair of buffers per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&mut Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Standard Adam with bias correction.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    state: &mut AdamState,
    learning_rate: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    check_shapes(params, grads)?;
    if state.m.len() != params.len() {
        return Err(Error::InvalidArgument {
            op: "adam_step",
            message: format!(
                "state holds {} parameters, got {}",
                state.m.len(),
                params.len()
            ),
        });
    }
    let (beta1, beta2) = betas;
    state.step += 1;
    let t = state.step as i32;
    let corr1 = 1.0 - beta1.powi(t);
    let corr2 = 1.0 - beta2.powi(t);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, g), mi), vi) in param
            .data_mut()
            .iter_mut()
            .zip(*grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = *mi / corr1;
            let v_hat = *vi / corr2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

fn check_shapes(params: &[&mut Tensor], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument {
            op: "optimizer_step",
            message: format!("{} parameters but {} gradients", params.len(), grads.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::InvalidArgument {
                op: "optimizer_step",
                message: format!(
                    "parameter {i} has {} entries but gradient has {}",
                    p.len(),
                    g.len()
                ),
            });
        }
    }
    Ok(())
}
