use serde::{Deserialize, Serialize};

use super::dense::check_same_shape;
use super::DenseMatrix;
use crate::error::{Error, Result};

/// Adam hyperparameters. Weight decay is added to the gradient as an L2 term
/// before the moment updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
        }
    }
}

/// Moment estimates, one pair per parameter, in the order the parameters are
/// passed to [`adam_step`]. Moments are allocated lazily on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<DenseMatrix>,
    pub second_moment: Vec<DenseMatrix>,
    pub step_count: u64,
}

/// One parameter tensor together with its gradient.
pub struct ParamGrad<'a> {
    pub name: &'a str,
    pub value: &'a mut DenseMatrix,
    pub grad: &'a DenseMatrix,
}

impl<'a> ParamGrad<'a> {
    pub fn new(name: &'a str, value: &'a mut DenseMatrix, grad: &'a DenseMatrix) -> Self {
        Self { name, value, grad }
    }
}

/// Applies one bias-corrected Adam update to every parameter.
///
/// Gradients are validated before anything is mutated, so a failed step
/// leaves both the parameters and the state untouched.
pub fn adam_step(params: &mut [ParamGrad<'_>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for p in params.iter() {
        check_same_shape("adam_step", p.value, p.grad)?;
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: p.name.to_string(),
            });
        }
    }
    if state.first_moment.is_empty() {
        state.first_moment = params
            .iter()
            .map(|p| DenseMatrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        state.second_moment = state.first_moment.clone();
    }
    if state.first_moment.len() != params.len() {
        return Err(Error::InvalidConfig(format!(
            "optimizer state tracks {} parameters, step received {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.first_moment) {
        check_same_shape("adam_step", p.value, m)?;
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let values = p.value.data_mut();
        let grads = p.grad.data();
        for (((w, &g), m), v) in values
            .iter_mut()
            .zip(grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g as f64 + cfg.weight_decay * *w as f64;
            let m_new = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * g;
            let v_new = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * g * g;
            *m = m_new as f32;
            *v = v_new as f32;
            let m_hat = m_new / bc1;
            let v_hat = v_new / bc2;
            *w = (*w as f64 - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
        }
    }
    Ok(())
}
