use ndarray::{Array2, Zip};

use super::backward::Gradients;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Adam moments for every learnable tensor, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Array2<f64>>,
    pub second_moment: Vec<Array2<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .tensors()
            .iter()
            .map(|t| Array2::zeros(t.raw_dim()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient passed to Adam".into()));
    }
    let grad_tensors = grads.tensors();
    let mut tensors = params.tensors_mut();
    if grad_tensors.len() != tensors.len() || state.first_moment.len() != tensors.len() {
        return Err(Error::Shape(
            "gradient tensors do not match parameters".into(),
        ));
    }
    for (t, g) in tensors.iter().zip(&grad_tensors) {
        if t.dim() != g.dim() {
            return Err(Error::Shape(format!(
                "gradient {:?} vs parameter {:?}",
                g.dim(),
                t.dim()
            )));
        }
    }
    state.step_count += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let t = state.step_count as i32;
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for (((param, grad), m), v) in tensors
        .iter_mut()
        .zip(&grad_tensors)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        Zip::from(&mut **param)
            .and(*grad)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}
