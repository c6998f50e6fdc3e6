use serde::{Deserialize, Serialize};

use super::{AutodiffError, GradientMap, ParameterSet, Result, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper { learning_rate, ..Default::default() }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    moments: Vec<Moment>,
    step: u64,
    hyper: AdamHyper,
}

#[derive(Debug, Clone)]
struct Moment {
    name: String,
    m: Tensor,
    v: Tensor,
}

impl AdamState {
    /// Fresh zero-moment state matching the trainable entries of `params`.
    pub fn new(params: &ParameterSet, hyper: AdamHyper) -> Self {
        let moments = params
            .trainable_entries()
            .map(|e| Moment {
                name: e.name.clone(),
                m: Tensor::zeros(e.tensor.shape().to_vec()),
                v: Tensor::zeros(e.tensor.shape().to_vec()),
            })
            .collect();
        AdamState { moments, step: 0, hyper }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }
}

/// One bias-corrected Adam update, in place. Gradient entries must match the
/// trainable parameters by name and shape; a non-finite gradient aborts with
/// the offending layer's name.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &GradientMap,
    state: &mut AdamState,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let AdamHyper { learning_rate, beta1, beta2, epsilon } = state.hyper;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for moment in &mut state.moments {
        let grad = grads.get(&moment.name).ok_or_else(|| AutodiffError::ShapeMismatch {
            op: "adam_step",
            detail: format!("no gradient for parameter {}", moment.name),
        })?;
        if !grad.all_finite() {
            return Err(AutodiffError::NonFiniteGradient { layer: moment.name.clone() });
        }
        let param = params
            .get_mut(&moment.name)
            .ok_or_else(|| AutodiffError::UnknownParameter(moment.name.clone()))?;
        if param.shape() != grad.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "parameter {} has shape {:?} but gradient has {:?}",
                    moment.name,
                    param.shape(),
                    grad.shape()
                ),
            });
        }
        let (m, v, w, g) =
            (moment.m.data_mut(), moment.v.data_mut(), param.data_mut(), grad.data());
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
