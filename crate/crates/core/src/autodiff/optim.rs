//! Adam with decoupled weight decay. Non-trainable parameters are never
//! touched, bitwise.

use std::collections::{BTreeMap, HashMap};

use super::tensor::Tensor;
use super::{AutodiffError, Parameter};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First/second moment estimates per parameter, plus the shared step count.
#[derive(Debug, Default, Clone)]
pub struct AdamState {
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay Adam step over all trainable parameters.
/// Every trainable parameter must have a gradient (zeros count); frozen
/// parameters are skipped even when a gradient is supplied.
pub fn adamw_step(
    params: &mut BTreeMap<String, Parameter>,
    grads: &HashMap<String, Tensor>,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), AutodiffError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);

    for (name, param) in params.iter_mut() {
        if !param.trainable {
            continue;
        }
        let grad = grads
            .get(name)
            .ok_or_else(|| AutodiffError::MissingGradient(name.clone()))?;
        if grad.shape() != param.tensor.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adamw_step",
                lhs: param.tensor.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (Tensor::zeros_like(&param.tensor), Tensor::zeros_like(&param.tensor)));
        for ((p, g), (mi, vi)) in param
            .tensor
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * g;
            *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= hyper.lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * *p);
        }
        if !param.tensor.is_finite() {
            return Err(AutodiffError::NanUpdate(name.clone()));
        }
    }
    Ok(())
}
