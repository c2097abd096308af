//! Adam update rule with bias correction.

use crate::error::{DuawError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    t: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    /// Defaults of the original Adam formulation.
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam step, in place. Rejects non-finite gradients so training
/// aborts with a diagnostic instead of silently corrupting parameters.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f32) -> Result<()> {
    if !param.same_shape(grad) {
        return Err(DuawError::shape("adam param/grad", param.shape(), grad.shape()));
    }
    if !grad.all_finite() {
        return Err(DuawError::NonFinite {
            step: state.t as usize + 1,
            context: "adam gradient".into(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let p = param.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..p.len() {
        let g = grad.data()[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
