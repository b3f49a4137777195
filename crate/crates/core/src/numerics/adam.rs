use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Moment estimates for bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Option<Vec<(Tensor, Tensor)>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    /// Creates an uninitialized state; call [`AdamState::init`] before stepping.
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: None,
        }
    }

    /// Allocates zeroed moments matching every parameter in `params`.
    pub fn init(&mut self, params: &ParamStore) {
        self.moments = Some(
            params
                .iter()
                .map(|(_, p)| {
                    let z = Tensor::zeros(p.value.shape());
                    (z.clone(), z)
                })
                .collect(),
        );
        self.step = 0;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn is_initialized(&self) -> bool {
        self.moments.is_some()
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
///
/// Gradients are left in place; callers zero them before the next pass.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let moments = state
        .moments
        .as_mut()
        .ok_or_else(|| Error::Numeric("adam step on an uninitialized optimizer state".into()))?;
    if moments.len() != params.len() {
        return Err(Error::Numeric(format!(
            "optimizer tracks {} parameters, model has {}",
            moments.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (p, (m, v)) in params.iter_mut().zip(moments.iter_mut()) {
        if m.shape() != p.value.shape() {
            return Err(Error::dim(format!("adam[{}]", p.name), m.shape(), p.value.shape()));
        }
        let grads = p.grad.data();
        let values = p.value.data_mut();
        for (((x, &g), m), v) in values
            .iter_mut()
            .zip(grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step decay: `base * factor^(epoch / period)`.
pub fn step_decay_lr(base: f64, factor: f64, period: usize, epoch: usize) -> f64 {
    if period == 0 {
        return base;
    }
    base * factor.powi((epoch / period) as i32)
}
