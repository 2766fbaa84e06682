use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// First-moment estimates, aligned with the parameter store.
    pub first: Vec<Tensor>,
    /// Second-moment estimates.
    pub second: Vec<Tensor>,
    pub step: u64,
    pub lr: f64,
    pub best_accuracy: Option<f64>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            lr,
            best_accuracy: None,
        }
    }
}

/// L2 norm over every gradient taken together.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / g` when the global norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> Result<f64> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(k);
        }
    }
    Ok(norm)
}

/// One ADAM update with bias correction. When `embedding_reg` is given, the
/// gradient `2·coeff·X` of the L2 penalty is added to that parameter's
/// gradient first.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    embedding_reg: Option<(ParamId, f64)>,
) -> Result<()> {
    if grads.len() != store.len() || state.first.len() != store.len() {
        return Err(Error::contract(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.first.len(),
            store.len()
        )));
    }
    for (i, (g, p)) in grads.iter().zip(store.values_mut().iter()).enumerate() {
        if g.shape() != p.shape() || state.first[i].shape() != p.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let lr = state.lr;
    let reg = embedding_reg.filter(|&(_, c)| c != 0.0);
    for (i, p) in store.values_mut().iter_mut().enumerate() {
        let coeff = match reg {
            Some((id, c)) if id.0 == i => c,
            _ => 0.0,
        };
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let g = grads[i].data();
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            let gk = if coeff != 0.0 { g[k] + 2.0 * coeff * *x } else { g[k] };
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Plateau schedule: if `accuracy` does not beat the best seen so far the
/// learning rate is multiplied by `decay`. Returns whether it decayed.
pub fn lr_plateau_decay(state: &mut OptimizerState, accuracy: f64, decay: f64) -> bool {
    match state.best_accuracy {
        Some(best) if accuracy <= best => {
            state.lr *= decay;
            true
        }
        _ => {
            state.best_accuracy = Some(accuracy);
            false
        }
    }
}
