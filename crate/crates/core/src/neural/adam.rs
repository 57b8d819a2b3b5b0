use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::Gradients;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Epochs at which the learning rate is halved (cumulatively).
pub const LR_HALVING_EPOCHS: [usize; 4] = [10, 15, 20, 25];

/// Per-parameter Adam moment accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(with = "super::serde_mats")]
    pub m: Vec<Array2<f64>>,
    #[serde(with = "super::serde_mats")]
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        Self { step: 0, beta1: BETA1, beta2: BETA2, eps: ADAM_EPS, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update of every parameter. Fails without
/// touching anything when a gradient is non-finite.
pub fn adam_step(state: &mut AdamState, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.grads.len() != store.len() {
        return Err(Error::DimensionMismatch { expected: store.len(), got: grads.grads.len() });
    }
    for id in store.ids() {
        let g = grads.get(id);
        if g.dim() != store.value(id).dim() {
            return Err(Error::DimensionMismatch { expected: store.value(id).len(), got: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NanGradient(store.name(id).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for id in store.ids() {
        let g = grads.get(id);
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        let p = store.value_mut(id);
        Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        });
    }
    Ok(())
}

/// `base_lr · ½ᵏ` where `k` counts the halving epochs already reached.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    let k = LR_HALVING_EPOCHS.iter().filter(|&&e| e <= epoch).count();
    base_lr * 0.5f64.powi(k as i32)
}
