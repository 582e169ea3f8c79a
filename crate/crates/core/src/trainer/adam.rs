use std::collections::BTreeMap;

use crate::params::ModelParams;
use crate::tensor::Tensor;

use super::TrainError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        Self {
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Parameters missing from `grads` are
/// treated as having zero gradient. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if !g.all_finite() {
            let bad = g.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(TrainError::NonFiniteGradient {
                param: name.clone(),
                component: bad,
            });
        }
        let p = params.get(name).ok_or_else(|| TrainError::UnknownGradient(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(TrainError::UnknownGradient(name.clone()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let p = params.get_mut(&name).expect("listed");
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let g = grads.get(&name);
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
