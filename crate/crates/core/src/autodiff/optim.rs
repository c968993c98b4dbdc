use alloc::string::ToString;

use super::ParameterStore;
use crate::math;
use crate::{Error, Result};

/// Adam hyperparameters with optional global-norm gradient clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients whose global L2 norm exceeds this are rescaled to it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(5.0) }
    }
}

/// One Adam update from the accumulated gradients. Returns the global
/// gradient norm measured before clipping.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) -> Result<f64> {
    let mut sq = 0.0;
    for (_, p) in store.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.to_string()));
        }
        sq += p.grad.data().iter().map(|g| g * g).sum::<f64>();
    }
    let norm = math::sqrt(sq);
    let scale = match cfg.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    store.step += 1;
    let t = store.step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - math::powi(cfg.beta1, t);
    let c2 = 1.0 - math::powi(cfg.beta2, t);
    for p in store.params_mut() {
        let m = p.first_moment.data_mut();
        let v = p.second_moment.data_mut();
        let w = p.value.data_mut();
        for (((wi, mi), vi), gi) in w.iter_mut().zip(m).zip(v).zip(p.grad.data()) {
            let g = gi * scale;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *wi -= cfg.learning_rate * m_hat / (math::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(norm)
}
