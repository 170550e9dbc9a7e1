use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{shape_err, KnError, Result};
use crate::models::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    /// Momentum 0.9 and weight decay 1e-4.
    pub fn standard(lr: f64) -> Self {
        SgdConfig { lr, momentum: 0.9, weight_decay: 1e-4 }
    }

    pub fn plain(lr: f64) -> Self {
        SgdConfig { lr, momentum: 0.0, weight_decay: 0.0 }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        SgdConfig { lr, ..self }
    }

    /// A zero rate is allowed so a run can be a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(KnError::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(KnError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(KnError::Config(format!("weight decay {} is negative", self.weight_decay)));
        }
        Ok(())
    }
}

/// Momentum buffers, created on first use.
#[derive(Debug, Clone, Default)]
pub struct SgdState<T: Element> {
    pub velocity: ParamStore<T>,
}

impl<T: Element> SgdState<T> {
    pub fn new() -> Self {
        SgdState { velocity: ParamStore::new() }
    }
}

/// `v <- m v + (g + wd theta)`, `theta <- theta - lr v`.
pub fn sgd_step<T: Element>(params: &mut ParamStore<T>, grads: &ParamStore<T>, state: &mut SgdState<T>, cfg: &SgdConfig) -> Result<()> {
    cfg.validate()?;
    for (name, p) in params.iter() {
        let g = grads.get(name)?;
        if g.shape() != p.shape() {
            return Err(shape_err("sgd_step", format!("{name}: grad {} vs param {}", g.shape(), p.shape())));
        }
        if !g.all_finite() {
            return Err(KnError::Divergence(format!("gradient of {name}")));
        }
    }
    let (m, wd, lr) = (T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay), T::from_f64(cfg.lr));
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        if !state.velocity.contains(name) {
            state.velocity.insert(name, p.zeros_like());
        }
        let v = state.velocity.get_mut(name)?;
        for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut().iter_mut()) {
            *vi = m * *vi + (gi + wd * *pi);
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Euclidean norm over every tensor in the store.
pub fn global_norm<T: Element>(store: &ParamStore<T>) -> f64 {
    store.iter().map(|(_, t)| t.sq_norm_f64()).sum::<f64>().sqrt()
}
