//! Affine normalization flavors, looked up by name when a network runs.

use std::sync::Arc;

use indexmap::IndexMap;

use crate::autodiff::{Tape, Var};
use crate::element::Element;
use crate::error::{KnError, Result};
use crate::norm::affine::update_running;
use crate::norm::config::AffineNormConfig;
use crate::tensor::Tensor4;

/// Running mean and variance of a layer that keeps them.
pub struct RunningStats<'a, T: Element> {
    pub mean: &'a mut Tensor4<T>,
    pub var: &'a mut Tensor4<T>,
}

pub trait NormFlavor<T: Element>: Send + Sync {
    fn name(&self) -> &str;

    /// Whether row `i` of the output depends only on row `i` of the input
    /// in training mode.
    fn batch_independent(&self) -> bool;

    fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        gamma: Var,
        beta: Var,
        config: &AffineNormConfig,
        running: Option<RunningStats<'_, T>>,
        training: bool,
    ) -> Result<Var>;
}

/// Per-channel statistics pooled over the batch.
pub struct BatchFlavor;

impl<T: Element> NormFlavor<T> for BatchFlavor {
    fn name(&self) -> &str {
        "batch"
    }

    fn batch_independent(&self) -> bool {
        false
    }

    fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        gamma: Var,
        beta: Var,
        config: &AffineNormConfig,
        running: Option<RunningStats<'_, T>>,
        training: bool,
    ) -> Result<Var> {
        let running = running.ok_or_else(|| KnError::Config("batch norm layer without running statistics".into()))?;
        if training {
            let s = tape.value(x).shape();
            let (y, stats) = tape.batch_norm(x, gamma, beta, config.eps)?;
            update_running(running.mean, running.var, &stats, s.n * s.plane(), config.momentum);
            Ok(y)
        } else {
            tape.batch_norm_eval(x, gamma, beta, running.mean, running.var, config.eps)
        }
    }
}

/// Per-sample statistics over channel groups. Layer and instance
/// normalization are registered as their own names but share this code.
pub struct GroupFlavor {
    name: &'static str,
}

impl GroupFlavor {
    pub fn group() -> Self {
        GroupFlavor { name: "group" }
    }

    pub fn layer() -> Self {
        GroupFlavor { name: "layer" }
    }

    pub fn instance() -> Self {
        GroupFlavor { name: "instance" }
    }
}

impl<T: Element> NormFlavor<T> for GroupFlavor {
    fn name(&self) -> &str {
        self.name
    }

    fn batch_independent(&self) -> bool {
        true
    }

    fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        gamma: Var,
        beta: Var,
        config: &AffineNormConfig,
        _running: Option<RunningStats<'_, T>>,
        _training: bool,
    ) -> Result<Var> {
        tape.group_norm(x, config.groups()?, gamma, beta, config.eps)
    }
}

pub struct NormRegistry<T: Element> {
    entries: IndexMap<String, Arc<dyn NormFlavor<T>>>,
}

impl<T: Element> Clone for NormRegistry<T> {
    fn clone(&self) -> Self {
        NormRegistry { entries: self.entries.clone() }
    }
}

impl<T: Element> Default for NormRegistry<T> {
    fn default() -> Self {
        let mut r = NormRegistry { entries: IndexMap::new() };
        r.register(Arc::new(BatchFlavor));
        r.register(Arc::new(GroupFlavor::group()));
        r.register(Arc::new(GroupFlavor::layer()));
        r.register(Arc::new(GroupFlavor::instance()));
        r
    }
}

impl<T: Element> NormRegistry<T> {
    pub fn with_builtins() -> Self {
        Self::default()
    }

    pub fn register(&mut self, flavor: Arc<dyn NormFlavor<T>>) {
        self.entries.insert(flavor.name().to_string(), flavor);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn NormFlavor<T>>> {
        self.entries.get(name).cloned().ok_or_else(|| KnError::Unknown { kind: "norm flavor", name: name.to_string() })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins() {
        let r = NormRegistry::<f32>::with_builtins();
        assert_eq!(r.names(), ["batch", "group", "layer", "instance"]);
        assert!(!r.get("batch").unwrap().batch_independent());
        assert!(r.get("layer").unwrap().batch_independent());
        assert!(r.get("positional").is_err());
    }
}
