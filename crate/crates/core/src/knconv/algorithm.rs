use std::sync::Arc;

use indexmap::IndexMap;

use crate::autodiff::{Tape, Var};
use crate::element::Element;
use crate::error::{KnError, Result};
use crate::knconv::KnConvSpec;
use crate::tensor::Tensor4;

/// One way of computing a KNConv layer on the tape.
///
/// `mask` is the layer's dropout mask over `x` (or `None`); every algorithm
/// must treat it identically so that results are interchangeable.
pub trait KnConvAlgorithm<T: Element>: Send + Sync {
    fn name(&self) -> &str;

    fn apply(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        weights: Var,
        bias: Option<Var>,
        spec: &KnConvSpec,
        mask: Option<Tensor4<T>>,
    ) -> Result<Var>;
}

/// KernelNorm, then a convolution with kernel = stride = window size.
#[derive(Debug, Clone, Copy, Default)]
pub struct Naive;

impl<T: Element> KnConvAlgorithm<T> for Naive {
    fn name(&self) -> &str {
        "naive"
    }

    fn apply(&self, tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>, spec: &KnConvSpec, mask: Option<Tensor4<T>>) -> Result<Var> {
        let normed = tape.kernel_norm(x, &spec.window, mask)?;
        tape.conv2d(normed, w, b, spec.window.kernel, (0, 0))
    }
}

/// Raw convolution corrected with the window mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Efficient;

impl<T: Element> KnConvAlgorithm<T> for Efficient {
    fn name(&self) -> &str {
        "efficient"
    }

    fn apply(&self, tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>, spec: &KnConvSpec, mask: Option<Tensor4<T>>) -> Result<Var> {
        if mask.is_none() && spec.window.unit_len(spec.ch_in) == 1 {
            // A one-element unit normalizes to exactly zero; only the bias
            // survives. Computing it as conv - mu*sum(W) would leave rounding
            // noise amplified by 1/sqrt(eps).
            let zero = tape.scale(w, 0.0);
            return tape.conv2d(x, zero, b, spec.window.stride, spec.window.padding);
        }
        let conv = tape.conv2d(x, w, None, spec.window.stride, spec.window.padding)?;
        let (mu, var) = tape.kn_mean_var(x, &spec.window, mask)?;
        tape.kn_adjust(conv, mu, var, w, b, spec.window.eps)
    }
}

/// Name-indexed set of KNConv algorithms.
pub struct KnConvRegistry<T: Element> {
    entries: IndexMap<String, Arc<dyn KnConvAlgorithm<T>>>,
}

impl<T: Element> Clone for KnConvRegistry<T> {
    fn clone(&self) -> Self {
        KnConvRegistry { entries: self.entries.clone() }
    }
}

impl<T: Element> Default for KnConvRegistry<T> {
    fn default() -> Self {
        let mut r = KnConvRegistry { entries: IndexMap::new() };
        r.register(Arc::new(Naive));
        r.register(Arc::new(Efficient));
        r
    }
}

impl<T: Element> KnConvRegistry<T> {
    /// Registry holding `naive` and `efficient`.
    pub fn with_builtins() -> Self {
        Self::default()
    }

    /// Add or replace an algorithm under its own name.
    pub fn register(&mut self, alg: Arc<dyn KnConvAlgorithm<T>>) {
        self.entries.insert(alg.name().to_string(), alg);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn KnConvAlgorithm<T>>> {
        self.entries.get(name).cloned().ok_or_else(|| KnError::Unknown { kind: "knconv algorithm", name: name.to_string() })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_and_lookup() {
        let r = KnConvRegistry::<f64>::with_builtins();
        assert_eq!(r.names(), vec!["naive", "efficient"]);
        assert_eq!(r.get("efficient").unwrap().name(), "efficient");
        assert!(matches!(r.get("winograd"), Err(KnError::Unknown { .. })));
    }
}
