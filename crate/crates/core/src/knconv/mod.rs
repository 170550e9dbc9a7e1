//! Kernel-normalized convolution.
//!
//! Two algorithms compute the same layer. The reference one runs KernelNorm
//! and then a convolution whose kernel and stride both equal the window
//! size. The efficient one convolves the raw input once and corrects the
//! result with the window statistics:
//! `(conv - mu * sum(Z_f)) / sqrt(var + eps) + b_f`.
//!
//! Algorithms are looked up by name in a [`KnConvRegistry`].

mod algorithm;
pub mod bench;

pub use algorithm::{Efficient, KnConvAlgorithm, KnConvRegistry, Naive};
pub use bench::{bench_knconv, BenchReport};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::element::Element;
use crate::error::{KnError, Result};
use crate::norm::config::KernelNormConfig;
use crate::norm::kernel::{draw_mask, window_grid};
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};

/// Layer hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnConvSpec {
    pub ch_in: usize,
    pub ch_out: usize,
    /// Kernel, stride, padding, dropout and eps of the normalization window.
    pub window: KernelNormConfig,
    pub bias: bool,
}

impl KnConvSpec {
    pub fn new(ch_in: usize, ch_out: usize, window: KernelNormConfig) -> Self {
        KnConvSpec { ch_in, ch_out, window, bias: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ch_in == 0 || self.ch_out == 0 {
            return Err(KnError::Config("KNConv needs at least one input and output channel".into()));
        }
        self.window.validate()
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.ch_out, self.ch_in, self.window.kernel.0, self.window.kernel.1)
    }

    /// Same count as a plain convolution with these hyper-parameters.
    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.bias { self.ch_out } else { 0 }
    }

    /// `(n, ch_out, h', w')` for input `x`.
    pub fn output_shape(&self, x: Shape4) -> Result<Shape4> {
        if x.c != self.ch_in {
            return Err(KnError::ChannelMismatch { input: x.c, weights: self.ch_in });
        }
        let (h, w) = window_grid(x.h, x.w, &self.window)?;
        Ok(Shape4::new(x.n, self.ch_out, h, w))
    }
}

/// Learnable state of one layer.
#[derive(Debug, Clone)]
pub struct KnConvParams<T: Element> {
    pub spec: KnConvSpec,
    pub weights: Tensor4<T>,
    pub bias: Option<Tensor4<T>>,
}

impl<T: Element> KnConvParams<T> {
    /// He-normal weights, zero bias.
    pub fn init(spec: KnConvSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let ws = spec.weight_shape();
        let std = (2.0 / ws.sample_len() as f64).sqrt();
        Ok(KnConvParams {
            spec,
            weights: Tensor4::randn(ws, std, rng)?,
            bias: if spec.bias { Some(Tensor4::zeros([1, spec.ch_out, 1, 1])?) } else { None },
        })
    }

    pub fn from_parts(spec: KnConvSpec, weights: Tensor4<T>, bias: Option<Tensor4<T>>) -> Result<Self> {
        spec.validate()?;
        if weights.shape() != spec.weight_shape() {
            return Err(crate::error::shape_err("knconv", format!("weights {} vs expected {}", weights.shape(), spec.weight_shape())));
        }
        if let Some(b) = &bias {
            if b.numel() != spec.ch_out {
                return Err(crate::error::shape_err("knconv", format!("bias has {} entries", b.numel())));
            }
        }
        Ok(KnConvParams { spec, weights, bias })
    }

    pub fn param_count(&self) -> usize {
        self.weights.numel() + self.bias.as_ref().map_or(0, |b| b.numel())
    }
}

/// Run `algorithm` as a pure forward pass with an explicit dropout mask.
pub fn knconv_with_mask<T: Element>(
    algorithm: &dyn KnConvAlgorithm<T>,
    x: &Tensor4<T>,
    params: &KnConvParams<T>,
    mask: Option<Tensor4<T>>,
) -> Result<Tensor4<T>> {
    params.spec.output_shape(x.shape())?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(params.weights.clone());
    let bv = params.bias.as_ref().map(|b| tape.constant(b.clone()));
    let out = algorithm.apply(&mut tape, xv, wv, bv, &params.spec, mask)?;
    Ok(tape.value(out).clone())
}

fn knconv_by<T: Element>(
    algorithm: &dyn KnConvAlgorithm<T>,
    x: &Tensor4<T>,
    params: &KnConvParams<T>,
    rng: &mut Rng,
    training: bool,
) -> Result<Tensor4<T>> {
    let mask = draw_mask(x.shape(), &params.spec.window, rng, training)?;
    knconv_with_mask(algorithm, x, params, mask)
}

/// KernelNorm followed by a window-sized, window-strided convolution.
pub fn knconv_naive<T: Element>(x: &Tensor4<T>, params: &KnConvParams<T>, rng: &mut Rng, training: bool) -> Result<Tensor4<T>> {
    knconv_by(&Naive, x, params, rng, training)
}

/// One convolution of the raw input, corrected by window statistics. Draws
/// the same mask as [`knconv_naive`] from an identical `rng`.
pub fn knconv_efficient<T: Element>(x: &Tensor4<T>, params: &KnConvParams<T>, rng: &mut Rng, training: bool) -> Result<Tensor4<T>> {
    knconv_by(&Efficient, x, params, rng, training)
}
