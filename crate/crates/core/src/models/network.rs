//! Running a [`LayerGraph`] on the tape.

use std::sync::Arc;

use indexmap::IndexMap;

use crate::autodiff::{Tape, Var};
use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::knconv::{KnConvAlgorithm, KnConvRegistry};
use crate::models::flavor::{NormRegistry, RunningStats};
use crate::models::graph::{Activation, Layer, LayerGraph, ParamStore};
use crate::ops::dropout::{dropout_mask_per_sample, DropoutScaling};
use crate::ops::loss::argmax_rows;
use crate::rng::{stream_id, Rng};
use crate::tensor::{Shape4, Tensor4};

const DROPOUT_TAG: u64 = 0xd50;

/// How a forward pass treats dropout and normalization statistics.
///
/// Dropout masks are drawn per sample from `(seed, layer, step, sample id)`,
/// so a sample sees the same mask whatever batch it is part of.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOpts<'a> {
    pub training: bool,
    pub seed: u64,
    pub step: u64,
    /// Identifiers of the batch rows; defaults to `0..n`.
    pub sample_ids: Option<&'a [u64]>,
}

impl<'a> ForwardOpts<'a> {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train(seed: u64, step: u64) -> Self {
        ForwardOpts { training: true, seed, step, sample_ids: None }
    }

    pub fn with_ids(mut self, ids: &'a [u64]) -> Self {
        self.sample_ids = Some(ids);
        self
    }
}

/// Tape handles produced by [`Network::forward`].
pub struct Forward {
    pub output: Var,
    pub params: IndexMap<String, Var>,
}

/// Loss, correct-prediction count and parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct LossGrad<T: Element> {
    pub loss: f64,
    pub correct: usize,
    pub grads: ParamStore<T>,
}

pub struct Network<T: Element> {
    pub graph: LayerGraph,
    pub params: ParamStore<T>,
    /// Non-learned state (batch-norm running statistics).
    pub buffers: ParamStore<T>,
    knconv: Arc<dyn KnConvAlgorithm<T>>,
    norms: NormRegistry<T>,
}

impl<T: Element> Clone for Network<T> {
    fn clone(&self) -> Self {
        Network {
            graph: self.graph.clone(),
            params: self.params.clone(),
            buffers: self.buffers.clone(),
            knconv: self.knconv.clone(),
            norms: self.norms.clone(),
        }
    }
}

impl<T: Element> Network<T> {
    pub fn new(graph: LayerGraph, params: ParamStore<T>, buffers: ParamStore<T>) -> Result<Self> {
        for name in graph.param_names() {
            params.get(&name)?;
        }
        Ok(Network {
            graph,
            params,
            buffers,
            knconv: KnConvRegistry::<T>::with_builtins().get("efficient")?,
            norms: NormRegistry::with_builtins(),
        })
    }

    pub fn set_knconv(&mut self, alg: Arc<dyn KnConvAlgorithm<T>>) {
        self.knconv = alg;
    }

    pub fn knconv_name(&self) -> &str {
        self.knconv.name()
    }

    pub fn set_norms(&mut self, norms: NormRegistry<T>) {
        self.norms = norms;
    }

    /// True when every layer keeps samples independent in training mode.
    pub fn batch_independent(&self) -> Result<bool> {
        for n in &self.graph.nodes {
            if let Layer::Norm { flavor, .. } = &n.layer {
                if !self.norms.get(flavor)?.batch_independent() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    fn mask(&self, node: usize, shape: Shape4, p: f64, scaling: DropoutScaling, opts: &ForwardOpts) -> Result<Option<Tensor4<T>>> {
        if !opts.training || p == 0.0 {
            return Ok(None);
        }
        let ids = opts.sample_ids;
        let mask = dropout_mask_per_sample(
            shape,
            p,
            |i| {
                let id = ids.map_or(i as u64, |ids| ids[i]);
                Rng::new(opts.seed, stream_id(&[DROPOUT_TAG, node as u64, opts.step, id]))
            },
            scaling,
        )?;
        Ok(Some(mask))
    }

    /// Record a forward pass on `tape`. Parameters become trainable leaves
    /// when `trainable` is set.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: &Tensor4<T>, opts: &ForwardOpts, trainable: bool) -> Result<Forward> {
        let want = self.graph.input_shape();
        let xs = x.shape();
        if xs.with_n(1) != want {
            return Err(shape_err("network", format!("input {xs} vs expected per-sample {want}")));
        }
        if let Some(ids) = opts.sample_ids {
            if ids.len() != xs.n {
                return Err(shape_err("network", format!("{} sample ids for batch of {}", ids.len(), xs.n)));
            }
        }
        let mut pvars: IndexMap<String, Var> = IndexMap::new();
        let mut pvar = |tape: &mut Tape<T>, params: &ParamStore<T>, name: &str| -> Result<Var> {
            if let Some(v) = pvars.get(name) {
                return Ok(*v);
            }
            let v = tape.leaf(params.get(name)?.clone(), trainable);
            pvars.insert(name.to_string(), v);
            Ok(v)
        };
        let mut vals: Vec<Var> = Vec::with_capacity(self.graph.nodes.len());
        for idx in 0..self.graph.nodes.len() {
            let node = &self.graph.nodes[idx];
            let inp = |k: usize| vals[node.inputs[k].0];
            let v = match &node.layer {
                Layer::Input => tape.constant(x.clone()),
                Layer::Conv { weight, bias, stride, padding } => {
                    let w = pvar(tape, &self.params, weight)?;
                    let b = bias.as_deref().map(|b| pvar(tape, &self.params, b)).transpose()?;
                    tape.conv2d(inp(0), w, b, *stride, *padding)?
                }
                Layer::KnConv { weight, bias, spec } => {
                    let x = inp(0);
                    let w = pvar(tape, &self.params, weight)?;
                    let b = bias.as_deref().map(|b| pvar(tape, &self.params, b)).transpose()?;
                    let mask = self.mask(idx, tape.value(x).shape(), spec.window.dropout_p, spec.window.scaling, opts)?;
                    self.knconv.apply(tape, x, w, b, spec, mask)?
                }
                Layer::KernelNorm { config } => {
                    let x = inp(0);
                    let mask = self.mask(idx, tape.value(x).shape(), config.dropout_p, config.scaling, opts)?;
                    tape.kernel_norm(x, config, mask)?
                }
                Layer::Norm { flavor, config, weight, bias, running } => {
                    let g = pvar(tape, &self.params, weight)?;
                    let b = pvar(tape, &self.params, bias)?;
                    let flavor = self.norms.get(flavor)?;
                    let running = match running {
                        Some((m, v)) => {
                            let mean = self.buffers.get(m)?.clone();
                            let var = self.buffers.get(v)?.clone();
                            Some((m.clone(), v.clone(), mean, var))
                        }
                        None => None,
                    };
                    match running {
                        Some((mn, vn, mut mean, mut var)) => {
                            let y = flavor.forward(
                                tape,
                                inp(0),
                                g,
                                b,
                                config,
                                Some(RunningStats { mean: &mut mean, var: &mut var }),
                                opts.training,
                            )?;
                            *self.buffers.get_mut(&mn)? = mean;
                            *self.buffers.get_mut(&vn)? = var;
                            y
                        }
                        None => flavor.forward(tape, inp(0), g, b, config, None, opts.training)?,
                    }
                }
                Layer::Act(Activation::Relu) => tape.relu(inp(0)),
                Layer::Act(Activation::Mish) => tape.mish(inp(0)),
                Layer::MaxPool { kernel, stride, padding } => tape.max_pool(inp(0), *kernel, *stride, *padding)?,
                Layer::AdaptiveAvgPool { out } => tape.adaptive_avg_pool(inp(0), out.0, out.1)?,
                Layer::Flatten => tape.flatten(inp(0))?,
                Layer::Linear { weight, bias } => {
                    let w = pvar(tape, &self.params, weight)?;
                    let b = pvar(tape, &self.params, bias)?;
                    tape.linear(inp(0), w, Some(b))?
                }
                Layer::Add => tape.add(inp(0), inp(1))?,
            };
            vals.push(v);
        }
        Ok(Forward { output: vals[self.graph.output.0], params: pvars })
    }

    /// Inference-mode output.
    pub fn predict(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, &ForwardOpts::eval(), false)?;
        Ok(tape.value(f.output).clone())
    }

    /// Output under `opts` without gradients.
    pub fn run(&mut self, x: &Tensor4<T>, opts: &ForwardOpts) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, opts, false)?;
        Ok(tape.value(f.output).clone())
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grads(&mut self, x: &Tensor4<T>, labels: &[usize], opts: &ForwardOpts) -> Result<LossGrad<T>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, opts, true)?;
        let correct = argmax_rows(tape.value(f.output)).iter().zip(labels).filter(|(p, y)| p == y).count();
        let loss = tape.softmax_cross_entropy(f.output, labels)?;
        let mut g = tape.backward(loss)?;
        let mut grads = ParamStore::new();
        for (name, p) in self.params.iter() {
            let gv = match f.params.get(name).and_then(|v| g.take(*v)) {
                Some(t) => t,
                None => p.zeros_like(),
            };
            grads.insert(name, gv);
        }
        Ok(LossGrad { loss: tape.value(loss).data()[0].to_f64(), correct, grads })
    }
}
