//! Layer graphs, parameter stores and the builder that wires them up.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{shape_err, KnError, Result};
use crate::knconv::KnConvSpec;
use crate::norm::config::{AffineKind, AffineNormConfig, KernelNormConfig};
use crate::norm::kernel::kernel_norm_output_shape;
use crate::ops::conv::conv_output_hw;
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Mish,
}

/// Index of a node inside a [`LayerGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Input,
    Conv {
        weight: String,
        bias: Option<String>,
        stride: (usize, usize),
        padding: (usize, usize),
    },
    KnConv {
        weight: String,
        bias: Option<String>,
        spec: KnConvSpec,
    },
    KernelNorm {
        config: KernelNormConfig,
    },
    /// Affine normalization; `flavor` names an entry of the norm registry.
    Norm {
        flavor: String,
        config: AffineNormConfig,
        weight: String,
        bias: String,
        running: Option<(String, String)>,
    },
    Act(Activation),
    MaxPool {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    AdaptiveAvgPool {
        out: (usize, usize),
    },
    Flatten,
    Linear {
        weight: String,
        bias: String,
    },
    Add,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Input => "input",
            Layer::Conv { .. } => "conv",
            Layer::KnConv { .. } => "knconv",
            Layer::KernelNorm { .. } => "kernel_norm",
            Layer::Norm { .. } => "norm",
            Layer::Act(_) => "act",
            Layer::MaxPool { .. } => "max_pool",
            Layer::AdaptiveAvgPool { .. } => "adaptive_avg_pool",
            Layer::Flatten => "flatten",
            Layer::Linear { .. } => "linear",
            Layer::Add => "add",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
    pub inputs: Vec<NodeId>,
    /// Per-sample output shape (`n = 1`).
    pub shape: Shape4,
}

/// Topologically ordered layer DAG; node 0 is the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub nodes: Vec<Node>,
    pub output: NodeId,
}

impl LayerGraph {
    pub fn input_shape(&self) -> Shape4 {
        self.nodes[0].shape
    }

    pub fn output_shape(&self) -> Shape4 {
        self.nodes[self.output.0].shape
    }

    pub fn count(&self, kind: &str) -> usize {
        self.nodes.iter().filter(|n| n.layer.kind() == kind).count()
    }

    /// Parameter names referenced by the layers, in graph order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match &n.layer {
                Layer::Conv { weight, bias, .. } | Layer::KnConv { weight, bias, .. } => {
                    out.push(weight.clone());
                    out.extend(bias.clone());
                }
                Layer::Norm { weight, bias, .. } | Layer::Linear { weight, bias } => {
                    out.push(weight.clone());
                    out.push(bias.clone());
                }
                _ => {}
            }
        }
        out
    }
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Element> {
    map: IndexMap<String, Tensor4<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { map: IndexMap::new() }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor4<T>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor4<T>> {
        self.map.get(name).ok_or_else(|| KnError::Unknown { kind: "parameter", name: name.to_string() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor4<T>> {
        self.map.get_mut(name).ok_or_else(|| KnError::Unknown { kind: "parameter", name: name.to_string() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor4<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor4::numel).sum()
    }

    /// Same names and shapes as `other`.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(shape_err("params", format!("{} vs {} tensors", self.len(), other.len())));
        }
        for (k, v) in self.iter() {
            let o = other.get(k)?;
            if o.shape() != v.shape() {
                return Err(shape_err("params", format!("{k}: {} vs {}", v.shape(), o.shape())));
            }
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore { map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// Builds a [`LayerGraph`] with shape inference and parameter initialization.
pub struct GraphBuilder<T: Element> {
    nodes: Vec<Node>,
    params: ParamStore<T>,
    buffers: ParamStore<T>,
    rng: Rng,
    scope: Vec<String>,
}

impl<T: Element> GraphBuilder<T> {
    /// Start a graph whose input is `channels x height x width` per sample.
    pub fn new(input: (usize, usize, usize), seed: u64) -> Result<Self> {
        let shape = Shape4::new(1, input.0, input.1, input.2);
        shape.validate()?;
        Ok(GraphBuilder {
            nodes: vec![Node { name: "input".into(), layer: Layer::Input, inputs: vec![], shape }],
            params: ParamStore::new(),
            buffers: ParamStore::new(),
            rng: Rng::new(seed, crate::rng::stream_id(&[0x1417])),
            scope: Vec::new(),
        })
    }

    pub fn input(&self) -> NodeId {
        NodeId(0)
    }

    pub fn shape(&self, id: NodeId) -> Shape4 {
        self.nodes[id.0].shape
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.shape(id).c
    }

    /// Run `f` with `name` appended to the parameter-name prefix.
    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.scope.push(name.to_string());
        let r = f(self);
        self.scope.pop();
        r
    }

    fn full_name(&self, local: &str) -> String {
        if self.scope.is_empty() {
            local.to_string()
        } else {
            format!("{}.{local}", self.scope.join("."))
        }
    }

    fn push(&mut self, local: &str, layer: Layer, inputs: Vec<NodeId>, shape: Shape4) -> NodeId {
        let name = self.full_name(local);
        self.nodes.push(Node { name, layer, inputs, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn he_weight(&mut self, name: &str, shape: Shape4) -> Result<String> {
        let std = (2.0 / shape.sample_len() as f64).sqrt();
        let full = format!("{}.weight", self.full_name(name));
        self.params.insert(full.clone(), Tensor4::randn(shape, std, &mut self.rng)?);
        Ok(full)
    }

    fn zero_bias(&mut self, name: &str, len: usize) -> Result<String> {
        let full = format!("{}.bias", self.full_name(name));
        self.params.insert(full.clone(), Tensor4::zeros([1, len, 1, 1])?);
        Ok(full)
    }

    /// Plain convolution.
    pub fn conv(&mut self, name: &str, x: NodeId, ch_out: usize, k: usize, s: usize, p: usize, bias: bool) -> Result<NodeId> {
        let xs = self.shape(x);
        let (h, w) = conv_output_hw(xs.h, xs.w, (k, k), (s, s), (p, p))?;
        let weight = self.he_weight(name, Shape4::new(ch_out, xs.c, k, k))?;
        let bias = if bias { Some(self.zero_bias(name, ch_out)?) } else { None };
        let layer = Layer::Conv { weight, bias, stride: (s, s), padding: (p, p) };
        Ok(self.push(name, layer, vec![x], Shape4::new(1, ch_out, h, w)))
    }

    /// Kernel-normalized convolution with a bias.
    pub fn knconv(&mut self, name: &str, x: NodeId, ch_out: usize, window: KernelNormConfig) -> Result<NodeId> {
        let xs = self.shape(x);
        let spec = KnConvSpec::new(xs.c, ch_out, window);
        spec.validate()?;
        let out = spec.output_shape(xs)?;
        let weight = self.he_weight(name, spec.weight_shape())?;
        let bias = Some(self.zero_bias(name, ch_out)?);
        Ok(self.push(name, Layer::KnConv { weight, bias, spec }, vec![x], out))
    }

    pub fn kernel_norm(&mut self, name: &str, x: NodeId, config: KernelNormConfig) -> Result<NodeId> {
        config.validate()?;
        let xs = self.shape(x);
        let (h, w) = kernel_norm_output_shape(xs.h, xs.w, &config)?;
        Ok(self.push(name, Layer::KernelNorm { config }, vec![x], Shape4::new(1, xs.c, h, w)))
    }

    /// Affine normalization resolved at run time through the norm registry.
    pub fn norm(&mut self, name: &str, x: NodeId, kind: AffineKind) -> Result<NodeId> {
        let xs = self.shape(x);
        let config = AffineNormConfig::new(kind, xs.c);
        config.validate()?;
        let full = self.full_name(name);
        let weight = format!("{full}.weight");
        let bias = format!("{full}.bias");
        self.params.insert(weight.clone(), Tensor4::ones([1, xs.c, 1, 1])?);
        self.params.insert(bias.clone(), Tensor4::zeros([1, xs.c, 1, 1])?);
        let running = if kind == AffineKind::Batch {
            let (m, v) = (format!("{full}.running_mean"), format!("{full}.running_var"));
            self.buffers.insert(m.clone(), Tensor4::zeros([1, xs.c, 1, 1])?);
            self.buffers.insert(v.clone(), Tensor4::ones([1, xs.c, 1, 1])?);
            Some((m, v))
        } else {
            None
        };
        let layer = Layer::Norm { flavor: affine_kind_name(kind).to_string(), config, weight, bias, running };
        Ok(self.push(name, layer, vec![x], xs))
    }

    pub fn act(&mut self, x: NodeId, a: Activation) -> NodeId {
        let s = self.shape(x);
        let name = match a {
            Activation::Relu => "relu",
            Activation::Mish => "mish",
        };
        self.push(name, Layer::Act(a), vec![x], s)
    }

    pub fn max_pool(&mut self, x: NodeId, k: usize, s: usize, p: usize) -> Result<NodeId> {
        let xs = self.shape(x);
        if 2 * p > k {
            return Err(KnError::Config(format!("max-pool padding {p} exceeds half of kernel {k}")));
        }
        let (h, w) = conv_output_hw(xs.h, xs.w, (k, k), (s, s), (p, p))?;
        let layer = Layer::MaxPool { kernel: (k, k), stride: (s, s), padding: (p, p) };
        Ok(self.push("max_pool", layer, vec![x], Shape4::new(1, xs.c, h, w)))
    }

    pub fn adaptive_avg_pool(&mut self, x: NodeId, out: (usize, usize)) -> Result<NodeId> {
        let xs = self.shape(x);
        if out.0 == 0 || out.1 == 0 || out.0 > xs.h || out.1 > xs.w {
            return Err(shape_err("adaptive_avg_pool", format!("output {out:?} from {xs}")));
        }
        Ok(self.push("avg_pool", Layer::AdaptiveAvgPool { out }, vec![x], Shape4::new(1, xs.c, out.0, out.1)))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push("flatten", Layer::Flatten, vec![x], Shape4::new(1, s.sample_len(), 1, 1))
    }

    pub fn linear(&mut self, name: &str, x: NodeId, out: usize) -> Result<NodeId> {
        let fin = self.shape(x).sample_len();
        let weight = self.he_weight(name, Shape4::new(out, fin, 1, 1))?;
        let bias = self.zero_bias(name, out)?;
        Ok(self.push(name, Layer::Linear { weight, bias }, vec![x], Shape4::new(1, out, 1, 1)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", format!("{sa} vs {sb}")));
        }
        Ok(self.push("add", Layer::Add, vec![a, b], sa))
    }

    pub fn finish(self, output: NodeId) -> (LayerGraph, ParamStore<T>, ParamStore<T>) {
        (LayerGraph { nodes: self.nodes, output }, self.params, self.buffers)
    }
}

pub fn affine_kind_name(kind: AffineKind) -> &'static str {
    match kind {
        AffineKind::Batch => "batch",
        AffineKind::Layer => "layer",
        AffineKind::Instance => "instance",
        AffineKind::Group { .. } => "group",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_names() {
        let mut g = GraphBuilder::<f32>::new((3, 8, 8), 0).unwrap();
        let x = g.input();
        let c = g.scoped("stem", |g| g.conv("conv", x, 4, 3, 2, 1, true)).unwrap();
        assert_eq!(g.shape(c), Shape4::new(1, 4, 4, 4));
        let n = g.norm("bn", c, AffineKind::Batch).unwrap();
        let p = g.max_pool(n, 2, 2, 0).unwrap();
        let f = g.flatten(p);
        let l = g.linear("fc", f, 5).unwrap();
        let (graph, params, buffers) = g.finish(l);
        assert_eq!(graph.output_shape(), Shape4::new(1, 5, 1, 1));
        let names: Vec<_> = params.names().collect();
        assert_eq!(names, ["stem.conv.weight", "stem.conv.bias", "bn.weight", "bn.bias", "fc.weight", "fc.bias"]);
        assert_eq!(graph.param_names(), names);
        assert_eq!(buffers.len(), 2);
    }

    #[test]
    fn add_checks_shapes() {
        let mut g = GraphBuilder::<f64>::new((2, 4, 4), 0).unwrap();
        let x = g.input();
        let c = g.conv("c", x, 3, 1, 1, 0, false).unwrap();
        assert!(g.add(x, c).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let build = |seed| {
            let mut g = GraphBuilder::<f32>::new((3, 8, 8), seed).unwrap();
            let x = g.input();
            let c = g.knconv("c", x, 4, KernelNormConfig::square(3, 1, 1)).unwrap();
            g.finish(c).1
        };
        assert_eq!(build(7), build(7));
        assert_ne!(build(7), build(8));
    }
}
