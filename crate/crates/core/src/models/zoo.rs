//! The architectures: VGG-9, ResNet-8, PreactResNet-18 and ResNet-18, each
//! in batch, group, layer, instance and kernel flavors.

use crate::element::Element;
use crate::error::{KnError, Result};
use crate::models::graph::{Activation, GraphBuilder, NodeId};
use crate::models::network::Network;
use crate::models::{Architecture, ModelSpec, NormKind};
use crate::norm::config::KernelNormConfig;

/// Shortcut of a residual basic block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shortcut {
    Identity,
    /// Downsampling by two with a channel change.
    Conv,
}

fn window(k: usize, s: usize, p: usize, dropout: f64) -> KernelNormConfig {
    KernelNormConfig::square(k, s, p).with_dropout(dropout)
}

/// Shape-preserving KernelNorm window: 2x2 tiles, or 1x1 when an extent is odd.
fn tiling_window<T: Element>(g: &GraphBuilder<T>, x: NodeId, dropout: f64) -> KernelNormConfig {
    let s = g.shape(x);
    if s.h.is_multiple_of(2) && s.w.is_multiple_of(2) {
        window(2, 2, 0, dropout)
    } else {
        window(1, 1, 0, dropout)
    }
}

/// 3x3 KNConv and activation; with `maxpool`, a 2x2 KernelNorm and a 2x2
/// max-pool follow.
pub fn kn_vgg_block<T: Element>(
    g: &mut GraphBuilder<T>,
    x: NodeId,
    ch_out: usize,
    maxpool: bool,
    dropout: f64,
    act: Activation,
) -> Result<NodeId> {
    let c = g.knconv("conv", x, ch_out, window(3, 1, 1, dropout))?;
    let mut y = g.act(c, act);
    if maxpool {
        let w = tiling_window(g, y, dropout);
        y = g.kernel_norm("kn", y, w)?;
        y = g.max_pool(y, 2, 2, 0)?;
    }
    Ok(y)
}

/// Residual block built from KNConv layers.
///
/// Identity: `act(knconv2(act(knconv1(x))) + x)`.
/// Conv: the first 3x3 KNConv has stride 2, a 2x2 KernelNorm precedes the
/// sum and the skip path is a 2x2 stride-2 KNConv.
pub fn kn_basic_block<T: Element>(
    g: &mut GraphBuilder<T>,
    x: NodeId,
    ch_out: usize,
    shortcut: Shortcut,
    dropout: f64,
    act: Activation,
) -> Result<NodeId> {
    let ch_in = g.channels(x);
    let first_stride = match shortcut {
        Shortcut::Identity => {
            if ch_in != ch_out {
                return Err(KnError::Config(format!("identity shortcut needs equal channels, got {ch_in} -> {ch_out}")));
            }
            1
        }
        Shortcut::Conv => 2,
    };
    let h = g.knconv("conv1", x, ch_out, window(3, first_stride, 1, dropout))?;
    let h = g.act(h, act);
    let mut h = g.knconv("conv2", h, ch_out, window(3, 1, 1, dropout))?;
    let skip = match shortcut {
        Shortcut::Identity => x,
        Shortcut::Conv => {
            let w = tiling_window(g, h, dropout);
            h = g.kernel_norm("kn", h, w)?;
            g.knconv("shortcut", x, ch_out, window(2, 2, 0, dropout))?
        }
    };
    let sum = g.add(h, skip)?;
    Ok(g.act(sum, act))
}

/// Conv, norm and activation for the affine flavors; a KNConv and the
/// activation for the kernel flavor.
fn conv_unit<T: Element>(
    g: &mut GraphBuilder<T>,
    name: &str,
    x: NodeId,
    ch_out: usize,
    (k, s, p): (usize, usize, usize),
    spec: &ModelSpec,
    act: Option<Activation>,
) -> Result<NodeId> {
    let y = match spec.affine_kind() {
        Some(kind) => {
            let c = g.conv(name, x, ch_out, k, s, p, false)?;
            g.norm(&format!("{name}_norm"), c, kind)?
        }
        None => g.knconv(name, x, ch_out, window(k, s, p, spec.inner_kn_dropout))?,
    };
    Ok(match act {
        Some(a) => g.act(y, a),
        None => y,
    })
}

fn head<T: Element>(g: &mut GraphBuilder<T>, x: NodeId, spec: &ModelSpec, pool: (usize, usize)) -> Result<NodeId> {
    let mut y = x;
    if spec.norm == NormKind::Kernel {
        let w = tiling_window(g, y, spec.final_kn_dropout);
        y = g.kernel_norm("final_kn", y, w)?;
    }
    let y = g.adaptive_avg_pool(y, pool)?;
    let y = g.flatten(y);
    g.linear("fc", y, spec.num_classes)
}

fn vgg9<T: Element>(g: &mut GraphBuilder<T>, spec: &ModelSpec) -> Result<NodeId> {
    // VGG-11 without the last pool: (channels, pool after).
    let cfg = [(64, true), (128, true), (256, false), (256, true), (512, false), (512, true), (512, false), (512, false)];
    let mut x = g.input();
    for (i, &(c, pool)) in cfg.iter().enumerate() {
        let c = spec.width(c);
        x = g.scoped(&format!("features.{i}"), |g| match spec.norm {
            NormKind::Kernel => kn_vgg_block(g, x, c, pool, spec.inner_kn_dropout, Activation::Relu),
            _ => {
                let y = conv_unit(g, "conv", x, c, (3, 1, 1), spec, Some(Activation::Relu))?;
                if pool {
                    g.max_pool(y, 2, 2, 0)
                } else {
                    Ok(y)
                }
            }
        })?;
    }
    head(g, x, spec, (1, 1))
}

fn resnet8<T: Element>(g: &mut GraphBuilder<T>, spec: &ModelSpec) -> Result<NodeId> {
    let a = Some(Activation::Mish);
    let x = g.input();
    let (c64, c128, c256) = (spec.width(64), spec.width(128), spec.width(256));
    let x = conv_unit(g, "conv1", x, c64, (3, 1, 1), spec, a)?;
    let x = conv_unit(g, "conv2", x, c128, (3, 1, 1), spec, a)?;
    let p1 = g.max_pool(x, 2, 2, 0)?;
    let r = g.scoped("res1", |g| {
        let y = conv_unit(g, "conv1", p1, c128, (3, 1, 1), spec, a)?;
        conv_unit(g, "conv2", y, c128, (3, 1, 1), spec, a)
    })?;
    let x = g.add(r, p1)?;
    let x = conv_unit(g, "conv3", x, c256, (3, 1, 1), spec, a)?;
    let p2 = g.max_pool(x, 2, 2, 0)?;
    let r = g.scoped("res2", |g| {
        let y = conv_unit(g, "conv1", p2, c256, (3, 1, 1), spec, a)?;
        conv_unit(g, "conv2", y, c256, (3, 1, 1), spec, a)
    })?;
    let x = g.add(r, p2)?;
    let x = g.max_pool(x, 2, 2, 0)?;
    head(g, x, spec, (2, 2))
}

/// Pre-activation basic block (affine flavors).
fn preact_block<T: Element>(g: &mut GraphBuilder<T>, x: NodeId, ch_out: usize, stride: usize, spec: &ModelSpec) -> Result<NodeId> {
    let kind = spec.affine_kind().expect("affine flavor");
    let n1 = g.norm("bn1", x, kind)?;
    let o = g.act(n1, Activation::Relu);
    let skip = if stride != 1 || g.channels(x) != ch_out { g.conv("shortcut", o, ch_out, 1, stride, 0, false)? } else { x };
    let c1 = g.conv("conv1", o, ch_out, 3, stride, 1, false)?;
    let n2 = g.norm("bn2", c1, kind)?;
    let o = g.act(n2, Activation::Relu);
    let c2 = g.conv("conv2", o, ch_out, 3, 1, 1, false)?;
    g.add(c2, skip)
}

/// Post-activation basic block (affine flavors).
fn basic_block<T: Element>(g: &mut GraphBuilder<T>, x: NodeId, ch_out: usize, stride: usize, spec: &ModelSpec) -> Result<NodeId> {
    let y = conv_unit(g, "conv1", x, ch_out, (3, stride, 1), spec, Some(Activation::Relu))?;
    let y = conv_unit(g, "conv2", y, ch_out, (3, 1, 1), spec, None)?;
    let skip = if stride != 1 || g.channels(x) != ch_out { conv_unit(g, "downsample", x, ch_out, (1, stride, 0), spec, None)? } else { x };
    let s = g.add(y, skip)?;
    Ok(g.act(s, Activation::Relu))
}

fn residual_stages<T: Element>(g: &mut GraphBuilder<T>, mut x: NodeId, spec: &ModelSpec, preact: bool) -> Result<NodeId> {
    for (stage, &c) in [64, 128, 256, 512].iter().enumerate() {
        let c = spec.width(c);
        for b in 0..2 {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            x = g.scoped(&format!("layer{}.{b}", stage + 1), |g| {
                if spec.norm == NormKind::Kernel {
                    let sc = if stride == 2 { Shortcut::Conv } else { Shortcut::Identity };
                    kn_basic_block(g, x, c, sc, spec.inner_kn_dropout, Activation::Relu)
                } else if preact {
                    preact_block(g, x, c, stride, spec)
                } else {
                    basic_block(g, x, c, stride, spec)
                }
            })?;
        }
    }
    Ok(x)
}

fn preact_resnet18<T: Element>(g: &mut GraphBuilder<T>, spec: &ModelSpec) -> Result<NodeId> {
    let x = g.input();
    let x = match spec.norm {
        NormKind::Kernel => {
            let y = g.knconv("conv1", x, spec.width(64), window(3, 1, 1, spec.inner_kn_dropout))?;
            g.act(y, Activation::Relu)
        }
        _ => g.conv("conv1", x, spec.width(64), 3, 1, 1, false)?,
    };
    let x = residual_stages(g, x, spec, true)?;
    let x = match spec.affine_kind() {
        Some(kind) => {
            let n = g.norm("bn", x, kind)?;
            g.act(n, Activation::Relu)
        }
        None => x,
    };
    head(g, x, spec, (1, 1))
}

fn resnet18<T: Element>(g: &mut GraphBuilder<T>, spec: &ModelSpec) -> Result<NodeId> {
    let x = g.input();
    let mut x = conv_unit(g, "conv1", x, spec.width(64), (7, 2, 3), spec, Some(Activation::Relu))?;
    if spec.norm == NormKind::Kernel {
        let w = tiling_window(g, x, spec.inner_kn_dropout);
        x = g.kernel_norm("kn_pool", x, w)?;
    }
    let x = g.max_pool(x, 3, 2, 1)?;
    let x = residual_stages(g, x, spec, false)?;
    head(g, x, spec, (1, 1))
}

/// Build the network described by `spec` with parameters drawn from `seed`.
pub fn build_network<T: Element>(spec: &ModelSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut g = GraphBuilder::<T>::new(spec.input, seed)?;
    let out = match spec.architecture {
        Architecture::Vgg9 => vgg9(&mut g, spec)?,
        Architecture::ResNet8 => resnet8(&mut g, spec)?,
        Architecture::PreactResNet18 => preact_resnet18(&mut g, spec)?,
        Architecture::ResNet18 => resnet18(&mut g, spec)?,
    };
    let (graph, params, buffers) = g.finish(out);
    Network::new(graph, params, buffers)
}
