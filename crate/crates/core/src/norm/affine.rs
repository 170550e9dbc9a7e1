//! Batch, layer, instance and group normalization with per-channel affine
//! parameters.
//!
//! Each flavor standardizes over a different set of elements. Group
//! normalization covers layer (one group) and instance (one channel per
//! group) normalization; batch normalization pools the batch axis per
//! channel.

use std::ops::Range;

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::norm::config::{AffineKind, AffineNormConfig};
use crate::tensor::{Shape4, Tensor4};

/// Per-channel batch mean and biased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Element sets that are standardized together, as contiguous segments.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Layout {
    /// Per sample, `groups` consecutive channel blocks.
    Groups(usize),
    /// Per channel across the whole batch.
    Channels,
}

impl Layout {
    fn sets(&self, s: Shape4) -> usize {
        match *self {
            Layout::Groups(g) => s.n * g,
            Layout::Channels => s.c,
        }
    }

    fn segments(&self, s: Shape4, set: usize) -> Vec<Range<usize>> {
        let plane = s.plane();
        match *self {
            Layout::Groups(g) => {
                let len = s.c / g * plane;
                let start = set * len;
                vec![start..start + len]
            }
            Layout::Channels => (0..s.n)
                .map(|n| {
                    let start = n * s.sample_len() + set * plane;
                    start..start + plane
                })
                .collect(),
        }
    }

    fn set_len(&self, s: Shape4) -> usize {
        match *self {
            Layout::Groups(g) => s.c / g * s.plane(),
            Layout::Channels => s.n * s.plane(),
        }
    }
}

fn check_affine<T: Element>(x: &Tensor4<T>, gamma: &Tensor4<T>, beta: &Tensor4<T>) -> Result<()> {
    let c = x.shape().c;
    if gamma.numel() != c || beta.numel() != c {
        return Err(shape_err("affine norm", format!("{c} channels but weight/bias hold {}/{}", gamma.numel(), beta.numel())));
    }
    Ok(())
}

/// Saved state for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub layout: Layout,
    pub xhat: Vec<f64>,
    pub inv: Vec<f64>,
}

pub(crate) fn set_moments<T: Element>(x: &Tensor4<T>, layout: Layout) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let m = layout.set_len(s) as f64;
    let (mut means, mut vars) = (Vec::new(), Vec::new());
    for set in 0..layout.sets(s) {
        let segs = layout.segments(s, set);
        let mean = segs.iter().flat_map(|r| &x.data()[r.clone()]).map(|v| v.to_f64()).sum::<f64>() / m;
        let var = segs.iter().flat_map(|r| &x.data()[r.clone()]).map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / m;
        means.push(mean);
        vars.push(var);
    }
    (means, vars)
}

/// Normalize with given per-set moments and apply the per-channel affine map.
pub(crate) fn normalize_with<T: Element>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    layout: Layout,
    means: &[f64],
    vars: &[f64],
    eps: f64,
) -> (Tensor4<T>, NormCache) {
    let s = x.shape();
    let plane = s.plane();
    let mut xhat = vec![0.0; x.numel()];
    let mut inv = Vec::with_capacity(means.len());
    for set in 0..layout.sets(s) {
        let iv = 1.0 / (vars[set] + eps).sqrt();
        inv.push(iv);
        for r in layout.segments(s, set) {
            for k in r {
                xhat[k] = (x.data()[k].to_f64() - means[set]) * iv;
            }
        }
    }
    let out = xhat
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let c = (k / plane) % s.c;
            T::from_f64(gamma.data()[c].to_f64() * h + beta.data()[c].to_f64())
        })
        .collect();
    (Tensor4::from_parts(s, out), NormCache { layout, xhat, inv })
}

/// Backward: returns `(dx, dgamma, dbeta)`.
pub(crate) fn normalize_backward<T: Element>(
    cache: &NormCache,
    gamma: &Tensor4<T>,
    dy: &Tensor4<T>,
) -> (Tensor4<T>, Tensor4<T>, Tensor4<T>) {
    let s = dy.shape();
    let plane = s.plane();
    let m = cache.layout.set_len(s) as f64;
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    let mut dxhat = vec![0.0; dy.numel()];
    for (k, g) in dy.data().iter().enumerate() {
        let c = (k / plane) % s.c;
        let g = g.to_f64();
        dgamma[c] += g * cache.xhat[k];
        dbeta[c] += g;
        dxhat[k] = g * gamma.data()[c].to_f64();
    }
    let mut dx = vec![T::ZERO; dy.numel()];
    for set in 0..cache.layout.sets(s) {
        let segs = cache.layout.segments(s, set);
        let (mut sd, mut sdx) = (0.0, 0.0);
        for k in segs.iter().flat_map(|r| r.clone()) {
            sd += dxhat[k];
            sdx += dxhat[k] * cache.xhat[k];
        }
        let iv = cache.inv[set];
        for k in segs.iter().flat_map(|r| r.clone()) {
            dx[k] = T::from_f64(iv / m * (m * dxhat[k] - sd - cache.xhat[k] * sdx));
        }
    }
    let vec = |v: Vec<f64>| Tensor4::from_parts(Shape4::new(1, s.c, 1, 1), v.into_iter().map(T::from_f64).collect());
    (Tensor4::from_parts(s, dx), vec(dgamma), vec(dbeta))
}

pub(crate) fn group_norm_cached<T: Element>(
    x: &Tensor4<T>,
    groups: usize,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    eps: f64,
) -> Result<(Tensor4<T>, NormCache)> {
    check_affine(x, gamma, beta)?;
    let c = x.shape().c;
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(shape_err("group_norm", format!("{c} channels not divisible into {groups} groups")));
    }
    let layout = Layout::Groups(groups);
    let (means, vars) = set_moments(x, layout);
    Ok(normalize_with(x, gamma, beta, layout, &means, &vars, eps))
}

/// Group normalization with `groups` channel groups per sample.
pub fn group_norm<T: Element>(x: &Tensor4<T>, groups: usize, gamma: &Tensor4<T>, beta: &Tensor4<T>, eps: f64) -> Result<Tensor4<T>> {
    group_norm_cached(x, groups, gamma, beta, eps).map(|r| r.0)
}

pub fn layer_norm<T: Element>(x: &Tensor4<T>, gamma: &Tensor4<T>, beta: &Tensor4<T>, eps: f64) -> Result<Tensor4<T>> {
    group_norm(x, 1, gamma, beta, eps)
}

pub fn instance_norm<T: Element>(x: &Tensor4<T>, gamma: &Tensor4<T>, beta: &Tensor4<T>, eps: f64) -> Result<Tensor4<T>> {
    group_norm(x, x.shape().c, gamma, beta, eps)
}

pub(crate) fn batch_norm_train_cached<T: Element>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    eps: f64,
) -> Result<(Tensor4<T>, NormCache, BatchStats)> {
    check_affine(x, gamma, beta)?;
    let (mean, var) = set_moments(x, Layout::Channels);
    let (y, cache) = normalize_with(x, gamma, beta, Layout::Channels, &mean, &var, eps);
    Ok((y, cache, BatchStats { mean, var }))
}

/// Batch normalization using the statistics of this batch.
pub fn batch_norm_train<T: Element>(x: &Tensor4<T>, gamma: &Tensor4<T>, beta: &Tensor4<T>, eps: f64) -> Result<(Tensor4<T>, BatchStats)> {
    batch_norm_train_cached(x, gamma, beta, eps).map(|(y, _, st)| (y, st))
}

/// Batch normalization with stored running statistics.
pub fn batch_norm_eval<T: Element>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    running_mean: &Tensor4<T>,
    running_var: &Tensor4<T>,
    eps: f64,
) -> Result<Tensor4<T>> {
    check_affine(x, gamma, beta)?;
    check_affine(x, running_mean, running_var)?;
    let mean: Vec<f64> = running_mean.data().iter().map(|v| v.to_f64()).collect();
    let var: Vec<f64> = running_var.data().iter().map(|v| v.to_f64()).collect();
    Ok(normalize_with(x, gamma, beta, Layout::Channels, &mean, &var, eps).0)
}

/// Blend batch statistics into running buffers. The running variance uses
/// the unbiased batch estimate.
pub fn update_running<T: Element>(
    running_mean: &mut Tensor4<T>,
    running_var: &mut Tensor4<T>,
    stats: &BatchStats,
    count: usize,
    momentum: f64,
) {
    let corr = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = T::from_f64((1.0 - momentum) * r.to_f64() + momentum * m);
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&stats.var) {
        *r = T::from_f64((1.0 - momentum) * r.to_f64() + momentum * v * corr);
    }
}

/// A standalone affine normalization layer with its own parameters.
#[derive(Debug, Clone)]
pub struct AffineNorm<T: Element> {
    pub config: AffineNormConfig,
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
    pub running_mean: Tensor4<T>,
    pub running_var: Tensor4<T>,
}

impl<T: Element> AffineNorm<T> {
    pub fn new(config: AffineNormConfig) -> Result<Self> {
        config.validate()?;
        let shape = Shape4::new(1, config.channels, 1, 1);
        Ok(AffineNorm {
            config,
            weight: Tensor4::ones(shape)?,
            bias: Tensor4::zeros(shape)?,
            running_mean: Tensor4::zeros(shape)?,
            running_var: Tensor4::ones(shape)?,
        })
    }

    /// Forward pass; in training mode the batch kind updates its running statistics.
    pub fn forward(&mut self, x: &Tensor4<T>, training: bool) -> Result<Tensor4<T>> {
        let eps = self.config.eps;
        match self.config.kind {
            AffineKind::Batch if training => {
                let (y, st) = batch_norm_train(x, &self.weight, &self.bias, eps)?;
                let s = x.shape();
                update_running(&mut self.running_mean, &mut self.running_var, &st, s.n * s.plane(), self.config.momentum);
                Ok(y)
            }
            AffineKind::Batch => batch_norm_eval(x, &self.weight, &self.bias, &self.running_mean, &self.running_var, eps),
            _ => group_norm(x, self.config.groups()?, &self.weight, &self.bias, eps),
        }
    }
}
