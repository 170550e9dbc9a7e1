//! KernelNorm: standardize every `(c, k_h, k_w)` sliding window of the
//! zero-padded input using the mean and biased variance of a dropped-out
//! copy of that window.
//!
//! Two independent routes compute the window statistics:
//!
//! * [`kernel_norm_with_mask`] walks each window directly with a two-pass
//!   mean/variance. It backs the reference KNConv.
//! * [`kn_mean_var_with_mask`] reduces over channels first and then sums the
//!   reduced maps over each window, computing `E[x²] - E[x]²` in 64-bit and
//!   clamping at zero. It backs the efficient KNConv.
//!
//! Both take the dropout mask explicitly. One mask covers the whole input,
//! so overlapping windows see the same dropped elements.

use crate::element::Element;
use crate::error::{shape_err, KnError, Result};
use crate::norm::config::KernelNormConfig;
use crate::ops::conv::conv_output_hw;
use crate::ops::dropout_mask;
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};

/// Per-window mean and biased variance, each `(n, 1, n_h, n_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats<T: Element> {
    pub mu: Tensor4<T>,
    pub var: Tensor4<T>,
}

/// Window-grid size `(n_h, n_w)` for an `h x w` input.
pub fn window_grid(h: usize, w: usize, cfg: &KernelNormConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    if h == 0 || w == 0 {
        return Err(KnError::InvalidShape([1, 1, h, w]));
    }
    conv_output_hw(h, w, cfg.kernel, cfg.stride, cfg.padding)
}

/// `(h_out, w_out)` of KernelNorm: `k * floor((extent + 2p - k) / s + 1)` per axis.
pub fn kernel_norm_output_shape(h: usize, w: usize, cfg: &KernelNormConfig) -> Result<(usize, usize)> {
    let (nh, nw) = window_grid(h, w, cfg)?;
    Ok((cfg.kernel.0 * nh, cfg.kernel.1 * nw))
}

fn check_mask<T: Element>(x: &Tensor4<T>, mask: Option<&Tensor4<T>>) -> Result<()> {
    if let Some(m) = mask {
        if m.shape() != x.shape() {
            return Err(shape_err("kernel_norm", format!("mask {} vs input {}", m.shape(), x.shape())));
        }
    }
    Ok(())
}

/// Draw the layer's dropout mask, or `None` when dropout is inactive.
pub fn draw_mask<T: Element>(shape: Shape4, cfg: &KernelNormConfig, rng: &mut Rng, training: bool) -> Result<Option<Tensor4<T>>> {
    if !training || cfg.dropout_p == 0.0 {
        return Ok(None);
    }
    dropout_mask(shape, cfg.dropout_p, rng, cfg.scaling).map(Some)
}

/// Dropped-out copy of `x`.
fn dropped<T: Element>(x: &Tensor4<T>, mask: Option<&Tensor4<T>>) -> Tensor4<T> {
    match mask {
        Some(m) => x.mul(m).expect("mask shape checked"),
        None => x.clone(),
    }
}

/// Window statistics in 64-bit together with the unclamped variance.
#[derive(Debug, Clone)]
pub(crate) struct RawStats {
    pub grid: (usize, usize),
    pub mu: Vec<f64>,
    /// `E[x²] - E[x]²` before clamping.
    pub var_raw: Vec<f64>,
}

impl RawStats {
    pub fn var(&self, i: usize) -> f64 {
        self.var_raw[i].max(0.0)
    }

    pub fn to_window_stats<T: Element>(&self, n: usize) -> WindowStats<T> {
        let shape = Shape4::new(n, 1, self.grid.0, self.grid.1);
        WindowStats {
            mu: Tensor4::from_parts(shape, self.mu.iter().map(|&v| T::from_f64(v)).collect()),
            var: Tensor4::from_parts(shape, (0..self.mu.len()).map(|i| T::from_f64(self.var(i))).collect()),
        }
    }
}

/// Visit the unpadded `(row, col)` positions covered by window `(i, j)`.
#[inline]
fn for_window(cfg: &KernelNormConfig, h: usize, w: usize, i: usize, j: usize, mut f: impl FnMut(usize, usize)) {
    for a in 0..cfg.kernel.0 {
        let r = (i * cfg.stride.0 + a) as isize - cfg.padding.0 as isize;
        if r < 0 || r >= h as isize {
            continue;
        }
        for b in 0..cfg.kernel.1 {
            let q = (j * cfg.stride.1 + b) as isize - cfg.padding.1 as isize;
            if q >= 0 && q < w as isize {
                f(r as usize, q as usize);
            }
        }
    }
}

pub(crate) fn window_sum_stats<T: Element>(x: &Tensor4<T>, cfg: &KernelNormConfig, mask: Option<&Tensor4<T>>) -> Result<RawStats> {
    check_mask(x, mask)?;
    let s = x.shape();
    let grid = window_grid(s.h, s.w, cfg)?;
    let xd = dropped(x, mask);
    let plane = s.plane();
    let count = cfg.unit_len(s.c) as f64;
    let mut mu = Vec::with_capacity(s.n * grid.0 * grid.1);
    let mut var_raw = Vec::with_capacity(mu.capacity());
    let mut s1 = vec![0.0f64; plane];
    let mut s2 = vec![0.0f64; plane];
    for n in 0..s.n {
        s1.fill(0.0);
        s2.fill(0.0);
        for (c, chunk) in xd.sample(n).chunks_exact(plane).enumerate() {
            let _ = c;
            for ((a, b), &v) in s1.iter_mut().zip(s2.iter_mut()).zip(chunk) {
                let v = v.to_f64();
                *a += v;
                *b += v * v;
            }
        }
        for i in 0..grid.0 {
            for j in 0..grid.1 {
                let (mut t1, mut t2) = (0.0, 0.0);
                for_window(cfg, s.h, s.w, i, j, |r, q| {
                    t1 += s1[r * s.w + q];
                    t2 += s2[r * s.w + q];
                });
                let m = t1 / count;
                mu.push(m);
                var_raw.push(t2 / count - m * m);
            }
        }
    }
    Ok(RawStats { grid, mu, var_raw })
}

/// Backward of [`window_sum_stats`]: cotangents of `mu` and `var` to `dx`.
pub(crate) fn window_sum_stats_backward<T: Element>(
    x: &Tensor4<T>,
    cfg: &KernelNormConfig,
    mask: Option<&Tensor4<T>>,
    stats: &RawStats,
    dmu: &[T],
    dvar: &[T],
) -> Tensor4<T> {
    let s = x.shape();
    let plane = s.plane();
    let count = cfg.unit_len(s.c) as f64;
    let per = stats.grid.0 * stats.grid.1;
    let mut dx = vec![T::ZERO; x.numel()];
    let mut acc_mu = vec![0.0f64; plane];
    let mut acc_sq = vec![0.0f64; plane];
    for n in 0..s.n {
        acc_mu.fill(0.0);
        acc_sq.fill(0.0);
        for i in 0..stats.grid.0 {
            for j in 0..stats.grid.1 {
                let idx = n * per + i * stats.grid.1 + j;
                let gv = if stats.var_raw[idx] > 0.0 { dvar[idx].to_f64() } else { 0.0 };
                let g1 = (dmu[idx].to_f64() - 2.0 * stats.mu[idx] * gv) / count;
                let g2 = gv / count;
                for_window(cfg, s.h, s.w, i, j, |r, q| {
                    acc_mu[r * s.w + q] += g1;
                    acc_sq[r * s.w + q] += g2;
                });
            }
        }
        let base = n * s.sample_len();
        for c in 0..s.c {
            for p in 0..plane {
                let k = base + c * plane + p;
                let m = mask.map_or(1.0, |m| m.data()[k].to_f64());
                let xd = x.data()[k].to_f64() * m;
                dx[k] = T::from_f64((acc_mu[p] + 2.0 * xd * acc_sq[p]) * m);
            }
        }
    }
    Tensor4::from_parts(s, dx)
}

/// Window mean/variance of the dropped-out input with an explicit mask.
pub fn kn_mean_var_with_mask<T: Element>(x: &Tensor4<T>, cfg: &KernelNormConfig, mask: Option<&Tensor4<T>>) -> Result<WindowStats<T>> {
    Ok(window_sum_stats(x, cfg, mask)?.to_window_stats(x.shape().n))
}

/// Window mean/variance; draws a dropout mask from `rng` when training.
pub fn kn_mean_var<T: Element>(x: &Tensor4<T>, cfg: &KernelNormConfig, rng: &mut Rng, training: bool) -> Result<WindowStats<T>> {
    let mask = draw_mask(x.shape(), cfg, rng, training)?;
    kn_mean_var_with_mask(x, cfg, mask.as_ref())
}

#[derive(Debug, Clone)]
pub struct KernelNormOutput<T: Element> {
    pub output: Tensor4<T>,
    pub stats: WindowStats<T>,
}

/// Two-pass statistics gathered window by window.
pub(crate) fn direct_stats<T: Element>(x: &Tensor4<T>, cfg: &KernelNormConfig, mask: Option<&Tensor4<T>>) -> Result<RawStats> {
    check_mask(x, mask)?;
    let s = x.shape();
    let grid = window_grid(s.h, s.w, cfg)?;
    let count = cfg.unit_len(s.c) as f64;
    let mut mu = Vec::with_capacity(s.n * grid.0 * grid.1);
    let mut var_raw = Vec::with_capacity(mu.capacity());
    let mut unit = Vec::with_capacity(cfg.unit_len(s.c));
    for n in 0..s.n {
        for i in 0..grid.0 {
            for j in 0..grid.1 {
                unit.clear();
                for c in 0..s.c {
                    for_window(cfg, s.h, s.w, i, j, |r, q| {
                        let k = s.index(n, c, r, q);
                        let m = mask.map_or(1.0, |m| m.data()[k].to_f64());
                        unit.push(x.data()[k].to_f64() * m);
                    });
                }
                // Padded positions contribute zeros to both sums.
                let m = unit.iter().sum::<f64>() / count;
                let pad = count - unit.len() as f64;
                let v = (unit.iter().map(|u| (u - m) * (u - m)).sum::<f64>() + pad * m * m) / count;
                mu.push(m);
                var_raw.push(v);
            }
        }
    }
    Ok(RawStats { grid, mu, var_raw })
}

/// KernelNorm with an explicit dropout mask (`None` = no dropout).
///
/// Output is `(n, c, k_h * n_h, k_w * n_w)`: the normalized windows tiled
/// in window order.
pub fn kernel_norm_with_mask<T: Element>(x: &Tensor4<T>, cfg: &KernelNormConfig, mask: Option<&Tensor4<T>>) -> Result<KernelNormOutput<T>> {
    let stats = direct_stats(x, cfg, mask)?;
    let output = kernel_norm_apply(x, cfg, &stats);
    Ok(KernelNormOutput { output, stats: stats.to_window_stats(x.shape().n) })
}

/// KernelNorm; draws a dropout mask from `rng` when training.
pub fn kernel_norm<T: Element>(x: &Tensor4<T>, cfg: &KernelNormConfig, rng: &mut Rng, training: bool) -> Result<Tensor4<T>> {
    let mask = draw_mask(x.shape(), cfg, rng, training)?;
    Ok(kernel_norm_with_mask(x, cfg, mask.as_ref())?.output)
}

pub(crate) fn kernel_norm_apply<T: Element>(x: &Tensor4<T>, cfg: &KernelNormConfig, stats: &RawStats) -> Tensor4<T> {
    let s = x.shape();
    let (kh, kw) = cfg.kernel;
    let (gh, gw) = stats.grid;
    let out_shape = Shape4::new(s.n, s.c, kh * gh, kw * gw);
    let mut out = vec![T::ZERO; out_shape.numel()];
    for n in 0..s.n {
        for i in 0..gh {
            for j in 0..gw {
                let idx = (n * gh + i) * gw + j;
                let mu = stats.mu[idx];
                let inv = 1.0 / (stats.var(idx) + cfg.eps).sqrt();
                for c in 0..s.c {
                    for a in 0..kh {
                        let r = (i * cfg.stride.0 + a) as isize - cfg.padding.0 as isize;
                        let row = out_shape.index(n, c, i * kh + a, j * kw);
                        for b in 0..kw {
                            let q = (j * cfg.stride.1 + b) as isize - cfg.padding.1 as isize;
                            let v = if r >= 0 && q >= 0 && (r as usize) < s.h && (q as usize) < s.w {
                                x.at(n, c, r as usize, q as usize).to_f64()
                            } else {
                                0.0
                            };
                            out[row + b] = T::from_f64((v - mu) * inv);
                        }
                    }
                }
            }
        }
    }
    Tensor4::from_parts(out_shape, out)
}

/// Backward of [`kernel_norm_with_mask`] given saved two-pass statistics.
pub(crate) fn kernel_norm_backward<T: Element>(
    x: &Tensor4<T>,
    cfg: &KernelNormConfig,
    mask: Option<&Tensor4<T>>,
    stats: &RawStats,
    dy: &Tensor4<T>,
) -> Tensor4<T> {
    let s = x.shape();
    let (kh, kw) = cfg.kernel;
    let (gh, gw) = stats.grid;
    let out_shape = dy.shape();
    let count = cfg.unit_len(s.c) as f64;
    let mut dx_direct = vec![0.0f64; x.numel()];
    let mut dxd = vec![0.0f64; x.numel()];
    let pos = |i: usize, j: usize, a: usize, b: usize| -> Option<(usize, usize)> {
        let r = (i * cfg.stride.0 + a) as isize - cfg.padding.0 as isize;
        let q = (j * cfg.stride.1 + b) as isize - cfg.padding.1 as isize;
        (r >= 0 && q >= 0 && (r as usize) < s.h && (q as usize) < s.w).then_some((r as usize, q as usize))
    };
    for n in 0..s.n {
        for i in 0..gh {
            for j in 0..gw {
                let idx = (n * gh + i) * gw + j;
                let mu = stats.mu[idx];
                let var = stats.var(idx);
                let inv = 1.0 / (var + cfg.eps).sqrt();
                let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                for c in 0..s.c {
                    for a in 0..kh {
                        for b in 0..kw {
                            let g = dy.at(n, c, i * kh + a, j * kw + b).to_f64();
                            let v = pos(i, j, a, b).map_or(0.0, |(r, q)| x.at(n, c, r, q).to_f64());
                            sum_d += g;
                            sum_dx += g * (v - mu);
                        }
                    }
                }
                let dmu = -inv * sum_d;
                let dvar = if stats.var_raw[idx] > 0.0 { -0.5 * sum_dx * inv * inv * inv } else { 0.0 };
                for c in 0..s.c {
                    for a in 0..kh {
                        for b in 0..kw {
                            if let Some((r, q)) = pos(i, j, a, b) {
                                let k = s.index(n, c, r, q);
                                let g = dy.data()[out_shape.index(n, c, i * kh + a, j * kw + b)].to_f64();
                                dx_direct[k] += g * inv;
                                let m = mask.map_or(1.0, |m| m.data()[k].to_f64());
                                let xd = x.data()[k].to_f64() * m;
                                dxd[k] += dmu / count + dvar * 2.0 * (xd - mu) / count;
                            }
                        }
                    }
                }
            }
        }
    }
    let data = dx_direct
        .iter()
        .zip(&dxd)
        .enumerate()
        .map(|(k, (&d, &s))| {
            let m = mask.map_or(1.0, |m| m.data()[k].to_f64());
            T::from_f64(d + s * m)
        })
        .collect();
    Tensor4::from_parts(s, data)
}
