use crate::element::Element;
use crate::error::{KnError, Result};
use crate::tensor::{window_count, Shape4, Tensor4};

/// Output height and width of a convolution-shaped window sweep.
pub fn conv_output_hw(
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(usize, usize)> {
    let (ph, pw) = (h + 2 * padding.0, w + 2 * padding.1);
    match (window_count(ph, kernel.0, stride.0), window_count(pw, kernel.1, stride.1)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(KnError::KernelExceedsInput { kernel, extent: (ph, pw) }),
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: Shape4, kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Result<Self> {
        if stride.0 == 0 || stride.1 == 0 {
            return Err(KnError::Config("stride must be at least 1".into()));
        }
        let (oh, ow) = conv_output_hw(x.h, x.w, kernel, stride, padding)?;
        Ok(ConvGeom {
            c: x.c,
            h: x.h,
            w: x.w,
            kh: kernel.0,
            kw: kernel.1,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            oh,
            ow,
        })
    }

    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Lay out one sample's receptive fields as a `(c*kh*kw) x (oh*ow)` matrix.
pub(crate) fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        for a in 0..g.kh {
            for b in 0..g.kw {
                let row = (c * g.kh + a) * g.kw + b;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + a) as isize - g.ph as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.sw + b) as isize - g.pw as isize;
                        *v = if ix < 0 || ix >= g.w as isize { T::ZERO } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-add the column matrix back onto one sample's input gradient.
pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        for a in 0..g.kh {
            for b in 0..g.kw {
                let row = (c * g.kh + a) * g.kw + b;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + a) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.sw + b) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_args<T: Element>(x: &Tensor4<T>, weights: &Tensor4<T>, bias: Option<&Tensor4<T>>) -> Result<()> {
    let ws = weights.shape();
    if ws.c != x.shape().c {
        return Err(KnError::ChannelMismatch { input: x.shape().c, weights: ws.c });
    }
    if let Some(b) = bias {
        if b.numel() != ws.n {
            return Err(crate::error::shape_err("conv2d", format!("bias has {} entries for {} filters", b.numel(), ws.n)));
        }
    }
    Ok(())
}

/// 2-D cross-correlation via im2col and GEMM.
///
/// `weights` is `(filters, channels, k_h, k_w)`; `bias`, if present, holds
/// one entry per filter.
pub fn conv2d<T: Element>(
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor4<T>> {
    check_conv_args(x, weights, bias)?;
    let ws = weights.shape();
    let g = ConvGeom::new(x.shape(), (ws.h, ws.w), stride, padding)?;
    let f = ws.n;
    let (k, p) = (g.rows(), g.cols());
    let n = x.shape().n;
    let out_shape = Shape4::new(n, f, g.oh, g.ow);
    let mut out = vec![T::ZERO; out_shape.numel()];
    let mut cols = vec![T::ZERO; k * p];
    for s in 0..n {
        im2col(x.sample(s), &g, &mut cols);
        let dst = &mut out[s * f * p..(s + 1) * f * p];
        T::gemm(f, k, p, T::ONE, weights.data(), (k as isize, 1), &cols, (p as isize, 1), T::ZERO, dst, (p as isize, 1));
        if let Some(b) = bias {
            for (fi, chunk) in dst.chunks_exact_mut(p).enumerate() {
                let bv = b.data()[fi];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(Tensor4::from_parts(out_shape, out))
}

/// Gradients of [`conv2d`]; entries are `None` when not requested.
#[derive(Debug)]
pub struct Conv2dGrads<T: Element> {
    pub dx: Option<Tensor4<T>>,
    pub dw: Option<Tensor4<T>>,
    pub db: Option<Tensor4<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    dy: &Tensor4<T>,
    stride: (usize, usize),
    padding: (usize, usize),
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> Result<Conv2dGrads<T>> {
    let ws = weights.shape();
    let g = ConvGeom::new(x.shape(), (ws.h, ws.w), stride, padding)?;
    let f = ws.n;
    let (k, p) = (g.rows(), g.cols());
    let n = x.shape().n;
    if dy.shape() != Shape4::new(n, f, g.oh, g.ow) {
        return Err(crate::error::shape_err(
            "conv2d_backward",
            format!("cotangent {} vs output {}", dy.shape(), Shape4::new(n, f, g.oh, g.ow)),
        ));
    }
    let mut dw = need_dw.then(|| vec![T::ZERO; ws.numel()]);
    let mut dx = need_dx.then(|| vec![T::ZERO; x.numel()]);
    let mut cols = vec![T::ZERO; k * p];
    for s in 0..n {
        let dys = &dy.data()[s * f * p..(s + 1) * f * p];
        if let Some(dw) = dw.as_mut() {
            im2col(x.sample(s), &g, &mut cols);
            T::gemm(f, p, k, T::ONE, dys, (p as isize, 1), &cols, (1, p as isize), T::ONE, dw, (k as isize, 1));
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(k, f, p, T::ONE, weights.data(), (1, k as isize), dys, (p as isize, 1), T::ZERO, &mut cols, (p as isize, 1));
            let len = x.shape().sample_len();
            col2im(&cols, &g, &mut dx[s * len..(s + 1) * len]);
        }
    }
    let db = need_db.then(|| {
        let mut acc = vec![0.0f64; f];
        for s in 0..n {
            for (fi, a) in acc.iter_mut().enumerate() {
                let start = (s * f + fi) * p;
                *a += dy.data()[start..start + p].iter().map(|v| v.to_f64()).sum::<f64>();
            }
        }
        Tensor4::from_parts(Shape4::new(1, f, 1, 1), acc.into_iter().map(T::from_f64).collect())
    });
    Ok(Conv2dGrads { dx: dx.map(|d| Tensor4::from_parts(x.shape(), d)), dw: dw.map(|d| Tensor4::from_parts(ws, d)), db })
}

/// Direct six-loop convolution. Reference only; quadratic in everything.
pub fn conv2d_naive_loops<T: Element>(
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor4<T>> {
    check_conv_args(x, weights, bias)?;
    let ws = weights.shape();
    let g = ConvGeom::new(x.shape(), (ws.h, ws.w), stride, padding)?;
    let n = x.shape().n;
    Tensor4::from_fn([n, ws.n, g.oh, g.ow], |s, f, oy, ox| {
        let mut acc = bias.map_or(0.0, |b| b.data()[f].to_f64());
        for c in 0..g.c {
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let iy = (oy * g.sh + a) as isize - g.ph as isize;
                    let ix = (ox * g.sw + b) as isize - g.pw as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                        acc += x.at(s, c, iy as usize, ix as usize).to_f64() * weights.at(f, c, a, b).to_f64();
                    }
                }
            }
        }
        T::from_f64(acc)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn max_rel(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12)).fold(0.0, f64::max)
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = Rng::new(1, 0);
        let x = Tensor4::<f64>::randn([2, 3, 5, 5], 1.0, &mut rng).unwrap();
        let w = Tensor4::zeros([4, 3, 3, 3]).unwrap();
        let b = Tensor4::vector(vec![0.5; 4]).unwrap();
        let y = conv2d(&x, &w, Some(&b), (1, 1), (1, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = Rng::new(2, 0);
        let x = Tensor4::<f64>::randn([1, 1, 4, 6], 1.0, &mut rng).unwrap();
        let w = Tensor4::ones([1, 1, 1, 1]).unwrap();
        assert_eq!(conv2d(&x, &w, None, (1, 1), (0, 0)).unwrap(), x);
    }

    #[test]
    fn matches_six_loop_oracle() {
        let mut rng = Rng::new(3, 0);
        let x = Tensor4::<f64>::randn([2, 3, 8, 8], 1.0, &mut rng).unwrap();
        let w = Tensor4::<f64>::randn([4, 3, 3, 3], 1.0, &mut rng).unwrap();
        let b = Tensor4::<f64>::randn([1, 4, 1, 1], 1.0, &mut rng).unwrap();
        let fast = conv2d(&x, &w, Some(&b), (1, 1), (1, 1)).unwrap();
        let slow = conv2d_naive_loops(&x, &w, Some(&b), (1, 1), (1, 1)).unwrap();
        assert_eq!(fast.shape(), Shape4::new(2, 4, 8, 8));
        assert!(max_rel(&fast, &slow) <= 1e-6);
    }

    #[test]
    fn strided_padded_matches_oracle() {
        let mut rng = Rng::new(4, 0);
        let x = Tensor4::<f64>::randn([1, 2, 7, 9], 1.0, &mut rng).unwrap();
        let w = Tensor4::<f64>::randn([3, 2, 3, 2], 1.0, &mut rng).unwrap();
        let fast = conv2d(&x, &w, None, (2, 3), (2, 1)).unwrap();
        let slow = conv2d_naive_loops(&x, &w, None, (2, 3), (2, 1)).unwrap();
        assert!(max_rel(&fast, &slow) <= 1e-9);
    }

    #[test]
    fn channel_mismatch_and_oversize_kernel() {
        let x = Tensor4::<f32>::zeros([1, 2, 3, 3]).unwrap();
        let w = Tensor4::<f32>::zeros([1, 3, 3, 3]).unwrap();
        assert!(matches!(conv2d(&x, &w, None, (1, 1), (0, 0)), Err(KnError::ChannelMismatch { .. })));
        let w = Tensor4::<f32>::zeros([1, 2, 5, 5]).unwrap();
        assert!(matches!(conv2d(&x, &w, None, (1, 1), (0, 0)), Err(KnError::KernelExceedsInput { .. })));
    }

    #[test]
    fn linear_in_input_and_weights() {
        let mut rng = Rng::new(5, 0);
        let x = Tensor4::<f64>::randn([2, 3, 6, 6], 1.0, &mut rng).unwrap();
        let y = Tensor4::<f64>::randn([2, 3, 6, 6], 1.0, &mut rng).unwrap();
        let w = Tensor4::<f64>::randn([4, 3, 3, 3], 1.0, &mut rng).unwrap();
        let v = Tensor4::<f64>::randn([4, 3, 3, 3], 1.0, &mut rng).unwrap();
        let (a, b) = (1.7, -0.3);
        let comb = x.scale(a).add(&y.scale(b)).unwrap();
        let lhs = conv2d(&comb, &w, None, (1, 1), (1, 1)).unwrap();
        let rhs =
            conv2d(&x, &w, None, (1, 1), (1, 1)).unwrap().scale(a).add(&conv2d(&y, &w, None, (1, 1), (1, 1)).unwrap().scale(b)).unwrap();
        assert!(max_rel(&lhs, &rhs) <= 1e-6);
        let wcomb = w.scale(a).add(&v.scale(b)).unwrap();
        let lhs = conv2d(&x, &wcomb, None, (2, 2), (0, 0)).unwrap();
        let rhs =
            conv2d(&x, &w, None, (2, 2), (0, 0)).unwrap().scale(a).add(&conv2d(&x, &v, None, (2, 2), (0, 0)).unwrap().scale(b)).unwrap();
        assert!(max_rel(&lhs, &rhs) <= 1e-6);
    }

    #[test]
    fn unfold_dot_reproduces_conv() {
        let mut rng = Rng::new(6, 0);
        let x = Tensor4::<f64>::randn([2, 3, 7, 7], 1.0, &mut rng).unwrap();
        let w = Tensor4::<f64>::randn([2, 3, 3, 3], 1.0, &mut rng).unwrap();
        let y = conv2d(&x, &w, None, (2, 2), (0, 0)).unwrap();
        let win = crate::tensor::unfold(&x, 3, 3, 2, 2).unwrap();
        for s in 0..2 {
            for f in 0..2 {
                let filt = &w.data()[f * 27..(f + 1) * 27];
                for i in 0..win.grid.0 {
                    for j in 0..win.grid.1 {
                        let dot: f64 = win.window(s, i, j).iter().zip(filt).map(|(a, b)| a * b).sum();
                        assert!((dot - y.at(s, f, i, j)).abs() <= 1e-12 * dot.abs().max(1.0));
                    }
                }
            }
        }
    }
}
