use crate::element::Element;
use crate::error::{KnError, Result};
use crate::ops::conv::conv_output_hw;
use crate::tensor::{Shape4, Tensor4};

/// Max pooling; padded positions never win. Returns the output and, for each
/// output element, the flat input index it was taken from.
pub fn max_pool2d<T: Element>(
    x: &Tensor4<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(Tensor4<T>, Vec<usize>)> {
    if padding.0 * 2 > kernel.0 || padding.1 * 2 > kernel.1 {
        return Err(KnError::Config(format!("max-pool padding {padding:?} must be at most half of kernel {kernel:?}")));
    }
    let s = x.shape();
    let (oh, ow) = conv_output_hw(s.h, s.w, kernel, stride, padding)?;
    let out_shape = Shape4::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut arg = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for a in 0..kernel.0 {
                        let iy = (oy * stride.0 + a) as isize - padding.0 as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for b in 0..kernel.1 {
                            let ix = (ox * stride.1 + b) as isize - padding.1 as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let i = s.index(n, c, iy as usize, ix as usize);
                            let v = x.data()[i];
                            if best_i == usize::MAX || v > best {
                                best = v;
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((Tensor4::from_parts(out_shape, out), arg))
}

pub fn max_pool2d_backward<T: Element>(input_shape: Shape4, argmax: &[usize], dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = vec![T::ZERO; input_shape.numel()];
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx[i] += g;
    }
    Tensor4::from_parts(input_shape, dx)
}

/// Average pooling without padding.
pub fn avg_pool2d<T: Element>(x: &Tensor4<T>, kernel: (usize, usize), stride: (usize, usize)) -> Result<Tensor4<T>> {
    let s = x.shape();
    let (oh, ow) = conv_output_hw(s.h, s.w, kernel, stride, (0, 0))?;
    let inv = 1.0 / (kernel.0 * kernel.1) as f64;
    Tensor4::from_fn([s.n, s.c, oh, ow], |n, c, oy, ox| {
        let mut acc = 0.0;
        for a in 0..kernel.0 {
            for b in 0..kernel.1 {
                acc += x.at(n, c, oy * stride.0 + a, ox * stride.1 + b).to_f64();
            }
        }
        T::from_f64(acc * inv)
    })
}

pub fn avg_pool2d_backward<T: Element>(input_shape: Shape4, dy: &Tensor4<T>, kernel: (usize, usize), stride: (usize, usize)) -> Tensor4<T> {
    let inv = T::from_f64(1.0 / (kernel.0 * kernel.1) as f64);
    let ds = dy.shape();
    let mut dx = Tensor4::from_parts(input_shape, vec![T::ZERO; input_shape.numel()]);
    for n in 0..ds.n {
        for c in 0..ds.c {
            for oy in 0..ds.h {
                for ox in 0..ds.w {
                    let g = dy.at(n, c, oy, ox) * inv;
                    for a in 0..kernel.0 {
                        for b in 0..kernel.1 {
                            let i = input_shape.index(n, c, oy * stride.0 + a, ox * stride.1 + b);
                            dx.data_mut()[i] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Bin `[start, end)` of output cell `i` when pooling `extent` into `out` cells.
pub fn adaptive_bin(i: usize, extent: usize, out: usize) -> (usize, usize) {
    let start = (i * extent) / out;
    let end = ((i + 1) * extent).div_ceil(out);
    (start, end)
}

/// Average pooling to a fixed `(out_h, out_w)` grid.
pub fn adaptive_avg_pool2d<T: Element>(x: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 || out_h > s.h || out_w > s.w {
        return Err(KnError::Config(format!("adaptive pool target ({out_h}, {out_w}) invalid for input {s}")));
    }
    Tensor4::from_fn([s.n, s.c, out_h, out_w], |n, c, i, j| {
        let (h0, h1) = adaptive_bin(i, s.h, out_h);
        let (w0, w1) = adaptive_bin(j, s.w, out_w);
        let mut acc = 0.0;
        for h in h0..h1 {
            for w in w0..w1 {
                acc += x.at(n, c, h, w).to_f64();
            }
        }
        T::from_f64(acc / ((h1 - h0) * (w1 - w0)) as f64)
    })
}

pub fn adaptive_avg_pool2d_backward<T: Element>(input_shape: Shape4, dy: &Tensor4<T>) -> Tensor4<T> {
    let ds = dy.shape();
    let mut dx = Tensor4::from_parts(input_shape, vec![T::ZERO; input_shape.numel()]);
    for n in 0..ds.n {
        for c in 0..ds.c {
            for i in 0..ds.h {
                for j in 0..ds.w {
                    let (h0, h1) = adaptive_bin(i, input_shape.h, ds.h);
                    let (w0, w1) = adaptive_bin(j, input_shape.w, ds.w);
                    let g = dy.at(n, c, i, j) * T::from_f64(1.0 / ((h1 - h0) * (w1 - w0)) as f64);
                    for h in h0..h1 {
                        for w in w0..w1 {
                            let idx = input_shape.index(n, c, h, w);
                            dx.data_mut()[idx] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_picks_maximum() {
        let x = Tensor4::<f64>::from_vec([1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 7.0]).unwrap();
        let (y, arg) = max_pool2d(&x, (2, 2), (2, 2), (0, 0)).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        assert_eq!(arg, vec![1, 7]);
    }

    #[test]
    fn padded_max_pool_ignores_padding() {
        let x = Tensor4::<f64>::full([1, 1, 3, 3], -2.0).unwrap();
        let (y, _) = max_pool2d(&x, (3, 3), (2, 2), (1, 1)).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == -2.0));
    }

    #[test]
    fn adaptive_pool_to_two_by_two() {
        let x = Tensor4::<f64>::from_fn([1, 1, 4, 4], |_, _, h, w| (h * 4 + w) as f64).unwrap();
        let y = adaptive_avg_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn adaptive_bins_cover_uneven_extent() {
        // 5 -> 2 cells overlap on the middle element, as in PyTorch.
        assert_eq!(adaptive_bin(0, 5, 2), (0, 3));
        assert_eq!(adaptive_bin(1, 5, 2), (2, 5));
    }
}
