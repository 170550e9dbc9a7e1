//! Dense NCHW tensors and the window/padding primitives built on them.

mod io;

pub use io::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, TensorFile};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{shape_err, KnError, Result};

/// Extent of a rank-4 tensor in NCHW order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_n(&self, n: usize) -> Self {
        Shape4 { n, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(KnError::InvalidShape(self.dims()));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape4 {
    fn from(d: [usize; 4]) -> Self {
        Shape4::new(d[0], d[1], d[2], d[3])
    }
}

/// Dense row-major NCHW tensor.
///
/// Vectors are stored as `(1, len, 1, 1)` and linear-layer weights as
/// `(out, in, 1, 1)`, so one type carries every value in the crate.
#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Element> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor4").field("shape", &self.shape).field("dtype", &T::DTYPE).field("head", &preview).finish()
    }
}

impl<T: Element> Tensor4<T> {
    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(KnError::DataLength { shape, expected: shape.numel(), got: data.len() });
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn full(shape: impl Into<Shape4>, value: T) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        Ok(Tensor4 { shape, data: vec![value; shape.numel()] })
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Result<Self> {
        Self::full(shape, T::ZERO)
    }

    pub fn ones(shape: impl Into<Shape4>) -> Result<Self> {
        Self::full(shape, T::ONE)
    }

    /// Zeros with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor4 { shape: self.shape, data: vec![T::ZERO; self.data.len()] }
    }

    pub fn scalar(v: T) -> Self {
        Tensor4 { shape: Shape4::new(1, 1, 1, 1), data: vec![v] }
    }

    /// A `(1, len, 1, 1)` vector.
    pub fn vector(data: Vec<T>) -> Result<Self> {
        Self::from_vec(Shape4::new(1, data.len(), 1, 1), data)
    }

    pub fn from_fn(shape: impl Into<Shape4>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Ok(Tensor4 { shape, data })
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn(shape: impl Into<Shape4>, std: f64, rng: &mut crate::Rng) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        let data = (0..shape.numel()).map(|_| T::from_f64(rng.normal() * std)).collect();
        Ok(Tensor4 { shape, data })
    }

    pub fn uniform(shape: impl Into<Shape4>, lo: f64, hi: f64, rng: &mut crate::Rng) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        let data = (0..shape.numel()).map(|_| T::from_f64(lo + (hi - lo) * rng.uniform())).collect();
        Ok(Tensor4 { shape, data })
    }

    pub(crate) fn from_parts(shape: Shape4, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = v;
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if shape.numel() != self.data.len() {
            return Err(shape_err("reshape", format!("{} -> {} changes element count", self.shape, shape)));
        }
        Ok(Tensor4 { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor4 { shape: self.shape, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(op, format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: T) -> Self {
        self.map(|v| v + s)
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Sum of all elements, accumulated in 64-bit.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn sq_norm_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::ZERO, |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Element>(&self) -> Tensor4<U> {
        Tensor4 { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    /// Samples `range` of the batch dimension.
    pub fn slice_batch(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.shape.n {
            return Err(shape_err("slice_batch", format!("range {:?} outside batch of {}", range, self.shape.n)));
        }
        let len = self.shape.sample_len();
        Ok(Tensor4 { shape: self.shape.with_n(range.len()), data: self.data[range.start * len..range.end * len].to_vec() })
    }

    /// Gather samples by index along the batch dimension.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(shape_err("select_batch", "empty index list"));
        }
        let len = self.shape.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.shape.n {
                return Err(shape_err("select_batch", format!("index {i} >= {}", self.shape.n)));
            }
            data.extend_from_slice(self.sample(i));
        }
        Ok(Tensor4 { shape: self.shape.with_n(indices.len()), data })
    }

    /// Concatenate along the batch dimension.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| shape_err("concat_batch", "no inputs"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape.with_n(1) != first.shape.with_n(1) {
                return Err(shape_err("concat_batch", format!("{} vs {}", p.shape, first.shape)));
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 { shape: first.shape.with_n(n), data })
    }
}

/// Zero-pad height and width by `p_h`/`p_w` on each side.
pub fn pad2d<T: Element>(x: &Tensor4<T>, p_h: usize, p_w: usize) -> Tensor4<T> {
    if p_h == 0 && p_w == 0 {
        return x.clone();
    }
    let s = x.shape();
    let out_shape = Shape4::new(s.n, s.c, s.h + 2 * p_h, s.w + 2 * p_w);
    let mut out = vec![T::ZERO; out_shape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                let src = s.index(n, c, h, 0);
                let dst = out_shape.index(n, c, h + p_h, p_w);
                out[dst..dst + s.w].copy_from_slice(&x.data()[src..src + s.w]);
            }
        }
    }
    Tensor4::from_parts(out_shape, out)
}

/// Remove `p_h`/`p_w` rows/columns from each border; inverse of [`pad2d`].
pub fn crop2d<T: Element>(x: &Tensor4<T>, p_h: usize, p_w: usize) -> Result<Tensor4<T>> {
    if p_h == 0 && p_w == 0 {
        return Ok(x.clone());
    }
    let s = x.shape();
    if 2 * p_h >= s.h || 2 * p_w >= s.w {
        return Err(shape_err("crop2d", format!("crop ({p_h}, {p_w}) empties {s}")));
    }
    let out_shape = Shape4::new(s.n, s.c, s.h - 2 * p_h, s.w - 2 * p_w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..out_shape.h {
                let src = s.index(n, c, h + p_h, p_w);
                out.extend_from_slice(&x.data()[src..src + out_shape.w]);
            }
        }
    }
    Ok(Tensor4::from_parts(out_shape, out))
}

/// Number of sliding-window positions along one axis, or an error when the
/// kernel does not fit.
pub fn window_count(extent: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > extent {
        return None;
    }
    Some((extent - kernel) / stride + 1)
}

pub(crate) fn window_grid(h: usize, w: usize, kernel: (usize, usize), stride: (usize, usize)) -> Result<(usize, usize)> {
    match (window_count(h, kernel.0, stride.0), window_count(w, kernel.1, stride.1)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(KnError::KernelExceedsInput { kernel, extent: (h, w) }),
    }
}

/// Sliding windows extracted by [`unfold`].
#[derive(Debug, Clone)]
pub struct Windows<T> {
    pub batch: usize,
    pub channels: usize,
    pub kernel: (usize, usize),
    /// Window positions along height and width.
    pub grid: (usize, usize),
    data: Vec<T>,
}

impl<T: Element> Windows<T> {
    pub fn window_len(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    pub fn count_per_sample(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Window `(i, j)` of sample `n`, laid out as `(c, k_h, k_w)`.
    pub fn window(&self, n: usize, i: usize, j: usize) -> &[T] {
        let len = self.window_len();
        let idx = (n * self.grid.0 + i) * self.grid.1 + j;
        &self.data[idx * len..(idx + 1) * len]
    }

    /// Windows of sample `n` in row-major window order.
    pub fn iter_sample(&self, n: usize) -> impl Iterator<Item = &[T]> + '_ {
        let len = self.window_len();
        let per = self.count_per_sample();
        self.data[n * per * len..(n + 1) * per * len].chunks_exact(len)
    }
}

/// Extract every `(c, k_h, k_w)` window at stride `(s_h, s_w)`.
///
/// Window `(i, j)` covers rows `[i*s_h, i*s_h + k_h)` and columns
/// `[j*s_w, j*s_w + k_w)`; windows advance along width first.
pub fn unfold<T: Element>(x: &Tensor4<T>, k_h: usize, k_w: usize, s_h: usize, s_w: usize) -> Result<Windows<T>> {
    let s = x.shape();
    if s_h == 0 || s_w == 0 {
        return Err(KnError::Config("stride must be at least 1".into()));
    }
    let grid = window_grid(s.h, s.w, (k_h, k_w), (s_h, s_w))?;
    let len = s.c * k_h * k_w;
    let mut data = Vec::with_capacity(s.n * grid.0 * grid.1 * len);
    for n in 0..s.n {
        for i in 0..grid.0 {
            for j in 0..grid.1 {
                for c in 0..s.c {
                    for a in 0..k_h {
                        let row = s.index(n, c, i * s_h + a, j * s_w);
                        data.extend_from_slice(&x.data()[row..row + k_w]);
                    }
                }
            }
        }
    }
    Ok(Windows { batch: s.n, channels: s.c, kernel: (k_h, k_w), grid, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use proptest::prelude::*;

    fn iota(shape: Shape4) -> Tensor4<f64> {
        Tensor4::from_vec(shape, (0..shape.numel()).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn rejects_zero_dims_and_bad_length() {
        assert!(Tensor4::<f32>::zeros([1, 0, 2, 2]).is_err());
        assert!(Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn pad_ones_has_zero_border() {
        let x = Tensor4::<f64>::ones([1, 1, 2, 2]).unwrap();
        let y = pad2d(&x, 1, 1);
        assert_eq!(y.shape(), Shape4::new(1, 1, 4, 4));
        for h in 0..4 {
            for w in 0..4 {
                let interior = (1..3).contains(&h) && (1..3).contains(&w);
                assert_eq!(y.at(0, 0, h, w), if interior { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn pad_zero_is_identity_and_shape_arithmetic() {
        let x = iota(Shape4::new(2, 3, 5, 7));
        assert_eq!(pad2d(&x, 0, 0), x);
        assert_eq!(pad2d(&x, 2, 1).shape(), Shape4::new(2, 3, 9, 9));
    }

    #[test]
    fn unfold_full_cover_is_input() {
        let x = iota(Shape4::new(1, 1, 3, 3));
        let win = unfold(&x, 3, 3, 1, 1).unwrap();
        assert_eq!(win.count_per_sample(), 1);
        assert_eq!(win.window(0, 0, 0), x.data());
    }

    #[test]
    fn unfold_exact_tiling() {
        let x = iota(Shape4::new(1, 1, 4, 4));
        let win = unfold(&x, 2, 2, 2, 2).unwrap();
        assert_eq!(win.grid, (2, 2));
        let mut seen: Vec<f64> = win.iter_sample(0).flatten().copied().collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, x.data());
        assert_eq!(win.window(0, 0, 1), &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn unfold_matches_index_oracle() {
        let shape = Shape4::new(1, 2, 5, 5);
        let x = iota(shape);
        let win = unfold(&x, 3, 3, 2, 2).unwrap();
        assert_eq!(win.count_per_sample(), 4);
        for i in 0..2 {
            for j in 0..2 {
                let mut expect = Vec::new();
                for c in 0..2 {
                    for a in 0..3 {
                        for b in 0..3 {
                            expect.push(x.at(0, c, i * 2 + a, j * 2 + b));
                        }
                    }
                }
                assert_eq!(win.window(0, i, j), expect.as_slice());
            }
        }
    }

    #[test]
    fn unfold_kernel_too_large() {
        let x = iota(Shape4::new(1, 1, 2, 5));
        let err = unfold(&x, 3, 3, 1, 1).unwrap_err();
        assert!(err.to_string().contains("kernel exceeds input extent"));
    }

    proptest! {
        #[test]
        fn pad_then_crop_is_identity(h in 1usize..6, w in 1usize..6, ph in 0usize..3, pw in 0usize..3, seed in 0u64..1000) {
            let mut rng = Rng::new(seed, 0);
            let x = Tensor4::<f64>::randn([2, 2, h, w], 1.0, &mut rng).unwrap();
            let y = crop2d(&pad2d(&x, ph, pw), ph, pw).unwrap();
            prop_assert_eq!(y, x);
        }
    }
}
