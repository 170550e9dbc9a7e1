use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::{Shape4, Tensor4};

/// `y = x Wᵀ + b` with `x` flattened to `(n, features)`.
///
/// `weights` is `(out, in, 1, 1)`; the output is `(n, out, 1, 1)`.
pub fn linear<T: Element>(x: &Tensor4<T>, weights: &Tensor4<T>, bias: Option<&Tensor4<T>>) -> Result<Tensor4<T>> {
    let n = x.shape().n;
    let fin = x.shape().sample_len();
    let ws = weights.shape();
    let fout = ws.n;
    if ws.sample_len() != fin {
        return Err(shape_err("linear", format!("input has {fin} features, weights {} expect {}", ws, ws.sample_len())));
    }
    let mut out = vec![T::ZERO; n * fout];
    T::gemm(n, fin, fout, T::ONE, x.data(), (fin as isize, 1), weights.data(), (1, fin as isize), T::ZERO, &mut out, (fout as isize, 1));
    if let Some(b) = bias {
        if b.numel() != fout {
            return Err(shape_err("linear", format!("bias has {} entries for {fout} outputs", b.numel())));
        }
        for row in out.chunks_exact_mut(fout) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Ok(Tensor4::from_parts(Shape4::new(n, fout, 1, 1), out))
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Element>(x: &Tensor4<T>, weights: &Tensor4<T>, dy: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>, Tensor4<T>) {
    let n = x.shape().n;
    let fin = x.shape().sample_len();
    let fout = weights.shape().n;
    let mut dx = vec![T::ZERO; n * fin];
    T::gemm(n, fout, fin, T::ONE, dy.data(), (fout as isize, 1), weights.data(), (fin as isize, 1), T::ZERO, &mut dx, (fin as isize, 1));
    let mut dw = vec![T::ZERO; fout * fin];
    T::gemm(fout, n, fin, T::ONE, dy.data(), (1, fout as isize), x.data(), (fin as isize, 1), T::ZERO, &mut dw, (fin as isize, 1));
    let mut db = vec![0.0f64; fout];
    for row in dy.data().chunks_exact(fout) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a += g.to_f64();
        }
    }
    (
        Tensor4::from_parts(x.shape(), dx),
        Tensor4::from_parts(weights.shape(), dw),
        Tensor4::from_parts(Shape4::new(1, fout, 1, 1), db.into_iter().map(T::from_f64).collect()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let x = Tensor4::<f64>::from_vec([2, 3, 1, 1], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let w = Tensor4::<f64>::from_vec([2, 3, 1, 1], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor4::vector(vec![0.5, -0.5]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[1.5, 5.5, -0.5, -0.5]);
    }
}
