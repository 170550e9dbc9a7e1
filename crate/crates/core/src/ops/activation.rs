use crate::element::Element;
use crate::tensor::Tensor4;

pub fn relu<T: Element>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub fn relu_backward<T: Element>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let data = x.data().iter().zip(dy.data()).map(|(&v, &g)| if v > T::ZERO { g } else { T::ZERO }).collect();
    Tensor4::from_parts(x.shape(), data)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `x * tanh(softplus(x))`
pub fn mish<T: Element>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| {
        let v = v.to_f64();
        T::from_f64(v * softplus(v).tanh())
    })
}

pub fn mish_backward<T: Element>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let v = v.to_f64();
            let t = softplus(v).tanh();
            let sig = 1.0 / (1.0 + (-v).exp());
            T::from_f64(g.to_f64() * (t + v * (1.0 - t * t) * sig))
        })
        .collect();
    Tensor4::from_parts(x.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps() {
        let x = Tensor4::<f32>::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mish_reference_values() {
        let x = Tensor4::<f64>::from_vec([1, 1, 1, 3], vec![0.0, 1.0, -1.0]).unwrap();
        let y = mish(&x);
        assert_eq!(y.data()[0], 0.0);
        // 1 * tanh(ln(1 + e))
        assert!((y.data()[1] - 0.865_098_388_3).abs() < 1e-9);
        assert!((y.data()[2] + 0.303_401_461_4).abs() < 1e-9);
    }
}
