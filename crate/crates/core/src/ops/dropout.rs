use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{KnError, Result};
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};

/// How surviving elements of a dropout mask are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutScaling {
    /// Survivors scaled by `1 / (1 - p)`.
    #[default]
    Inverted,
    /// Survivors kept as-is.
    Plain,
}

fn keep_value<T: Element>(p: f64, scaling: DropoutScaling) -> T {
    match scaling {
        DropoutScaling::Inverted => T::from_f64(1.0 / (1.0 - p)),
        DropoutScaling::Plain => T::ONE,
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(KnError::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    Ok(())
}

/// Multiplicative dropout mask drawn from a single stream.
pub fn dropout_mask<T: Element>(shape: impl Into<Shape4>, p: f64, rng: &mut Rng, scaling: DropoutScaling) -> Result<Tensor4<T>> {
    check_p(p)?;
    let shape = shape.into();
    shape.validate()?;
    let keep = keep_value(p, scaling);
    let data = (0..shape.numel()).map(|_| if rng.bernoulli(p) { T::ZERO } else { keep }).collect();
    Tensor4::from_vec(shape, data)
}

/// Dropout mask where row `i` of the batch is drawn from `stream_for(i)`.
pub fn dropout_mask_per_sample<T: Element>(
    shape: impl Into<Shape4>,
    p: f64,
    mut stream_for: impl FnMut(usize) -> Rng,
    scaling: DropoutScaling,
) -> Result<Tensor4<T>> {
    check_p(p)?;
    let shape = shape.into();
    shape.validate()?;
    let keep = keep_value(p, scaling);
    let mut data = Vec::with_capacity(shape.numel());
    for i in 0..shape.n {
        let mut rng = stream_for(i);
        data.extend((0..shape.sample_len()).map(|_| if rng.bernoulli(p) { T::ZERO } else { keep }));
    }
    Tensor4::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverted_scaling_values() {
        let mut rng = Rng::new(3, 9);
        let m = dropout_mask::<f64>([2, 3, 4, 4], 0.5, &mut rng, DropoutScaling::Inverted).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(m.data().contains(&0.0));
    }

    #[test]
    fn same_stream_same_mask() {
        let a = dropout_mask::<f32>([1, 4, 8, 8], 0.3, &mut Rng::new(11, 5), DropoutScaling::Inverted).unwrap();
        let b = dropout_mask::<f32>([1, 4, 8, 8], 0.3, &mut Rng::new(11, 5), DropoutScaling::Inverted).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_probability_keeps_everything() {
        let m = dropout_mask::<f64>([1, 1, 5, 5], 0.0, &mut Rng::new(0, 0), DropoutScaling::Inverted).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_p_of_one() {
        assert!(dropout_mask::<f64>([1, 1, 1, 1], 1.0, &mut Rng::new(0, 0), DropoutScaling::Plain).is_err());
    }
}
