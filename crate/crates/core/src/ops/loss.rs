use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor4;

/// Mean softmax cross-entropy of `logits` (`n` rows of `k` classes) against
/// integer `labels`. Also returns the softmax probabilities for backward.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = logits.shape().n;
    let k = logits.shape().sample_len();
    if labels.len() != n {
        return Err(shape_err("softmax_cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    let mut probs = vec![0.0; n * k];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(shape_err("softmax_cross_entropy", format!("label {y} >= {k} classes")));
        }
        let row = logits.sample(i);
        let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
            *p = (v.to_f64() - max).exp();
            z += *p;
        }
        probs[i * k..(i + 1) * k].iter_mut().for_each(|p| *p /= z);
        total += -(row[y].to_f64() - max - z.ln());
    }
    Ok((total / n as f64, probs))
}

/// Index of the largest logit per row.
pub fn argmax_rows<T: Element>(logits: &Tensor4<T>) -> Vec<usize> {
    let n = logits.shape().n;
    (0..n)
        .map(|i| {
            let row = logits.sample(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let x = Tensor4::<f64>::zeros([3, 4, 1, 1]).unwrap();
        let (loss, probs) = softmax_cross_entropy(&x, &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(probs.iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn stable_for_large_logits() {
        let x = Tensor4::<f32>::from_vec([1, 2, 1, 1], vec![1000.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&x, &[0]).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn bad_label() {
        let x = Tensor4::<f32>::zeros([1, 2, 1, 1]).unwrap();
        assert!(softmax_cross_entropy(&x, &[2]).is_err());
    }
}
