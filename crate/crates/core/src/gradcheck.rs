//! Central finite-difference gradient checking against the tape.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor4;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Comparison of an analytic gradient against finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    /// `|a - n| / max(|a|, |n|)` over the whole gradient (2-norms).
    pub rel_error: f64,
    /// Largest elementwise absolute difference.
    pub max_abs_diff: f64,
    pub elements: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_error <= tol
    }
}

pub fn compare(analytic: &Tensor4<f64>, numeric: &Tensor4<f64>) -> GradReport {
    let mut diff2 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        diff2 += (a - n) * (a - n);
        max_abs = max_abs.max((a - n).abs());
    }
    let scale = analytic.sq_norm_f64().sqrt().max(numeric.sq_norm_f64().sqrt());
    let rel_error = if scale == 0.0 { diff2.sqrt() } else { diff2.sqrt() / scale };
    GradReport { rel_error, max_abs_diff: max_abs, elements: analytic.numel() }
}

/// Central differences of a scalar function at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&Tensor4<f64>) -> Result<f64>, x: &Tensor4<f64>, step: f64) -> Result<Tensor4<f64>> {
    let mut g = x.zeros_like();
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(g)
}

/// Check the gradient of a graph with respect to each of `inputs`.
///
/// `build` receives a fresh tape and one trainable leaf per input and must
/// return a scalar. Non-scalar outputs can be reduced with
/// [`Tape::weighted_sum`] against a fixed random tensor.
pub fn check_graph(inputs: &[Tensor4<f64>], step: f64, build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<Vec<GradReport>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let mut reports = Vec::with_capacity(inputs.len());
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| inputs[k].zeros_like());
        let numeric = numeric_gradient(
            |probe| {
                let mut t = Tape::new();
                let vs: Vec<Var> =
                    inputs.iter().enumerate().map(|(j, x)| t.constant(if j == k { probe.clone() } else { x.clone() })).collect();
                let r = build(&mut t, &vs)?;
                Ok(t.value(r).data()[0])
            },
            &inputs[k],
            step,
        )?;
        reports.push(compare(&analytic, &numeric));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn quadratic_gradient_is_two_x() {
        let x = Tensor4::vector(vec![1.0, -2.0, 0.5]).unwrap();
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let sq = t.mul(v, v).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap(), &x.scale(2.0));
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor4::vector(vec![1.0, 2.0]).unwrap();
        let wrong = Tensor4::vector(vec![1.0, 1.0]).unwrap();
        let num = numeric_gradient(|p| Ok(p.sq_norm_f64()), &x, DEFAULT_STEP).unwrap();
        assert!(!compare(&wrong, &num).passes(1e-5));
        assert!(compare(&x.scale(2.0), &num).passes(1e-8));
    }

    #[test]
    fn composite_graph_passes() {
        let mut rng = Rng::new(5, 0);
        let x = Tensor4::randn([2, 2, 4, 4], 1.0, &mut rng).unwrap();
        let w = Tensor4::randn([3, 2, 3, 3], 0.5, &mut rng).unwrap();
        let probe = Tensor4::randn([2, 3, 2, 2], 1.0, &mut rng).unwrap();
        let reports = check_graph(&[x, w], DEFAULT_STEP, |t, v| {
            let c = t.conv2d(v[0], v[1], None, (1, 1), (1, 1))?;
            let m = t.mish(c);
            let p = t.avg_pool(m, (2, 2), (2, 2))?;
            t.weighted_sum(p, probe.clone())
        })
        .unwrap();
        for r in reports {
            assert!(r.passes(1e-5), "{r:?}");
        }
    }
}
