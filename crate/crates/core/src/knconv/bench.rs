//! Wall-clock comparison of the KNConv algorithms.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::element::Element;
use crate::error::{KnError, Result};
use crate::knconv::{Efficient, KnConvAlgorithm, KnConvParams, KnConvSpec, Naive};
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchParams {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub shape: [usize; 4],
    pub params: BenchParams,
    /// Median forward time.
    pub naive_ms: f64,
    pub efficient_ms: f64,
    /// `naive_ms / efficient_ms`.
    pub speedup: f64,
    pub dtype: String,
    pub repeats: usize,
    pub naive_fwd_bwd_ms: f64,
    pub efficient_fwd_bwd_ms: f64,
    pub fwd_bwd_speedup: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn time_ms(mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

fn forward<T: Element>(alg: &dyn KnConvAlgorithm<T>, x: &Tensor4<T>, p: &KnConvParams<T>, grads: bool) -> Result<()> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), grads);
    let wv = tape.leaf(p.weights.clone(), grads);
    let bv = p.bias.as_ref().map(|b| tape.leaf(b.clone(), grads));
    let out = alg.apply(&mut tape, xv, wv, bv, &p.spec, None)?;
    if grads {
        let s = tape.sum(out);
        tape.backward(s)?;
    }
    std::hint::black_box(tape.value(out).data()[0]);
    Ok(())
}

/// Median wall time of both algorithms on random data, dropout off.
pub fn bench_knconv<T: Element>(shape: Shape4, spec: KnConvSpec, repeats: usize, seed: u64) -> Result<BenchReport> {
    if repeats < 3 {
        return Err(KnError::Config("bench needs at least 3 repeats".into()));
    }
    let mut rng = Rng::new(seed, 0);
    let x = Tensor4::<T>::randn(shape, 1.0, &mut rng)?;
    let params = KnConvParams::<T>::init(spec, &mut rng)?;
    spec.output_shape(shape)?;
    let (naive, eff): (&dyn KnConvAlgorithm<T>, &dyn KnConvAlgorithm<T>) = (&Naive, &Efficient);
    let mut runs = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    // Interleave so drift affects both paths alike.
    for _ in 0..repeats {
        runs[0].push(time_ms(|| forward(naive, &x, &params, false))?);
        runs[1].push(time_ms(|| forward(eff, &x, &params, false))?);
        runs[2].push(time_ms(|| forward(naive, &x, &params, true))?);
        runs[3].push(time_ms(|| forward(eff, &x, &params, true))?);
    }
    let [a, b, c, d] = runs.map(median);
    Ok(BenchReport {
        shape: shape.dims(),
        params: BenchParams { filters: spec.ch_out, kernel: spec.window.kernel, stride: spec.window.stride, padding: spec.window.padding },
        naive_ms: a,
        efficient_ms: b,
        speedup: a / b,
        dtype: T::DTYPE.name().to_string(),
        repeats,
        naive_fwd_bwd_ms: c,
        efficient_fwd_bwd_ms: d,
        fwd_bwd_speedup: c / d,
    })
}
