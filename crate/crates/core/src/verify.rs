//! The property suite behind `kn verify`: naive/efficient equivalence,
//! finite-difference gradients, batch independence and the shape oracle.

use std::fmt::Write as _;
use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::element::Element;
use crate::error::{KnError, Result};
use crate::gradcheck::{check_graph, DEFAULT_STEP};
use crate::knconv::{knconv_with_mask, KnConvAlgorithm, KnConvParams, KnConvRegistry, KnConvSpec};
use crate::models::{build_network, Architecture, ForwardOpts, ModelSpec, NormKind};
use crate::norm::config::KernelNormConfig;
use crate::norm::kernel::{draw_mask, kernel_norm_output_shape};
use crate::rng::{stream_id, Rng};
use crate::tensor::Tensor4;
use crate::train::per_sample_grads;

pub const SUITES: [&str; 4] = ["equivalence", "grad", "independence", "shape"];

pub const EQUIV_TOL_F64: f64 = 1e-9;
pub const EQUIV_TOL_F32: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-5;
pub const INDEPENDENCE_TOL: f64 = 1e-5;
/// Minimum deviation the batch-norm model must show.
pub const BATCH_DEPENDENCE_MIN: f64 = 1e-3;
pub const PER_SAMPLE_TOL: f64 = 1e-6;
/// Minimum per-sample/batch gradient gap the batch-norm model must show.
pub const PER_SAMPLE_BATCH_MIN: f64 = 1e-4;

pub const GRID_KERNELS: [usize; 4] = [1, 2, 3, 5];
pub const GRID_STRIDES: [usize; 3] = [1, 2, 3];
pub const GRID_PADDINGS: [usize; 3] = [0, 1, 2];
pub const GRID_CHANNELS: [usize; 3] = [1, 3, 16];
pub const GRID_FILTERS: [usize; 2] = [1, 8];
pub const GRID_BATCHES: [usize; 2] = [1, 4];
pub const GRID_DROPOUT: [f64; 2] = [0.1, 0.5];
const GRID_EXTENT: usize = 7;

/// One checked property instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub suite: &'static str,
    pub name: String,
    /// The measured quantity; what it means depends on the suite.
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
    /// Inputs needed to reproduce the case.
    pub inputs: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub cases: Vec<Case>,
    pub suite_ms: Vec<(&'static str, u128)>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn suite(&self, suite: &str) -> impl Iterator<Item = &Case> {
        let suite = suite.to_string();
        self.cases.iter().filter(move |c| c.suite == suite)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Case> {
        self.cases.iter().filter(|c| !c.passed)
    }

    /// Worst measured value in a suite (largest error, or for dependence
    /// cases the smallest deviation is reported separately by name).
    pub fn worst(&self, suite: &str) -> Option<f64> {
        self.suite(suite).filter(|c| c.tol > 0.0).map(|c| c.value).fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }

    /// Per-suite pass/fail table followed by the inputs of failing cases.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>7} {:>7} {:>12} {:>9}  status", "suite", "cases", "failed", "worst", "ms");
        for (suite, ms) in &self.suite_ms {
            let total = self.suite(suite).count();
            let failed = self.suite(suite).filter(|c| !c.passed).count();
            let worst = self.worst(suite).map_or("-".to_string(), |w| format!("{w:.3e}"));
            let status = if failed == 0 { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{suite:<14} {total:>7} {failed:>7} {worst:>12} {ms:>9}  {status}");
        }
        for c in self.failures() {
            let _ = writeln!(s, "FAILED {}/{}: value {:.3e} vs tol {:.1e}; inputs {}", c.suite, c.name, c.value, c.tol, c.inputs);
        }
        s
    }
}

/// Which suites to run and which KNConv algorithms to hold to the reference.
#[derive(Clone)]
pub struct VerifyOptions {
    /// Substring matched against suite names.
    pub filter: Option<String>,
    pub knconv64: KnConvRegistry<f64>,
    pub knconv32: KnConvRegistry<f32>,
    /// Algorithm every other registered one is compared against.
    pub reference: String,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            filter: None,
            knconv64: KnConvRegistry::with_builtins(),
            knconv32: KnConvRegistry::with_builtins(),
            reference: "naive".into(),
            seed: 0,
        }
    }
}

impl VerifyOptions {
    pub fn with_filter(mut self, f: impl Into<String>) -> Self {
        self.filter = Some(f.into());
        self
    }

    /// Register the same algorithm for both precisions.
    pub fn register<A>(&mut self, alg: A)
    where
        A: KnConvAlgorithm<f64> + KnConvAlgorithm<f32> + Clone + 'static,
    {
        self.knconv64.register(std::sync::Arc::new(alg.clone()));
        self.knconv32.register(std::sync::Arc::new(alg));
    }

    fn wants(&self, suite: &str) -> bool {
        self.filter.as_deref().is_none_or(|f| suite.contains(f))
    }
}

pub fn run_verify(opts: &VerifyOptions) -> Result<Report> {
    let mut report = Report::default();
    if SUITES.iter().all(|s| !opts.wants(s)) {
        return Err(KnError::Unknown { kind: "verify suite", name: opts.filter.clone().unwrap_or_default() });
    }
    for suite in SUITES {
        if !opts.wants(suite) {
            continue;
        }
        let t0 = Instant::now();
        let cases = match suite {
            "equivalence" => equivalence_suite(opts)?,
            "grad" => grad_suite(opts)?,
            "independence" => independence_suite(opts.seed)?,
            _ => shape_suite()?,
        };
        report.cases.extend(cases);
        report.suite_ms.push((suite, t0.elapsed().as_millis()));
    }
    Ok(report)
}

/// `max |a - b| / max(|a|, |b|, 1)` elementwise.
pub fn max_rel_dev<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let (x, y) = (x.to_f64(), y.to_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(1.0)
        })
        .fold(0.0, f64::max)
}

/// One grid point of the equivalence suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub c: usize,
    pub f: usize,
    pub n: usize,
    pub dropout: f64,
}

impl GridPoint {
    pub fn all(dropouts: &[f64]) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &dropout in dropouts {
            for k in GRID_KERNELS {
                for s in GRID_STRIDES {
                    for p in GRID_PADDINGS {
                        for c in GRID_CHANNELS {
                            for f in GRID_FILTERS {
                                for n in GRID_BATCHES {
                                    out.push(GridPoint { k, s, p, c, f, n, dropout });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn label(&self) -> String {
        format!("k={} s={} p={} c={} f={} n={} drop={} hw={GRID_EXTENT}", self.k, self.s, self.p, self.c, self.f, self.n, self.dropout)
    }
}

/// Deviation between `alg` and `reference` at one grid point, with a shared
/// random input, parameters and dropout mask.
pub fn equivalence_at<T: Element>(
    alg: &dyn KnConvAlgorithm<T>,
    reference: &dyn KnConvAlgorithm<T>,
    g: GridPoint,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::new(seed, stream_id(&[0xe9, g.k as u64, g.s as u64, g.p as u64, g.c as u64, g.f as u64, g.n as u64]));
    let window = KernelNormConfig::square(g.k, g.s, g.p).with_dropout(g.dropout);
    let spec = KnConvSpec::new(g.c, g.f, window);
    let x = Tensor4::<T>::randn([g.n, g.c, GRID_EXTENT, GRID_EXTENT], 1.0, &mut rng)?;
    let mut params = KnConvParams::<T>::init(spec, &mut rng)?;
    if let Some(b) = params.bias.as_mut() {
        *b = Tensor4::randn(b.shape(), 0.5, &mut rng)?;
    }
    let mask = draw_mask(x.shape(), &window, &mut rng, true)?;
    let a = knconv_with_mask(alg, &x, &params, mask.clone())?;
    let b = knconv_with_mask(reference, &x, &params, mask)?;
    Ok(max_rel_dev(&a, &b))
}

fn equivalence_for<T: Element>(registry: &KnConvRegistry<T>, reference: &str, tol: f64, dtype: &str, seed: u64) -> Result<Vec<Case>> {
    let refalg = registry.get(reference)?;
    let mut cases = Vec::new();
    for name in registry.names() {
        if name == reference {
            continue;
        }
        let alg = registry.get(name)?;
        for g in GridPoint::all(&[0.0, GRID_DROPOUT[0], GRID_DROPOUT[1]]) {
            let dev = equivalence_at(alg.as_ref(), refalg.as_ref(), g, seed)?;
            cases.push(Case {
                suite: "equivalence",
                name: format!("{name}/{dtype}"),
                value: dev,
                tol,
                passed: dev <= tol,
                inputs: g.label(),
            });
        }
    }
    Ok(cases)
}

fn equivalence_suite(opts: &VerifyOptions) -> Result<Vec<Case>> {
    let mut cases = equivalence_for(&opts.knconv64, &opts.reference, EQUIV_TOL_F64, "f64", opts.seed)?;
    cases.extend(equivalence_for(&opts.knconv32, &opts.reference, EQUIV_TOL_F32, "f32", opts.seed)?);
    Ok(cases)
}

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// A named differentiable computation and the inputs it is checked at.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor4<f64>>,
    pub build: Builder,
}

fn randn(shape: [usize; 4], std: f64, rng: &mut Rng) -> Tensor4<f64> {
    Tensor4::randn(shape, std, rng).expect("valid shape")
}

/// Reduce `v` to a scalar against a fixed random probe so every output
/// element contributes.
fn probe(t: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = t.value(v).shape();
    let w = Tensor4::randn(shape, 1.0, &mut Rng::new(seed, 0x9b0))?;
    t.weighted_sum(v, w)
}

/// Every layer of the framework, each small enough to check elementwise.
pub fn grad_cases(registry: &KnConvRegistry<f64>, seed: u64) -> Vec<GradCase> {
    let mut rng = Rng::new(seed, 0x96ad);
    let mut cases: Vec<GradCase> = Vec::new();
    let mut add = |name: &str, inputs: Vec<Tensor4<f64>>, build: Builder| cases.push(GradCase { name: name.to_string(), inputs, build });
    let x = randn([2, 3, 6, 6], 1.0, &mut rng);
    let w = randn([4, 3, 3, 3], 0.4, &mut rng);
    let b = randn([1, 4, 1, 1], 0.3, &mut rng);
    add(
        "conv2d",
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), (2, 1), (1, 0))?;
            probe(t, y, 1)
        }),
    );
    add(
        "relu",
        vec![x.clone()],
        Box::new(|t, v| {
            let y = t.relu(v[0]);
            probe(t, y, 2)
        }),
    );
    add(
        "mish",
        vec![x.clone()],
        Box::new(|t, v| {
            let y = t.mish(v[0]);
            probe(t, y, 3)
        }),
    );
    add(
        "max_pool",
        vec![x.clone()],
        Box::new(|t, v| {
            let y = t.max_pool(v[0], (3, 3), (2, 2), (1, 1))?;
            probe(t, y, 4)
        }),
    );
    add(
        "avg_pool",
        vec![x.clone()],
        Box::new(|t, v| {
            let y = t.avg_pool(v[0], (2, 2), (2, 2))?;
            probe(t, y, 5)
        }),
    );
    add(
        "adaptive_avg_pool",
        vec![randn([2, 3, 5, 5], 1.0, &mut rng)],
        Box::new(|t, v| {
            let y = t.adaptive_avg_pool(v[0], 2, 2)?;
            probe(t, y, 6)
        }),
    );
    let lw = randn([5, 12, 1, 1], 0.3, &mut rng);
    let lb = randn([1, 5, 1, 1], 0.1, &mut rng);
    add(
        "linear+cross_entropy",
        vec![randn([3, 3, 2, 2], 1.0, &mut rng), lw, lb],
        Box::new(|t, v| {
            let f = t.flatten(v[0])?;
            let y = t.linear(f, v[1], Some(v[2]))?;
            t.softmax_cross_entropy(y, &[0, 4, 2])
        }),
    );
    add(
        "add+mul+sub+scale",
        vec![randn([1, 2, 3, 3], 1.0, &mut rng), randn([1, 2, 3, 3], 1.0, &mut rng)],
        Box::new(|t, v| {
            let a = t.add(v[0], v[1])?;
            let m = t.mul(a, v[0])?;
            let s = t.sub(m, v[1])?;
            let y = t.scale(s, 0.7);
            probe(t, y, 7)
        }),
    );
    for (name, cfg) in [
        ("kernel_norm k2s2", KernelNormConfig::square(2, 2, 0)),
        ("kernel_norm k3s1p1", KernelNormConfig::square(3, 1, 1)),
        ("kernel_norm k2s3p1", KernelNormConfig::square(2, 3, 1)),
    ] {
        add(
            name,
            vec![x.clone()],
            Box::new(move |t, v| {
                let y = t.kernel_norm(v[0], &cfg, None)?;
                probe(t, y, 8)
            }),
        );
    }
    let cfg = KernelNormConfig::square(2, 1, 1).with_dropout(0.3);
    let mask: Tensor4<f64> = draw_mask(x.shape(), &cfg, &mut rng, true).expect("mask").expect("dropout active");
    {
        let mask = mask.clone();
        add(
            "kernel_norm dropout",
            vec![x.clone()],
            Box::new(move |t, v| {
                let y = t.kernel_norm(v[0], &cfg, Some(mask.clone()))?;
                probe(t, y, 9)
            }),
        );
    }
    {
        let mask = mask.clone();
        add(
            "kn_mean_var dropout",
            vec![x.clone()],
            Box::new(move |t, v| {
                let (m, s) = t.kn_mean_var(v[0], &cfg, Some(mask.clone()))?;
                let a = probe(t, m, 10)?;
                let b = probe(t, s, 11)?;
                t.add(a, b)
            }),
        );
    }
    for name in registry.names() {
        let alg = registry.get(name).expect("registered");
        for (label, window, m) in [
            ("k3s1p1", KernelNormConfig::square(3, 1, 1), None),
            ("k2s2", KernelNormConfig::square(2, 2, 0), None),
            ("k2s1p1 dropout", cfg, Some(mask.clone())),
        ] {
            let spec = KnConvSpec::new(3, 4, window);
            let w = randn([4, 3, window.kernel.0, window.kernel.1], 0.4, &mut rng);
            let alg = alg.clone();
            add(
                &format!("knconv {name} {label}"),
                vec![x.clone(), w, b.clone()],
                Box::new(move |t, v| {
                    let y = alg.apply(t, v[0], v[1], Some(v[2]), &spec, m.clone())?;
                    probe(t, y, 12)
                }),
            );
        }
    }
    let xn = randn([3, 4, 3, 3], 1.0, &mut rng);
    let gamma = randn([1, 4, 1, 1], 0.5, &mut rng).add_scalar(1.0);
    let beta = randn([1, 4, 1, 1], 0.5, &mut rng);
    for (name, groups) in [("group_norm", 2usize), ("layer_norm", 1), ("instance_norm", 4)] {
        add(
            name,
            vec![xn.clone(), gamma.clone(), beta.clone()],
            Box::new(move |t, v| {
                let y = t.group_norm(v[0], groups, v[1], v[2], 1e-5)?;
                probe(t, y, 13)
            }),
        );
    }
    add(
        "batch_norm train",
        vec![xn.clone(), gamma.clone(), beta.clone()],
        Box::new(|t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], 1e-5)?;
            probe(t, y, 14)
        }),
    );
    let rm = randn([1, 4, 1, 1], 0.2, &mut rng);
    let rv = randn([1, 4, 1, 1], 0.2, &mut rng).map(|v| v.abs() + 0.5);
    add(
        "batch_norm eval",
        vec![xn, gamma, beta],
        Box::new(move |t, v| {
            let y = t.batch_norm_eval(v[0], v[1], v[2], &rm, &rv, 1e-5)?;
            probe(t, y, 15)
        }),
    );
    cases
}

fn grad_suite(opts: &VerifyOptions) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    for gc in grad_cases(&opts.knconv64, opts.seed) {
        let reports = check_graph(&gc.inputs, DEFAULT_STEP, |t, v| (gc.build)(t, v))?;
        for (i, r) in reports.iter().enumerate() {
            out.push(Case {
                suite: "grad",
                name: format!("{} d/input{i}", gc.name),
                value: r.rel_error,
                tol: GRAD_TOL,
                passed: r.passes(GRAD_TOL) && r.elements <= 1000,
                inputs: format!("shape {} max_abs_diff {:.3e}", gc.inputs[i].shape(), r.max_abs_diff),
            });
        }
    }
    Ok(out)
}

/// Largest deviation between processing `x` as one batch and as two halves,
/// with per-sample dropout streams held fixed.
pub fn batch_composition_deviation(norm: NormKind, training: bool, seed: u64) -> Result<f64> {
    let spec = ModelSpec::new(Architecture::ResNet8, norm, 10).with_input(3, 16, 16).with_width_divisor(8);
    let mut net = build_network::<f64>(&spec, seed)?;
    let x = Tensor4::<f64>::randn([4, 3, 16, 16], 1.0, &mut Rng::new(seed, 0x1d))?;
    let ids: Vec<u64> = (0..4).collect();
    let opts = |ids| ForwardOpts { training, seed, step: 1, sample_ids: Some(ids) };
    let whole = net.run(&x, &opts(&ids))?;
    let a = net.run(&x.slice_batch(0..2)?, &opts(&ids[..2]))?;
    let b = net.run(&x.slice_batch(2..4)?, &opts(&ids[2..]))?;
    Ok(max_rel_dev(&whole, &Tensor4::concat_batch(&[&a, &b])?))
}

/// Normwise gap `|mean_i g_i - g| / max(|mean_i g_i|, |g|)` between the
/// mean of per-sample gradients and the batch gradient, in training mode.
pub fn per_sample_deviation(norm: NormKind, seed: u64) -> Result<f64> {
    let spec = ModelSpec::new(Architecture::ResNet8, norm, 10).with_input(3, 16, 16).with_width_divisor(8);
    let mut net = build_network::<f64>(&spec, seed)?;
    let x = Tensor4::<f64>::randn([4, 3, 16, 16], 1.0, &mut Rng::new(seed, 0x9e))?;
    let labels = [1, 7, 3, 3];
    let opts = ForwardOpts::train(seed, 1);
    let per = per_sample_grads(&mut net, &x, &labels, &opts)?;
    let batch = net.loss_and_grads(&x, &labels, &opts)?.grads;
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (name, g) in batch.iter() {
        for (i, &v) in g.data().iter().enumerate() {
            let mean = per.iter().map(|lg| lg.grads.get(name).map(|t| t.data()[i])).sum::<Result<f64>>()? / per.len() as f64;
            diff += (mean - v).powi(2);
            na += mean * mean;
            nb += v * v;
        }
    }
    let scale = f64::max(na, nb).sqrt();
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

fn independence_suite(seed: u64) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    let group = NormKind::Group { group_size: crate::models::DEFAULT_GROUP_SIZE };
    for (kind, training) in
        [(NormKind::Kernel, true), (group, true), (NormKind::Layer, true), (NormKind::Instance, true), (NormKind::Batch, false)]
    {
        let dev = batch_composition_deviation(kind, training, seed)?;
        out.push(Case {
            suite: "independence",
            name: format!("{kind} {}", if training { "train" } else { "eval" }),
            value: dev,
            tol: INDEPENDENCE_TOL,
            passed: dev <= INDEPENDENCE_TOL,
            inputs: format!("resnet8/8 input (4,3,16,16) split 2+2 seed {seed}"),
        });
    }
    let dev = batch_composition_deviation(NormKind::Batch, true, seed)?;
    out.push(Case {
        suite: "independence",
        name: "batch train (must depend)".into(),
        value: dev,
        tol: 0.0,
        passed: dev >= BATCH_DEPENDENCE_MIN,
        inputs: format!("deviation must be at least {BATCH_DEPENDENCE_MIN:.0e}; seed {seed}"),
    });
    for kind in [NormKind::Kernel, group, NormKind::Layer, NormKind::Instance] {
        let dev = per_sample_deviation(kind, seed)?;
        out.push(Case {
            suite: "independence",
            name: format!("per-sample grads {kind}"),
            value: dev,
            tol: PER_SAMPLE_TOL,
            passed: dev <= PER_SAMPLE_TOL,
            inputs: format!("resnet8/8 batch (4,3,16,16) seed {seed}"),
        });
    }
    let dev = per_sample_deviation(NormKind::Batch, seed)?;
    out.push(Case {
        suite: "independence",
        name: "per-sample grads batch (must differ)".into(),
        value: dev,
        tol: 0.0,
        passed: dev >= PER_SAMPLE_BATCH_MIN,
        inputs: format!("gap must be at least {PER_SAMPLE_BATCH_MIN:.0e}; seed {seed}"),
    });
    Ok(out)
}

/// Window positions along one axis by walking the padded extent.
pub fn enumerate_windows(extent: usize, k: usize, s: usize, p: usize) -> usize {
    let mut count = 0;
    let mut start = 0;
    while start + k <= extent + 2 * p {
        count += 1;
        start += s;
    }
    count
}

fn shape_suite() -> Result<Vec<Case>> {
    let mut mismatches = Vec::new();
    let mut checked = 0usize;
    for h in 1..=16 {
        for w in 1..=16 {
            for kh in 1..=5 {
                for kw in 1..=5 {
                    for s in 1..=4 {
                        for p in 0..=2 {
                            checked += 1;
                            let cfg = KernelNormConfig::new((kh, kw), (s, s), (p, p));
                            let (nh, nw) = (enumerate_windows(h, kh, s, p), enumerate_windows(w, kw, s, p));
                            let got = kernel_norm_output_shape(h, w, &cfg).ok();
                            let want = (nh > 0 && nw > 0).then_some((kh * nh, kw * nw));
                            if got != want {
                                mismatches.push(format!("h={h} w={w} k=({kh},{kw}) s={s} p={p}: {got:?} vs {want:?}"));
                            }
                        }
                    }
                }
            }
        }
    }
    // the layer itself must produce the predicted shape
    let mut rng = Rng::new(0, 0x5a);
    for h in [1usize, 4, 7, 16] {
        for k in 1..=5 {
            for s in 1..=4 {
                for p in 0..=2 {
                    let cfg = KernelNormConfig::square(k, s, p);
                    let Ok(want) = kernel_norm_output_shape(h, h, &cfg) else {
                        continue;
                    };
                    checked += 1;
                    let x = Tensor4::<f64>::randn([1, 2, h, h], 1.0, &mut rng)?;
                    let y = crate::norm::kernel::kernel_norm(&x, &cfg, &mut rng, false)?;
                    if (y.shape().h, y.shape().w) != want {
                        mismatches.push(format!("layer h={h} k={k} s={s} p={p}: {} vs {want:?}", y.shape()));
                    }
                }
            }
        }
    }
    Ok(vec![Case {
        suite: "shape",
        name: format!("{checked} configurations"),
        value: mismatches.len() as f64,
        tol: 0.0,
        passed: mismatches.is_empty(),
        inputs: mismatches.into_iter().take(5).collect::<Vec<_>>().join("; "),
    }])
}
