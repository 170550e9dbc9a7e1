//! The work behind each subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kn_core::data::{self, load_cifar, noniid_partition, stratified_split, stratified_subset, synth_dataset, CifarKind, Dataset, Split};
use kn_core::element::{DType, Element};
use kn_core::knconv::{bench_knconv, BenchReport, KnConvSpec};
use kn_core::models::{build_network, save_checkpoint, Manifest};
use kn_core::norm::config::KernelNormConfig;
use kn_core::rng::{stream_id, Rng};
use kn_core::tensor::Shape4;
use kn_core::train::{run_federated, train_centralized, train_dp, Summary, TrainOutcome};
use kn_core::verify::{run_verify, Report, VerifyOptions};

use crate::config::{DataSource, DataSpec, Regime, RunConfig, UsageError};

const DATA_TAG: u64 = 0xda7a;
const PARTITION_TAG: u64 = 0x9a27;

/// Train split plus the optional held-out split.
pub fn load_data(spec: &DataSpec, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    let mut rng = Rng::new(seed, stream_id(&[DATA_TAG]));
    match spec.source {
        DataSource::Synth { classes, per_class, size } => {
            let extra = spec.holdout.div_ceil(classes);
            let all = synth_dataset(classes, per_class + extra, (3, size, size), &mut rng)?;
            let (train, eval) = stratified_split(&all, classes * per_class, spec.holdout, &mut rng)?;
            let eval = (spec.holdout > 0).then(|| all.subset(&eval)).transpose()?;
            Ok((all.subset(&train)?, eval))
        }
        DataSource::Cifar10 | DataSource::Cifar100 => {
            let kind = if spec.source == DataSource::Cifar10 { CifarKind::Cifar10 } else { CifarKind::Cifar100 };
            let root = data::data_dir().ok_or_else(|| {
                UsageError(format!("{} is not set; point it at a directory holding the CIFAR binary archives", data::DATA_DIR_ENV))
            })?;
            let full = load_cifar(&root, kind, Split::Train)?;
            let train = if spec.subset == 0 || spec.subset >= full.len() {
                full
            } else {
                full.subset(&stratified_subset(&full, spec.subset, &mut rng)?)?
            };
            let eval = if spec.holdout == 0 {
                None
            } else {
                let test = load_cifar(&root, kind, Split::Test)?;
                Some(if spec.holdout >= test.len() { test } else { test.subset(&stratified_subset(&test, spec.holdout, &mut rng)?)? })
            };
            Ok((train, eval))
        }
    }
}

/// What a training command leaves behind.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: Summary,
    pub out: PathBuf,
}

impl RunResult {
    pub fn diverged(&self) -> bool {
        self.summary.diverged.is_some()
    }
}

/// Run a resolved train/fed/dp configuration and write its artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    match cfg.dtype {
        DType::F32 => run_typed::<f32>(cfg),
        DType::F64 => run_typed::<f64>(cfg),
    }
}

fn run_typed<T: Element>(cfg: &RunConfig) -> Result<RunResult> {
    let (train, eval) = load_data(&cfg.data, cfg.seed)?;
    let mut net = build_network::<T>(&cfg.model, cfg.seed)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_json(&cfg.out.join("config.json"), cfg)?;

    let outcome: TrainOutcome = match &cfg.regime {
        Regime::Train(c) => train_centralized(&mut net, &train, eval.as_ref(), c)?,
        Regime::Fed { fed, clients, labels_per_client } => {
            let mut rng = Rng::new(cfg.seed, stream_id(&[PARTITION_TAG]));
            let shards = noniid_partition(&train, *clients, *labels_per_client, &mut rng)?;
            run_federated(&mut net, &train, &shards, eval.as_ref(), fed)?
        }
        Regime::Dp(c) => train_dp(&mut net, &train, eval.as_ref(), c)?,
    };
    let summary = outcome.metrics.write_all(&cfg.out, outcome.diverged.clone())?;
    save_checkpoint(cfg.out.join("checkpoint"), &net, Manifest::new(&cfg.model, cfg.seed, outcome.steps, cfg.dtype))?;
    Ok(RunResult { summary, out: cfg.out.clone() })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Run the property suites and print the table (and any failing inputs).
pub fn verify(opts: &VerifyOptions, out: &mut dyn Write) -> Result<Report> {
    let report = run_verify(opts)?;
    write!(out, "{}", report.table())?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub shape: [usize; 4],
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub repeats: usize,
    pub dtype: DType,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for BenchArgs {
    fn default() -> Self {
        BenchArgs {
            shape: [8, 64, 32, 32],
            filters: 64,
            kernel: 3,
            stride: 1,
            padding: 1,
            repeats: 5,
            dtype: DType::F32,
            seed: 0,
            out: PathBuf::from("kn-out"),
        }
    }
}

/// Time both KNConv algorithms and write `bench.json`.
pub fn bench(args: &BenchArgs) -> Result<BenchReport> {
    let [n, c, h, w] = args.shape;
    let window = KernelNormConfig::square(args.kernel, args.stride, args.padding);
    let spec = KnConvSpec::new(c, args.filters, window);
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let shape = Shape4::new(n, c, h, w);
    spec.output_shape(shape).map_err(|e| UsageError(e.to_string()))?;
    let report = match args.dtype {
        DType::F32 => bench_knconv::<f32>(shape, spec, args.repeats, args.seed)?,
        DType::F64 => bench_knconv::<f64>(shape, spec, args.repeats, args.seed)?,
    };
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("bench.json"), &report)?;
    Ok(report)
}
