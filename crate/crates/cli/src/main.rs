use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kn_cli::{exit, BenchArgs, Command, RunConfig, Settings, UsageError};
use kn_core::element::DType;
use kn_core::verify::VerifyOptions;

#[derive(Parser)]
#[command(name = "kn", version, about = "Kernel-normalized networks: verification, benchmarks and training")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run the property suites and print a pass/fail table.
    Verify {
        /// Only suites whose name contains this (equivalence, grad, independence, shape).
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Centralized SGD.
    Train(RunArgs),
    /// FederatedAveraging over label-skewed client shards.
    Fed(RunArgs),
    /// SGD with clipped, noised per-sample gradients.
    Dp(RunArgs),
    /// Time naive against efficient KNConv and write bench.json.
    Bench(BenchFlags),
    /// List the named presets.
    Presets,
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON file with any of the flag names (underscored) as keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// vgg9, resnet8, preact-resnet18 or resnet18
    #[arg(long)]
    arch: Option<String>,
    /// batch, group, group:N, layer, instance or kernel
    #[arg(long)]
    norm: Option<String>,
    /// synth, cifar10 or cifar100 (CIFAR is read from $KN_DATA_DIR)
    #[arg(long)]
    data: Option<String>,
    /// f32 or f64
    #[arg(long)]
    dtype: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// constant, cosine or halving:E1,E2
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    labels_per_client: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    /// Per-sample clip norm; negative disables clipping.
    #[arg(long, allow_hyphen_values = true)]
    clip: Option<f64>,
    /// Noise multiplier (std of the added noise is noise * clip).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    width_divisor: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    synth_classes: Option<usize>,
    #[arg(long)]
    synth_per_class: Option<usize>,
    #[arg(long)]
    synth_size: Option<usize>,
}

impl RunArgs {
    fn settings(&self) -> Settings {
        Settings {
            preset: self.preset.clone(),
            arch: self.arch.clone(),
            norm: self.norm.clone(),
            data: self.data.clone(),
            dtype: self.dtype.clone(),
            epochs: self.epochs,
            rounds: self.rounds,
            batch: self.batch,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: self.schedule.clone(),
            seed: self.seed,
            out: self.out.clone(),
            clients: self.clients,
            labels_per_client: self.labels_per_client,
            local_epochs: self.local_epochs,
            clip: self.clip,
            noise: self.noise,
            width_divisor: self.width_divisor,
            dropout: self.dropout,
            subset: self.subset,
            holdout: self.holdout,
            augment: self.augment,
            synth_classes: self.synth_classes,
            synth_per_class: self.synth_per_class,
            synth_size: self.synth_size,
        }
    }
}

#[derive(Args)]
struct BenchFlags {
    /// Input shape as N,C,H,W.
    #[arg(long, default_value = "8,64,32,32", value_delimiter = ',')]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    filters: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1)]
    padding: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value = "f32")]
    dtype: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "kn-out")]
    out: PathBuf,
}

fn fail(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    if e.downcast_ref::<UsageError>().is_some() {
        ExitCode::from(exit::USAGE)
    } else {
        ExitCode::from(exit::FAILED)
    }
}

fn run_command(cmd: Command, args: &RunArgs) -> ExitCode {
    let file = match &args.config {
        Some(p) => match Settings::load(p) {
            Ok(s) => s,
            Err(e) => return fail(e.into()),
        },
        None => Settings::default(),
    };
    let cfg = match RunConfig::resolve(cmd, &file, &args.settings()) {
        Ok(c) => c,
        Err(e) => return fail(e.into()),
    };
    match kn_cli::run(&cfg) {
        Ok(r) => {
            println!("{}", serde_json::to_string_pretty(&r.summary).unwrap_or_default());
            println!("artifacts in {}", r.out.display());
            if let Some(why) = &r.summary.diverged {
                eprintln!("diverged: {why}");
                return ExitCode::from(exit::FAILED);
            }
            ExitCode::from(exit::OK)
        }
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Sub::Verify { filter, seed } => {
            let mut opts = VerifyOptions { seed, ..VerifyOptions::default() };
            opts.filter = filter;
            match kn_cli::verify(&opts, &mut std::io::stdout()) {
                Ok(r) if r.passed() => ExitCode::from(exit::OK),
                Ok(_) => ExitCode::from(exit::FAILED),
                Err(e) => fail(e),
            }
        }
        Sub::Train(a) => run_command(Command::Train, &a),
        Sub::Fed(a) => run_command(Command::Fed, &a),
        Sub::Dp(a) => run_command(Command::Dp, &a),
        Sub::Bench(b) => {
            let Ok(shape) = <[usize; 4]>::try_from(b.shape.as_slice()) else {
                return fail(UsageError(format!("--shape needs four values N,C,H,W, got {:?}", b.shape)).into());
            };
            let dtype: DType = match b.dtype.parse() {
                Ok(d) => d,
                Err(e) => return fail(UsageError(e).into()),
            };
            let args = BenchArgs {
                shape,
                filters: b.filters,
                kernel: b.kernel,
                stride: b.stride,
                padding: b.padding,
                repeats: b.repeats,
                dtype,
                seed: b.seed,
                out: b.out,
            };
            match kn_cli::bench(&args) {
                Ok(r) => {
                    println!("forward: naive {:.2} ms, efficient {:.2} ms, speedup {:.2}x", r.naive_ms, r.efficient_ms, r.speedup);
                    println!(
                        "forward+backward: naive {:.2} ms, efficient {:.2} ms, speedup {:.2}x",
                        r.naive_fwd_bwd_ms, r.efficient_fwd_bwd_ms, r.fwd_bwd_speedup
                    );
                    ExitCode::from(exit::OK)
                }
                Err(e) => fail(e),
            }
        }
        Sub::Presets => {
            for n in kn_cli::presets::names() {
                println!("{n}");
            }
            ExitCode::from(exit::OK)
        }
    }
}
