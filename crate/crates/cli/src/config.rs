//! Layered run settings: preset, then JSON config file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use kn_core::data::{Normalization, PreprocessSpec};
use kn_core::element::DType;
use kn_core::models::{build_network, Architecture, ModelSpec, NormKind};
use kn_core::train::{DpConfig, DpTrainConfig, FedConfig, Schedule, SgdConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::presets;

/// A usage or configuration problem, reported before any compute.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

/// Every knob a run accepts. Unset fields fall through to the layer below.
///
/// The JSON config file uses exactly these keys, for example
/// `{"arch": "resnet8", "norm": "group:16", "lr": 0.05, "epochs": 15}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub preset: Option<String>,
    pub arch: Option<String>,
    /// batch, group, group:N, layer, instance or kernel
    pub norm: Option<String>,
    /// synth, cifar10 or cifar100
    pub data: Option<String>,
    pub dtype: Option<String>,
    pub epochs: Option<usize>,
    pub rounds: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    /// constant, cosine or halving:E1,E2,...
    pub schedule: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub clients: Option<usize>,
    pub labels_per_client: Option<usize>,
    pub local_epochs: Option<usize>,
    /// Per-sample clip norm; a negative value means unclipped.
    pub clip: Option<f64>,
    pub noise: Option<f64>,
    pub width_divisor: Option<usize>,
    pub dropout: Option<f64>,
    /// Training samples drawn (stratified) from the train split; 0 keeps all.
    pub subset: Option<usize>,
    /// Held-out evaluation samples; 0 disables evaluation.
    pub holdout: Option<usize>,
    pub augment: Option<bool>,
    pub synth_classes: Option<usize>,
    pub synth_per_class: Option<usize>,
    pub synth_size: Option<usize>,
}

macro_rules! overlay_fields {
    ($low:ident, $high:ident; $($f:ident),*) => {
        Settings { $($f: $high.$f.clone().or_else(|| $low.$f.clone()),)* }
    };
}

impl Settings {
    /// `self` with every field that `top` sets replaced.
    pub fn overlay(&self, top: &Settings) -> Settings {
        overlay_fields!(self, top; preset, arch, norm, data, dtype, epochs, rounds, batch, lr, momentum,
            weight_decay, schedule, seed, out, clients, labels_per_client, local_epochs, clip, noise,
            width_divisor, dropout, subset, holdout, augment, synth_classes, synth_per_class, synth_size)
    }

    pub fn from_json(text: &str) -> Result<Settings, UsageError> {
        serde_json::from_str(text).map_err(|e| UsageError(format!("bad config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Settings, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Fed,
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synth { classes: usize, per_class: usize, size: usize },
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub source: DataSource,
    /// 0 keeps the whole train split.
    pub subset: usize,
    pub holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "lowercase")]
pub enum Regime {
    Train(TrainConfig),
    Fed { fed: FedConfig, clients: usize, labels_per_client: usize },
    Dp(DpTrainConfig),
}

/// Fully resolved, mutually consistent run; written out as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub preset: Option<String>,
    pub model: ModelSpec,
    pub data: DataSpec,
    pub dtype: DType,
    pub seed: u64,
    pub out: PathBuf,
    pub regime: Regime,
}

fn parse_schedule(s: &str, epochs: usize) -> Result<Schedule, UsageError> {
    match s {
        "constant" => Ok(Schedule::Constant),
        "cosine" => Ok(Schedule::Cosine { total: epochs as u64 }),
        _ => {
            let Some(list) = s.strip_prefix("halving:") else {
                return usage(format!("unknown schedule '{s}' (constant, cosine, halving:E1,E2)"));
            };
            let milestones = list
                .split(',')
                .map(|m| m.trim().parse::<u64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| UsageError(format!("bad halving milestones '{list}': {e}")))?;
            Ok(Schedule::StepHalving { milestones })
        }
    }
}

fn default_lr(cmd: Command, norm: NormKind) -> f64 {
    let family = match cmd {
        Command::Train => "desk-cifar10-resnet8-b32",
        Command::Fed => "desk-fed-cifar10-resnet8-b32",
        Command::Dp => return 1.0,
    };
    let norm = match norm {
        NormKind::Group { .. } => "group",
        NormKind::Instance => "layer",
        k => k.name(),
    };
    presets::get(&format!("{family}-{norm}")).and_then(|s| s.lr).unwrap_or(0.01)
}

impl RunConfig {
    /// Merge the layers and check every field. `flags` wins over `file`,
    /// which wins over the preset named by either of them.
    pub fn resolve(cmd: Command, file: &Settings, flags: &Settings) -> Result<RunConfig, UsageError> {
        let user = file.overlay(flags);
        let preset = match user.preset.as_deref() {
            Some(name) => Some(
                presets::get(name)
                    .ok_or_else(|| UsageError(format!("unknown preset '{name}'; known presets: {}", presets::names().join(", "))))?,
            ),
            None => None,
        };
        let s = preset.unwrap_or_default().overlay(&user);

        let arch: Architecture = s.arch.as_deref().unwrap_or("resnet8").parse().map_err(|e| UsageError(format!("{e}")))?;
        let norm: NormKind = s.norm.as_deref().unwrap_or("kernel").parse().map_err(|e| UsageError(format!("{e}")))?;
        if cmd == Command::Dp && norm == NormKind::Batch {
            return usage(
                "per-sample gradients unavailable: batch normalization mixes samples within a batch; use group, layer, instance or kernel",
            );
        }
        let dtype: DType = s.dtype.as_deref().unwrap_or("f32").parse().map_err(UsageError)?;

        let synth = s.data.as_deref().unwrap_or("synth") == "synth";
        let source = match s.data.as_deref().unwrap_or("synth") {
            "synth" => DataSource::Synth {
                classes: s.synth_classes.unwrap_or(10),
                per_class: s.synth_per_class.unwrap_or(20),
                size: s.synth_size.unwrap_or(16),
            },
            "cifar10" => DataSource::Cifar10,
            "cifar100" => DataSource::Cifar100,
            other => return usage(format!("unknown dataset '{other}' (synth, cifar10, cifar100)")),
        };
        let (classes, size) = match source {
            DataSource::Synth { classes, per_class, size } => {
                if classes < 2 || per_class == 0 || size == 0 {
                    return usage("synthetic data needs at least 2 classes, 1 sample per class and a positive size");
                }
                (classes, size)
            }
            DataSource::Cifar10 => (10, 32),
            DataSource::Cifar100 => (100, 32),
        };
        let data = DataSpec {
            source,
            subset: s.subset.unwrap_or(if synth { 0 } else { 5000 }),
            holdout: s.holdout.unwrap_or(if synth { classes * 5 } else { 1000 }),
        };

        let mut model = ModelSpec::new(arch, norm, classes)
            .with_input(3, size, size)
            .with_width_divisor(s.width_divisor.unwrap_or(if synth { 8 } else { 1 }));
        if let Some(p) = s.dropout {
            model = model.with_dropout(p);
        }
        model.validate().map_err(|e| UsageError(e.to_string()))?;
        // shape errors surface while the graph is built
        build_network::<f32>(&model, 0).map_err(|e| UsageError(format!("{} does not fit {size}x{size} inputs: {e}", arch.name())))?;

        // Kernel models see raw [0, 1] pixels; the others are standardized
        // with the dataset statistics. Synthetic blobs have no reference
        // statistics and always use the [0, 1] scaling.
        let mode = match (norm, &data.source) {
            (NormKind::Kernel, _) | (_, DataSource::Synth { .. }) => Normalization::Div255,
            (_, DataSource::Cifar10) => Normalization::cifar10(),
            (_, DataSource::Cifar100) => Normalization::cifar100(),
        };

        let seed = s.seed.unwrap_or(0);
        let lr = s.lr.unwrap_or_else(|| default_lr(cmd, norm));
        let batch = s.batch.unwrap_or(32);
        let augment = s.augment.unwrap_or(true);
        let regime = match cmd {
            Command::Train => {
                let epochs = s.epochs.unwrap_or(15);
                let cfg = TrainConfig {
                    epochs,
                    batch,
                    sgd: SgdConfig { lr, momentum: s.momentum.unwrap_or(0.9), weight_decay: s.weight_decay.unwrap_or(1e-4) },
                    schedule: parse_schedule(s.schedule.as_deref().unwrap_or("cosine"), epochs)?,
                    preprocess: if augment { PreprocessSpec::standard(mode, size) } else { PreprocessSpec::plain(mode) },
                    seed,
                };
                cfg.validate(3).map_err(|e| UsageError(e.to_string()))?;
                Regime::Train(cfg)
            }
            Command::Fed => {
                let rounds = s.rounds.or(s.epochs).unwrap_or(5);
                let cfg = FedConfig {
                    rounds,
                    local_epochs: s.local_epochs.unwrap_or(1),
                    batch,
                    sgd: SgdConfig { lr, momentum: s.momentum.unwrap_or(0.0), weight_decay: s.weight_decay.unwrap_or(0.0) },
                    schedule: parse_schedule(s.schedule.as_deref().unwrap_or("constant"), rounds)?,
                    preprocess: PreprocessSpec { mode, pad_crop: None, hflip: augment.then_some(0.5) },
                    seed,
                };
                cfg.validate(3).map_err(|e| UsageError(e.to_string()))?;
                let clients = s.clients.unwrap_or(10);
                let labels_per_client = s.labels_per_client.unwrap_or(2);
                if clients == 0 || labels_per_client == 0 || labels_per_client > classes || clients * labels_per_client < classes {
                    return usage(format!(
                        "infeasible label assignment: {clients} clients x {labels_per_client} labels over {classes} classes"
                    ));
                }
                Regime::Fed { fed: cfg, clients, labels_per_client }
            }
            Command::Dp => {
                let clip = s.clip.unwrap_or(1.0);
                let cfg = DpTrainConfig {
                    epochs: s.epochs.unwrap_or(50),
                    batch,
                    sgd: SgdConfig { lr, momentum: s.momentum.unwrap_or(0.0), weight_decay: s.weight_decay.unwrap_or(0.0) },
                    schedule: parse_schedule(s.schedule.as_deref().unwrap_or("halving:20,40"), s.epochs.unwrap_or(50))?,
                    dp: DpConfig { clip_norm: (clip >= 0.0).then_some(clip), noise_multiplier: s.noise.unwrap_or(1.0) },
                    preprocess: if augment { PreprocessSpec::standard(mode, size) } else { PreprocessSpec::plain(mode) },
                    seed,
                };
                if cfg.epochs == 0 || cfg.batch == 0 {
                    return usage("epochs and batch size must be positive");
                }
                cfg.dp.validate().map_err(|e| UsageError(e.to_string()))?;
                cfg.sgd.validate().map_err(|e| UsageError(e.to_string()))?;
                cfg.schedule.validate().map_err(|e| UsageError(e.to_string()))?;
                cfg.preprocess.validate(3).map_err(|e| UsageError(e.to_string()))?;
                Regime::Dp(cfg)
            }
        };
        Ok(RunConfig {
            command: cmd,
            preset: s.preset.clone(),
            model,
            data,
            dtype,
            seed,
            out: s.out.clone().unwrap_or_else(|| PathBuf::from("kn-out")),
            regime,
        })
    }

    pub fn sgd(&self) -> &SgdConfig {
        match &self.regime {
            Regime::Train(c) => &c.sgd,
            Regime::Fed { fed, .. } => &fed.sgd,
            Regime::Dp(c) => &c.sgd,
        }
    }

    pub fn batch(&self) -> usize {
        match &self.regime {
            Regime::Train(c) => c.batch,
            Regime::Fed { fed, .. } => fed.batch,
            Regime::Dp(c) => c.batch,
        }
    }
}
