//! Model zoo: declarative layer graphs for VGG-9, ResNet-8,
//! PreactResNet-18 and ResNet-18 with a choice of normalization.

pub mod checkpoint;
pub mod flavor;
pub mod graph;
pub mod network;
pub mod zoo;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KnError, Result};
use crate::norm::config::AffineKind;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use flavor::{NormFlavor, NormRegistry};
pub use graph::{Activation, GraphBuilder, Layer, LayerGraph, NodeId, ParamStore};
pub use network::{Forward, ForwardOpts, LossGrad, Network};
pub use zoo::{build_network, kn_basic_block, kn_vgg_block, Shortcut};

pub const DEFAULT_GROUP_SIZE: usize = 32;

/// Normalization used throughout a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum NormKind {
    Batch,
    /// `group_size` channels per group.
    Group {
        group_size: usize,
    },
    Layer,
    Instance,
    Kernel,
}

impl NormKind {
    /// The affine layer kind, or `None` for kernel normalization.
    pub fn affine(self) -> Option<AffineKind> {
        match self {
            NormKind::Batch => Some(AffineKind::Batch),
            NormKind::Group { group_size } => Some(AffineKind::Group { group_size }),
            NormKind::Layer => Some(AffineKind::Layer),
            NormKind::Instance => Some(AffineKind::Instance),
            NormKind::Kernel => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NormKind::Batch => "batch",
            NormKind::Group { .. } => "group",
            NormKind::Layer => "layer",
            NormKind::Instance => "instance",
            NormKind::Kernel => "kernel",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::Group { group_size } if *group_size != DEFAULT_GROUP_SIZE => write!(f, "group:{group_size}"),
            k => f.write_str(k.name()),
        }
    }
}

impl FromStr for NormKind {
    type Err = KnError;

    /// `batch`, `group`, `group:<size>`, `layer`, `instance` or `kernel`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (head, arg) = match lower.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (lower.as_str(), None),
        };
        let kind = match (head, arg) {
            ("batch", None) => NormKind::Batch,
            ("layer", None) => NormKind::Layer,
            ("instance", None) => NormKind::Instance,
            ("kernel", None) => NormKind::Kernel,
            ("group", None) => NormKind::Group { group_size: DEFAULT_GROUP_SIZE },
            ("group", Some(a)) => {
                NormKind::Group { group_size: a.parse().map_err(|_| KnError::Config(format!("bad group size in {s:?}")))? }
            }
            _ => return Err(KnError::Unknown { kind: "norm kind", name: s.to_string() }),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "vgg9")]
    Vgg9,
    #[serde(rename = "resnet8")]
    ResNet8,
    #[serde(rename = "preact-resnet18")]
    PreactResNet18,
    #[serde(rename = "resnet18")]
    ResNet18,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vgg9 => "vgg9",
            Architecture::ResNet8 => "resnet8",
            Architecture::PreactResNet18 => "preact-resnet18",
            Architecture::ResNet18 => "resnet18",
        }
    }

    /// Dropout of the last KernelNorm layer.
    pub fn default_final_dropout(self) -> f64 {
        match self {
            Architecture::ResNet8 => 0.25,
            _ => 0.5,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = KnError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "vgg9" => Ok(Architecture::Vgg9),
            "resnet8" => Ok(Architecture::ResNet8),
            "preactresnet18" => Ok(Architecture::PreactResNet18),
            "resnet18" => Ok(Architecture::ResNet18),
            _ => Err(KnError::Unknown { kind: "architecture", name: s.to_string() }),
        }
    }
}

pub const INNER_KN_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub norm: NormKind,
    pub num_classes: usize,
    pub final_kn_dropout: f64,
    pub inner_kn_dropout: f64,
    /// Per-sample input `(channels, height, width)`.
    pub input: (usize, usize, usize),
    /// Every channel count is divided by this (1 = published widths).
    pub width_divisor: usize,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, norm: NormKind, num_classes: usize) -> Self {
        ModelSpec {
            architecture,
            norm,
            num_classes,
            final_kn_dropout: architecture.default_final_dropout(),
            inner_kn_dropout: INNER_KN_DROPOUT,
            input: (3, 32, 32),
            width_divisor: 1,
        }
    }

    pub fn with_input(mut self, c: usize, h: usize, w: usize) -> Self {
        self.input = (c, h, w);
        self
    }

    pub fn with_width_divisor(mut self, d: usize) -> Self {
        self.width_divisor = d;
        self
    }

    /// Both dropout probabilities set to `p`.
    pub fn with_dropout(mut self, p: f64) -> Self {
        self.final_kn_dropout = p;
        self.inner_kn_dropout = p;
        self
    }

    /// Affine layer kind; group sizes shrink with the width divisor so the
    /// number of groups stays fixed.
    pub fn affine_kind(&self) -> Option<AffineKind> {
        match self.norm {
            NormKind::Group { group_size } => Some(AffineKind::Group { group_size: (group_size / self.width_divisor).max(1) }),
            k => k.affine(),
        }
    }

    pub fn width(&self, channels: usize) -> usize {
        (channels / self.width_divisor).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(KnError::Config("need at least two classes".into()));
        }
        if self.width_divisor == 0 {
            return Err(KnError::Config("width divisor must be positive".into()));
        }
        for p in [self.final_kn_dropout, self.inner_kn_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(KnError::Config(format!("dropout {p} outside [0, 1)")));
            }
        }
        if let NormKind::Group { group_size } = self.norm {
            if group_size == 0 {
                return Err(KnError::Config("group size must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_norm_kinds() {
        assert_eq!("group".parse::<NormKind>().unwrap(), NormKind::Group { group_size: 32 });
        assert_eq!("Group:8".parse::<NormKind>().unwrap(), NormKind::Group { group_size: 8 });
        assert_eq!("kernel".parse::<NormKind>().unwrap(), NormKind::Kernel);
        assert!("group:x".parse::<NormKind>().is_err());
        assert!("positional".parse::<NormKind>().is_err());
        assert_eq!(NormKind::Group { group_size: 8 }.to_string(), "group:8");
        assert_eq!(NormKind::Group { group_size: 32 }.to_string(), "group");
    }

    #[test]
    fn parse_architectures() {
        assert_eq!("PreactResNet-18".parse::<Architecture>().unwrap(), Architecture::PreactResNet18);
        assert_eq!("resnet8".parse::<Architecture>().unwrap(), Architecture::ResNet8);
        assert!("vgg16".parse::<Architecture>().is_err());
    }

    #[test]
    fn default_dropouts() {
        for (a, p) in
            [(Architecture::Vgg9, 0.5), (Architecture::PreactResNet18, 0.5), (Architecture::ResNet18, 0.5), (Architecture::ResNet8, 0.25)]
        {
            let s = ModelSpec::new(a, NormKind::Kernel, 10);
            assert_eq!(s.final_kn_dropout, p);
            assert_eq!(s.inner_kn_dropout, 0.1);
        }
    }
}
