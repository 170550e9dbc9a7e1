use serde::{Deserialize, Serialize};

use crate::error::{KnError, Result};
use crate::ops::DropoutScaling;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Hyper-parameters shared by KernelNorm and kernel-normalized convolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelNormConfig {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dropout_p: f64,
    pub eps: f64,
    #[serde(default)]
    pub scaling: DropoutScaling,
}

impl KernelNormConfig {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        KernelNormConfig { kernel, stride, padding, dropout_p: 0.0, eps: DEFAULT_EPS, scaling: DropoutScaling::Inverted }
    }

    /// Square kernel/stride/padding shorthand.
    pub fn square(k: usize, s: usize, p: usize) -> Self {
        Self::new((k, k), (s, s), (p, p))
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KnError::Config(m.to_string()));
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return bad("kernel must be at least 1");
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return bad("stride must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout probability must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        Ok(())
    }

    /// Elements per normalization unit for `channels` input channels.
    pub fn unit_len(&self, channels: usize) -> usize {
        channels * self.kernel.0 * self.kernel.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum AffineKind {
    Batch,
    Layer,
    Instance,
    /// Channels per group.
    Group {
        group_size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineNormConfig {
    pub kind: AffineKind,
    pub channels: usize,
    pub eps: f64,
    /// Weight of the new batch statistic in the running average.
    pub momentum: f64,
}

impl AffineNormConfig {
    pub fn new(kind: AffineKind, channels: usize) -> Self {
        AffineNormConfig { kind, channels, eps: DEFAULT_EPS, momentum: 0.1 }
    }

    /// Number of channel groups each sample is split into (batch kind: per channel).
    pub fn groups(&self) -> Result<usize> {
        match self.kind {
            AffineKind::Batch | AffineKind::Instance => Ok(self.channels),
            AffineKind::Layer => Ok(1),
            AffineKind::Group { group_size } => {
                if group_size == 0 || !self.channels.is_multiple_of(group_size) {
                    return Err(KnError::Config(format!("{} channels not divisible into groups of {group_size}", self.channels)));
                }
                Ok(self.channels / group_size)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(KnError::Config("normalization needs at least one channel".into()));
        }
        if !(self.eps > 0.0) {
            return Err(KnError::Config("eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(KnError::Config("momentum must lie in [0, 1]".into()));
        }
        self.groups().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_config_validation() {
        assert!(KernelNormConfig::square(3, 1, 1).validate().is_ok());
        assert!(KernelNormConfig::square(0, 1, 0).validate().is_err());
        assert!(KernelNormConfig::square(2, 0, 0).validate().is_err());
        assert!(KernelNormConfig::square(2, 1, 0).with_dropout(1.0).validate().is_err());
        assert!(KernelNormConfig::square(2, 1, 0).with_eps(0.0).validate().is_err());
    }

    #[test]
    fn group_divisibility() {
        let ok = AffineNormConfig::new(AffineKind::Group { group_size: 32 }, 64);
        assert_eq!(ok.groups().unwrap(), 2);
        let bad = AffineNormConfig::new(AffineKind::Group { group_size: 32 }, 48);
        assert!(bad.validate().is_err());
    }
}
