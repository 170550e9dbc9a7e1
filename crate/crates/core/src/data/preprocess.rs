use serde::{Deserialize, Serialize};

use crate::error::{KnError, Result};

pub const CIFAR10_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
pub const CIFAR100_MEAN: [f64; 3] = [0.5071, 0.4865, 0.4409];
pub const CIFAR100_STD: [f64; 3] = [0.2673, 0.2564, 0.2762];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalization {
    Div255,
    /// Scale to [0, 1], then standardize per channel.
    MeanStd {
        mean: [f64; 3],
        std: [f64; 3],
    },
}

impl Normalization {
    pub fn cifar10() -> Self {
        Normalization::MeanStd { mean: CIFAR10_MEAN, std: CIFAR10_STD }
    }

    pub fn cifar100() -> Self {
        Normalization::MeanStd { mean: CIFAR100_MEAN, std: CIFAR100_STD }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        match self {
            Normalization::Div255 => Ok(()),
            Normalization::MeanStd { std, .. } => {
                if channels != 3 {
                    return Err(KnError::Config(format!("mean/std normalization needs 3 channels, got {channels}")));
                }
                if std.iter().any(|&s| !(s > 0.0)) {
                    return Err(KnError::Config(format!("std must be positive: {std:?}")));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, byte: u8, channel: usize) -> f64 {
        let v = byte as f64 / 255.0;
        match self {
            Normalization::Div255 => v,
            Normalization::MeanStd { mean, std } => (v - mean[channel]) / std[channel],
        }
    }

    /// Back to the 0..=255 byte scale.
    pub fn invert(&self, value: f64, channel: usize) -> f64 {
        let v = match self {
            Normalization::Div255 => value,
            Normalization::MeanStd { mean, std } => value * std[channel] + mean[channel],
        };
        v * 255.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadCrop {
    pub pad: usize,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub mode: Normalization,
    pub pad_crop: Option<PadCrop>,
    /// Horizontal flip probability.
    pub hflip: Option<f64>,
}

impl PreprocessSpec {
    pub fn plain(mode: Normalization) -> Self {
        PreprocessSpec { mode, pad_crop: None, hflip: None }
    }

    /// Pad 4, crop back to `size`, flip with probability one half.
    pub fn standard(mode: Normalization, size: usize) -> Self {
        PreprocessSpec { mode, pad_crop: Some(PadCrop { pad: 4, size }), hflip: Some(0.5) }
    }

    pub fn augments(&self) -> bool {
        self.pad_crop.is_some() || self.hflip.is_some()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        self.mode.validate(channels)?;
        if let Some(p) = self.hflip {
            if !(0.0..=1.0).contains(&p) {
                return Err(KnError::Config(format!("flip probability {p} outside [0, 1]")));
            }
        }
        if let Some(pc) = self.pad_crop {
            if pc.size == 0 {
                return Err(KnError::Config("crop size must be positive".into()));
            }
        }
        Ok(())
    }
}
