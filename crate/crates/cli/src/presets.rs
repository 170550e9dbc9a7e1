//! Published learning-rate (and clipping) grids as named presets.
//!
//! Names follow `<dataset>-<arch>-<batch or budget>-<norm>`, for example
//! `cifar100-vgg9-b32-kernel`.

use crate::config::Settings;

const NORMS4: [&str; 4] = ["batch", "group", "layer", "kernel"];
const NORMS3: [&str; 3] = ["group", "layer", "kernel"];

/// `(batch, [rate per norm in NORMS4 order])`
const VGG9: [(usize, [f64; 4]); 3] =
    [(256, [1.0, 0.25, 0.25, 1.0]), (32, [0.25, 0.0625, 0.0625, 0.125]), (2, [0.00390625, 0.00390625, 0.00390625, 0.0078125])];

const PREACT18: [(usize, [f64; 4]); 3] =
    [(256, [0.1, 0.05, 0.05, 0.1]), (32, [0.025, 0.0125, 0.0125, 0.05]), (2, [0.00078125, 0.0015625, 0.0015625, 0.0015625])];

const IMAGENETTE18: [(usize, [f64; 4]); 3] =
    [(128, [0.1, 0.00625, 0.0125, 0.00625]), (32, [0.1, 0.1, 0.00625, 0.003125]), (8, [0.1, 0.003125, 0.003125, 0.003125])];

/// `(batch, [lr per NORMS3], [clip per NORMS3])`
const DP_BATCH: [(usize, [f64; 3], [f64; 3]); 4] = [
    (512, [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]),
    (1024, [2.0, 2.0, 1.5], [2.0, 2.0, 1.5]),
    (2048, [2.0, 2.0, 2.0], [2.0, 2.0, 2.0]),
    (3072, [2.0, 2.0, 2.0], [2.0, 2.0, 2.0]),
];

/// `(epsilon, [lr], [clip], [batch])` per NORMS3.
type EpsRow = (u32, [f64; 3], [f64; 3], [usize; 3]);

const DP_EPSILON: [EpsRow; 4] = [
    (2, [2.0, 2.0, 2.0], [2.0, 2.0, 2.0], [2048, 2048, 4096]),
    (4, [2.0, 1.0, 2.0], [2.0, 1.5, 2.0], [1024, 1024, 3072]),
    (6, [1.5, 2.0, 2.0], [2.0, 2.0, 2.0], [1024, 2048, 2048]),
    (8, [2.0, 2.0, 2.0], [2.0, 2.0, 2.0], [2048, 1024, 3072]),
];

fn base(arch: &str, norm: &str, data: &str, batch: usize, lr: f64) -> Settings {
    Settings {
        arch: Some(arch.into()),
        norm: Some(norm.into()),
        data: Some(data.into()),
        batch: Some(batch),
        lr: Some(lr),
        ..Settings::default()
    }
}

/// Every preset, in a stable order.
pub fn all() -> Vec<(String, Settings)> {
    let mut out = Vec::new();
    for (batch, rates) in VGG9 {
        for (norm, lr) in NORMS4.iter().zip(rates) {
            out.push((format!("cifar100-vgg9-b{batch}-{norm}"), base("vgg9", norm, "cifar100", batch, lr)));
        }
    }
    for (batch, rates) in PREACT18 {
        for (norm, lr) in NORMS4.iter().zip(rates) {
            out.push((format!("cifar100-preact-resnet18-b{batch}-{norm}"), base("preact-resnet18", norm, "cifar100", batch, lr)));
        }
    }
    for (batch, rates) in IMAGENETTE18 {
        for (norm, lr) in NORMS4.iter().zip(rates) {
            // no Imagenette loader; synthetic data at the 160-pixel geometry
            let mut s = base("resnet18", norm, "synth", batch, lr);
            s.synth_size = Some(160);
            out.push((format!("imagenette-resnet18-b{batch}-{norm}"), s));
        }
    }
    for (batch, rates, clips) in DP_BATCH {
        for (i, norm) in NORMS3.iter().enumerate() {
            let mut s = base("resnet8", norm, "cifar10", batch, rates[i]);
            s.clip = Some(clips[i]);
            out.push((format!("cifar10-resnet8-dp-b{batch}-{norm}"), s));
        }
    }
    for (eps, rates, clips, batches) in DP_EPSILON {
        for (i, norm) in NORMS3.iter().enumerate() {
            let mut s = base("resnet8", norm, "cifar10", batches[i], rates[i]);
            s.clip = Some(clips[i]);
            out.push((format!("cifar10-resnet8-dp-eps{eps}-{norm}"), s));
        }
    }
    // Desk-scale runs. No centralized ResNet-8 grid is published, so the
    // batch-32 PreactResNet-18 rates are reused; the federated runs reuse
    // the batch-32 Imagenette rates.
    for (norm, lr) in NORMS4.iter().zip(PREACT18[1].1) {
        out.push((format!("desk-cifar10-resnet8-b32-{norm}"), base("resnet8", norm, "cifar10", 32, lr)));
    }
    for (norm, lr) in NORMS4.iter().zip(IMAGENETTE18[1].1) {
        out.push((format!("desk-fed-cifar10-resnet8-b32-{norm}"), base("resnet8", norm, "cifar10", 32, lr)));
    }
    out
}

pub fn get(name: &str) -> Option<Settings> {
    all().into_iter().find(|(n, _)| n == name).map(|(_, s)| s)
}

pub fn names() -> Vec<String> {
    all().into_iter().map(|(n, _)| n).collect()
}
