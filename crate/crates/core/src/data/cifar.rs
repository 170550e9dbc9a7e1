use std::path::{Path, PathBuf};

use crate::error::{KnError, Result};

use super::Dataset;

pub const DATA_DIR_ENV: &str = "KN_DATA_DIR";

const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl CifarKind {
    fn label_bytes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 => 2,
        }
    }

    fn classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CifarKind::Cifar10 => "cifar10",
            CifarKind::Cifar100 => "cifar100",
        }
    }

    fn files(self, split: Split) -> (&'static str, Vec<&'static str>, usize) {
        match (self, split) {
            (CifarKind::Cifar10, Split::Train) => (
                "cifar-10-batches-bin",
                vec!["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"],
                50_000,
            ),
            (CifarKind::Cifar10, Split::Test) => ("cifar-10-batches-bin", vec!["test_batch.bin"], 10_000),
            (CifarKind::Cifar100, Split::Train) => ("cifar-100-binary", vec!["train.bin"], 50_000),
            (CifarKind::Cifar100, Split::Test) => ("cifar-100-binary", vec!["test.bin"], 10_000),
        }
    }
}

/// Directory named by `KN_DATA_DIR`, if set.
pub fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// Parse one binary file. CIFAR-100 records carry a coarse and a fine label;
/// the fine one is kept.
pub fn load_cifar_binary(path: impl AsRef<Path>, which: CifarKind) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let lb = which.label_bytes();
    let rec = lb + PIXELS;
    let shown = path.display().to_string();
    if bytes.len() % rec != 0 {
        return Err(KnError::TruncatedRecord(format!("{shown}: {} bytes is not a multiple of the {rec}-byte record", bytes.len())));
    }
    let count = bytes.len() / rec;
    if count == 0 {
        return Err(KnError::BadRecordCount { path: shown, expected: 1, found: 0 });
    }
    let mut images = Vec::with_capacity(count * PIXELS);
    let mut labels = Vec::with_capacity(count);
    for r in bytes.chunks_exact(rec) {
        let label = r[lb - 1] as u16;
        if label as usize >= which.classes() {
            return Err(KnError::Format(format!("{shown}: label {label} outside {} classes", which.classes())));
        }
        labels.push(label);
        images.extend_from_slice(&r[lb..]);
    }
    Dataset::new(which.name(), images, labels, (3, 32, 32), which.classes())
}

/// Load a standard split from the usual extracted directory layout under `root`.
pub fn load_cifar(root: impl AsRef<Path>, which: CifarKind, split: Split) -> Result<Dataset> {
    let (sub, files, expected) = which.files(split);
    let dir = root.as_ref().join(sub);
    let mut images = Vec::with_capacity(expected * PIXELS);
    let mut labels = Vec::with_capacity(expected);
    for f in files {
        let part = load_cifar_binary(dir.join(f), which)?;
        images.extend_from_slice(part.images());
        labels.extend_from_slice(part.labels());
    }
    if labels.len() != expected {
        return Err(KnError::BadRecordCount { path: dir.display().to_string(), expected, found: labels.len() });
    }
    Dataset::new(which.name(), images, labels, (3, 32, 32), which.classes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &[u8], fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = label.to_vec();
        r.extend((0..PIXELS).map(fill));
        r
    }

    #[test]
    fn two_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut bytes = record(&[3], |i| (i % 251) as u8);
        bytes.extend(record(&[9], |i| (i * 7 % 256) as u8));
        std::fs::write(&p, &bytes).unwrap();
        let ds = load_cifar_binary(&p, CifarKind::Cifar10).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), &[3, 9]);
        assert_eq!(ds.image(0), &bytes[1..1 + PIXELS]);
        assert_eq!(ds.image(1), &bytes[2 + PIXELS..]);
    }

    #[test]
    fn cifar100_keeps_fine_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        std::fs::write(&p, record(&[4, 77], |_| 1)).unwrap();
        let ds = load_cifar_binary(&p, CifarKind::Cifar100).unwrap();
        assert_eq!(ds.labels(), &[77]);
        assert_eq!(ds.class_count(), 100);
    }

    #[test]
    fn truncated_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let mut bytes = record(&[1], |_| 0);
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        let err = load_cifar_binary(&p, CifarKind::Cifar10).unwrap_err();
        assert!(err.to_string().contains("truncated record"), "{err}");
        std::fs::write(&p, []).unwrap();
        let err = load_cifar_binary(&p, CifarKind::Cifar10).unwrap_err();
        assert!(matches!(err, KnError::BadRecordCount { .. }));
    }

    #[test]
    fn split_with_wrong_total_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("cifar-10-batches-bin");
        std::fs::create_dir(&sub).unwrap();
        std::fs::write(sub.join("test_batch.bin"), record(&[0], |_| 0)).unwrap();
        let err = load_cifar(dir.path(), CifarKind::Cifar10, Split::Test).unwrap_err();
        assert!(matches!(err, KnError::BadRecordCount { expected: 10_000, found: 1, .. }), "{err}");
    }
}
