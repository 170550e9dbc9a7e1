//! Datasets, preprocessing, augmentation and client partitioning.

mod augment;
mod cifar;
mod partition;
mod preprocess;
mod synth;

pub use augment::{apply_augment, augment_batch, draw_augment, AugmentDraw};
pub use cifar::{data_dir, load_cifar, load_cifar_binary, CifarKind, Split, DATA_DIR_ENV};
pub use partition::{noniid_partition, stratified_split, stratified_subset};
pub use preprocess::{Normalization, PadCrop, PreprocessSpec, CIFAR100_MEAN, CIFAR100_STD, CIFAR10_MEAN, CIFAR10_STD};
pub use synth::{synth_dataset, synth_dataset_with_noise, SYNTH_NOISE};

use crate::element::Element;
use crate::error::{KnError, Result};
use crate::tensor::Tensor4;

/// Images stored as raw bytes in `(count, c, h, w)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<u16>,
    geometry: (usize, usize, usize),
    class_count: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        images: Vec<u8>,
        labels: Vec<u16>,
        geometry: (usize, usize, usize),
        class_count: usize,
    ) -> Result<Self> {
        let (c, h, w) = geometry;
        let per = c * h * w;
        if per == 0 || class_count == 0 {
            return Err(KnError::Config(format!("empty geometry {geometry:?} or class count {class_count}")));
        }
        if images.len() != labels.len() * per {
            return Err(KnError::Config(format!("{} image bytes for {} labels of {per} bytes each", images.len(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(KnError::Config(format!("label {bad} outside {class_count} classes")));
        }
        Ok(Dataset { images, labels, geometry, class_count, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn geometry(&self) -> (usize, usize, usize) {
        self.geometry
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    pub fn image_len(&self) -> usize {
        let (c, h, w) = self.geometry;
        c * h * w
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.image_len();
        &self.images[i * len..(i + 1) * len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Indices grouped by label.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let len = self.image_len();
        let mut images = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(KnError::Config(format!("index {i} outside dataset of {}", self.len())));
            }
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(self.name.clone(), images, labels, self.geometry, self.class_count)
    }

    /// Normalized float batch for `indices` plus their labels.
    pub fn batch<T: Element>(&self, indices: &[usize], norm: &Normalization) -> Result<(Tensor4<T>, Vec<usize>)> {
        let (c, h, w) = self.geometry;
        norm.validate(c)?;
        let plane = h * w;
        let mut data = Vec::with_capacity(indices.len() * c * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(KnError::Config(format!("index {i} outside dataset of {}", self.len())));
            }
            for (k, &b) in self.image(i).iter().enumerate() {
                data.push(T::from_f64(norm.apply(b, k / plane)));
            }
            labels.push(self.label(i));
        }
        Ok((Tensor4::from_vec([indices.len(), c, h, w], data)?, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new("tiny", (0..24).collect(), vec![0, 1, 1], (2, 2, 2), 2).unwrap()
    }

    #[test]
    fn construction_checks() {
        assert!(Dataset::new("x", vec![0; 8], vec![0, 0], (1, 2, 2), 1).is_ok());
        assert!(Dataset::new("x", vec![0; 7], vec![0, 0], (1, 2, 2), 1).is_err());
        assert!(Dataset::new("x", vec![0; 8], vec![0, 2], (1, 2, 2), 2).is_err());
    }

    #[test]
    fn subset_and_classes() {
        let d = tiny();
        assert_eq!(d.class_indices(), vec![vec![0], vec![1, 2]]);
        let s = d.subset(&[2, 0]).unwrap();
        assert_eq!(s.labels(), &[1, 0]);
        assert_eq!(s.image(0), d.image(2));
        assert!(d.subset(&[3]).is_err());
    }

    #[test]
    fn batch_div255() {
        let d = tiny();
        let (x, y) = d.batch::<f64>(&[1], &Normalization::Div255).unwrap();
        assert_eq!(y, vec![1]);
        assert_eq!(x.shape().dims(), [1, 2, 2, 2]);
        assert_eq!(x.data()[0], 8.0 / 255.0);
    }
}
