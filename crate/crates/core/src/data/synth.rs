use crate::error::{KnError, Result};
use crate::rng::Rng;

use super::Dataset;

/// Default per-pixel noise (byte units).
pub const SYNTH_NOISE: f64 = 24.0;

const BLOBS: usize = 3;

pub fn synth_dataset(classes: usize, per_class: usize, geometry: (usize, usize, usize), rng: &mut Rng) -> Result<Dataset> {
    synth_dataset_with_noise(classes, per_class, geometry, SYNTH_NOISE, rng)
}

/// Gaussian-blob images: each class owns a few coloured blobs at fixed
/// positions, and samples jitter blob amplitude and add pixel noise.
/// Sample `i` has label `i % classes`.
pub fn synth_dataset_with_noise(
    classes: usize,
    per_class: usize,
    geometry: (usize, usize, usize),
    noise: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    let (c, h, w) = geometry;
    if classes == 0 || classes > u16::MAX as usize || c * h * w == 0 {
        return Err(KnError::Config(format!("bad synthetic spec: {classes} classes, geometry {geometry:?}")));
    }
    // class templates in [-1, 1]
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let mut t = vec![0.0; c * h * w];
            for _ in 0..BLOBS {
                let cy = rng.uniform() * h as f64;
                let cx = rng.uniform() * w as f64;
                let r = (0.15 + 0.2 * rng.uniform()) * h.min(w) as f64;
                let colour: Vec<f64> = (0..c).map(|_| 2.0 * rng.uniform() - 1.0).collect();
                for (ch, col) in colour.iter().enumerate() {
                    for i in 0..h {
                        for j in 0..w {
                            let d2 = (i as f64 + 0.5 - cy).powi(2) + (j as f64 + 0.5 - cx).powi(2);
                            t[(ch * h + i) * w + j] += col * (-d2 / (2.0 * r * r)).exp();
                        }
                    }
                }
            }
            t
        })
        .collect();
    let count = classes * per_class;
    let mut images = Vec::with_capacity(count * c * h * w);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes;
        let amp = 70.0 * (0.7 + 0.6 * rng.uniform());
        for &v in &templates[label] {
            let px = 128.0 + amp * v + noise * rng.normal();
            images.push(px.round().clamp(0.0, 255.0) as u8);
        }
        labels.push(label as u16);
    }
    Dataset::new("synth", images, labels, geometry, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let a = synth_dataset(4, 50, (3, 8, 8), &mut Rng::new(3, 0)).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.class_indices().iter().map(Vec::len).collect::<Vec<_>>(), vec![50; 4]);
        let b = synth_dataset(4, 50, (3, 8, 8), &mut Rng::new(3, 0)).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(4, 50, (3, 8, 8), &mut Rng::new(4, 0)).unwrap();
        assert_ne!(a.images(), c.images());
    }
}
