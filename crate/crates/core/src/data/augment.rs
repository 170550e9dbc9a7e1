use crate::element::Element;
use crate::error::{KnError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

use super::PreprocessSpec;

/// Random choices for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip: bool,
    /// Crop origin inside the padded image.
    pub offset: (usize, usize),
}

/// Draw per-sample choices in batch order.
pub fn draw_augment(spec: &PreprocessSpec, n: usize, rng: &mut Rng) -> Vec<AugmentDraw> {
    (0..n)
        .map(|_| {
            let flip = spec.hflip.is_some_and(|p| rng.bernoulli(p));
            let offset = match spec.pad_crop {
                Some(pc) => (rng.below(2 * pc.pad + 1), rng.below(2 * pc.pad + 1)),
                None => (0, 0),
            };
            AugmentDraw { flip, offset }
        })
        .collect()
}

pub fn apply_augment<T: Element>(batch: &Tensor4<T>, spec: &PreprocessSpec, draws: &[AugmentDraw]) -> Result<Tensor4<T>> {
    let s = batch.shape();
    if draws.len() != s.n {
        return Err(KnError::Config(format!("{} draws for a batch of {}", draws.len(), s.n)));
    }
    let (pad, oh, ow) = match spec.pad_crop {
        Some(pc) => (pc.pad, pc.size, pc.size),
        None => (0, s.h, s.w),
    };
    if oh > s.h + 2 * pad || ow > s.w + 2 * pad {
        return Err(KnError::Config(format!("crop {oh}x{ow} larger than padded {}x{}", s.h + 2 * pad, s.w + 2 * pad)));
    }
    let mut out = Tensor4::zeros([s.n, s.c, oh, ow])?;
    for (n, d) in draws.iter().enumerate() {
        if d.offset.0 + oh > s.h + 2 * pad || d.offset.1 + ow > s.w + 2 * pad {
            return Err(KnError::Config(format!("crop offset {:?} out of range", d.offset)));
        }
        for c in 0..s.c {
            for i in 0..oh {
                // row in the unpadded source
                let Some(si) = (i + d.offset.0).checked_sub(pad).filter(|&r| r < s.h) else {
                    continue;
                };
                for j in 0..ow {
                    let Some(sj) = (j + d.offset.1).checked_sub(pad).filter(|&q| q < s.w) else {
                        continue;
                    };
                    let col = if d.flip { s.w - 1 - sj } else { sj };
                    out.set(n, c, i, j, batch.at(n, c, si, col));
                }
            }
        }
    }
    Ok(out)
}

/// Independent flip and pad-crop per sample. Labels and order are untouched
/// since only pixels move.
pub fn augment_batch<T: Element>(batch: &Tensor4<T>, spec: &PreprocessSpec, rng: &mut Rng) -> Result<Tensor4<T>> {
    if !spec.augments() {
        return Ok(batch.clone());
    }
    let draws = draw_augment(spec, batch.shape().n, rng);
    apply_augment(batch, spec, &draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Normalization, PadCrop};

    fn spec(pad_crop: Option<PadCrop>, hflip: Option<f64>) -> PreprocessSpec {
        PreprocessSpec { mode: Normalization::Div255, pad_crop, hflip }
    }

    #[test]
    fn disabled_is_identity() {
        let x = Tensor4::<f64>::randn([3, 2, 5, 5], 1.0, &mut Rng::new(1, 0)).unwrap();
        let y = augment_batch(&x, &spec(None, None), &mut Rng::new(2, 0)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn flip_is_an_involution() {
        let x = Tensor4::<f64>::randn([4, 3, 4, 6], 1.0, &mut Rng::new(1, 0)).unwrap();
        let s = spec(None, Some(0.5));
        let draws = draw_augment(&s, 4, &mut Rng::new(9, 0));
        let twice = apply_augment(&apply_augment(&x, &s, &draws).unwrap(), &s, &draws).unwrap();
        assert_eq!(x, twice);
        let all = vec![AugmentDraw { flip: true, offset: (0, 0) }; 4];
        let f = apply_augment(&x, &s, &all).unwrap();
        assert_eq!(f.at(0, 0, 0, 0), x.at(0, 0, 0, 5));
    }

    #[test]
    fn crop_offsets_cover_zero_to_eight() {
        let s = spec(Some(PadCrop { pad: 4, size: 32 }), None);
        let draws = draw_augment(&s, 1000, &mut Rng::new(3, 0));
        let mut seen = [[false; 9]; 9];
        for d in &draws {
            assert!(d.offset.0 <= 8 && d.offset.1 <= 8);
            seen[d.offset.0][d.offset.1] = true;
        }
        assert!(seen.iter().flatten().all(|&b| b), "every offset pair should appear in 1000 draws");
    }

    #[test]
    fn center_crop_is_identity_and_shift_moves_pixels() {
        let x = Tensor4::<f64>::randn([1, 1, 6, 6], 1.0, &mut Rng::new(1, 0)).unwrap();
        let s = spec(Some(PadCrop { pad: 2, size: 6 }), None);
        let centred = apply_augment(&x, &s, &[AugmentDraw { flip: false, offset: (2, 2) }]).unwrap();
        assert_eq!(centred, x);
        let shifted = apply_augment(&x, &s, &[AugmentDraw { flip: false, offset: (0, 0) }]).unwrap();
        assert_eq!(shifted.at(0, 0, 0, 0), 0.0);
        assert_eq!(shifted.at(0, 0, 2, 2), x.at(0, 0, 0, 0));
    }

    #[test]
    fn deterministic_and_order_preserving() {
        let mut x = Tensor4::<f64>::zeros([5, 1, 4, 4]).unwrap();
        for n in 0..5 {
            for v in x.data_mut()[n * 16..(n + 1) * 16].iter_mut() {
                *v = n as f64 + 1.0;
            }
        }
        let s = spec(Some(PadCrop { pad: 1, size: 4 }), Some(0.5));
        let a = augment_batch(&x, &s, &mut Rng::new(4, 4)).unwrap();
        let b = augment_batch(&x, &s, &mut Rng::new(4, 4)).unwrap();
        assert_eq!(a, b);
        for n in 0..5 {
            assert!(a.sample(n).iter().all(|&v| v == 0.0 || v == n as f64 + 1.0));
        }
    }
}
