//! Optimizer, schedules, metrics and the centralized, federated and
//! per-sample-gradient training loops.

mod centralized;
mod dp;
mod fed;
mod metrics;
mod optim;
mod schedule;

pub use centralized::{evaluate, train_centralized, EvalStats, TrainConfig, TrainOutcome};
pub use dp::{dp_sgd_step, per_sample_grads, train_dp, DpConfig, DpStepReport, DpTrainConfig};
pub use fed::{fedavg_round, local_update, run_federated, weighted_average, FedConfig};
pub use metrics::{Metrics, Record, Summary};
pub use optim::{global_norm, sgd_step, SgdConfig, SgdState};
pub use schedule::{lr_at, Schedule};

use crate::data::{augment_batch, Dataset, PreprocessSpec};
use crate::element::Element;
use crate::error::{KnError, Result};
use crate::rng::{stream_id, Rng};
use crate::tensor::Tensor4;

const SHUFFLE_TAG: u64 = 0x5f0f;
const AUGMENT_TAG: u64 = 0xa06;

/// Running totals over one pass of mini-batches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub seen: usize,
}

impl EpochStats {
    pub fn loss(&self) -> f64 {
        if self.seen == 0 {
            0.0
        } else {
            self.loss_sum / self.seen as f64
        }
    }

    pub fn acc(&self) -> f64 {
        if self.seen == 0 {
            0.0
        } else {
            self.correct as f64 / self.seen as f64
        }
    }
}

/// One prepared mini-batch.
pub(crate) struct Batch<T: Element> {
    pub x: Tensor4<T>,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
}

/// Shuffle `indices` with the stream `(seed, parts)` and walk them in
/// batches, augmenting each. A trailing batch of one is dropped when
/// `min_batch` is 2.
pub(crate) fn run_epoch<T: Element>(
    ds: &Dataset,
    indices: &[usize],
    batch: usize,
    min_batch: usize,
    pre: &PreprocessSpec,
    seed: u64,
    parts: &[u64],
    mut step: impl FnMut(&Batch<T>) -> Result<(f64, usize)>,
) -> Result<EpochStats> {
    if batch == 0 {
        return Err(KnError::Config("batch size must be positive".into()));
    }
    let mut order = indices.to_vec();
    let mut tagged = vec![SHUFFLE_TAG];
    tagged.extend_from_slice(parts);
    Rng::new(seed, stream_id(&tagged)).shuffle(&mut order);
    tagged[0] = AUGMENT_TAG;
    let mut aug_rng = Rng::new(seed, stream_id(&tagged));
    let mut stats = EpochStats::default();
    for chunk in order.chunks(batch) {
        if chunk.len() < min_batch {
            continue;
        }
        let (x, labels) = ds.batch::<T>(chunk, &pre.mode)?;
        let x = augment_batch(&x, pre, &mut aug_rng)?;
        let b = Batch { x, labels, ids: chunk.iter().map(|&i| i as u64).collect() };
        let (loss, correct) = step(&b)?;
        if !loss.is_finite() {
            return Err(KnError::Divergence(format!("loss {loss}")));
        }
        stats.loss_sum += loss * chunk.len() as f64;
        stats.correct += correct;
        stats.seen += chunk.len();
    }
    Ok(stats)
}
