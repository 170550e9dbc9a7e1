use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PreprocessSpec};
use crate::element::Element;
use crate::error::{KnError, Result};
use crate::models::{ForwardOpts, LossGrad, Network, ParamStore};
use crate::rng::{stream_id, Rng};
use crate::tensor::Tensor4;

use super::centralized::eval_record;
use super::{global_norm, lr_at, run_epoch, sgd_step, Metrics, Record, Schedule, SgdConfig, SgdState, TrainOutcome};

const NOISE_TAG: u64 = 0xd9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// `None` leaves gradients unclipped.
    pub clip_norm: Option<f64>,
    pub noise_multiplier: f64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(KnError::Config(format!("clip norm {c} must be positive and finite")));
            }
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(KnError::Config(format!("noise multiplier {} must be non-negative", self.noise_multiplier)));
        }
        if self.noise_multiplier > 0.0 && self.clip_norm.is_none() {
            return Err(KnError::Config("noise needs a finite clip norm".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpStepReport {
    pub loss: f64,
    pub correct: usize,
    /// Fraction of samples whose gradient was scaled down.
    pub clipped: f64,
    /// Norm of the averaged gradient actually applied.
    pub applied_norm: f64,
}

/// Gradients of each sample's loss in isolation.
pub fn per_sample_grads<T: Element>(
    net: &mut Network<T>,
    x: &Tensor4<T>,
    labels: &[usize],
    opts: &ForwardOpts,
) -> Result<Vec<LossGrad<T>>> {
    let n = x.shape().n;
    if labels.len() != n {
        return Err(KnError::Config(format!("{} labels for {n} samples", labels.len())));
    }
    let ids: Vec<u64> = match opts.sample_ids {
        Some(ids) => ids.to_vec(),
        None => (0..n as u64).collect(),
    };
    (0..n)
        .map(|i| {
            let xi = x.slice_batch(i..i + 1)?;
            let o = ForwardOpts { sample_ids: Some(std::slice::from_ref(&ids[i])), ..*opts };
            net.loss_and_grads(&xi, &labels[i..i + 1], &o)
        })
        .collect()
}

/// Clip each per-sample gradient to `clip_norm`, add `N(0, (sigma C)^2)`
/// noise to the sum, average over the batch and take an SGD step.
#[allow(clippy::too_many_arguments)]
pub fn dp_sgd_step<T: Element>(
    net: &mut Network<T>,
    x: &Tensor4<T>,
    labels: &[usize],
    opts: &ForwardOpts,
    dp: &DpConfig,
    sgd: &SgdConfig,
    state: &mut SgdState<T>,
    rng: &mut Rng,
) -> Result<DpStepReport> {
    dp.validate()?;
    if !net.batch_independent()? {
        return Err(KnError::PerSampleUnavailable("the model mixes samples through batch statistics".into()));
    }
    let n = x.shape().n;
    if n == 0 {
        return Err(KnError::Config("empty batch".into()));
    }
    let per = per_sample_grads(net, x, labels, opts)?;
    let mut sum: ParamStore<f64> = net.params.cast();
    for (_, t) in sum.iter_mut() {
        t.data_mut().fill(0.0);
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let mut clipped = 0;
    for lg in &per {
        loss += lg.loss;
        correct += lg.correct;
        let norm = global_norm(&lg.grads);
        let factor = match dp.clip_norm {
            Some(c) if norm > c => {
                clipped += 1;
                c / norm
            }
            _ => 1.0,
        };
        for (name, acc) in sum.iter_mut() {
            let g = lg.grads.get(name)?;
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += factor * v.to_f64();
            }
        }
    }
    let std = dp.noise_multiplier * dp.clip_norm.unwrap_or(0.0);
    let mut avg = ParamStore::<T>::new();
    for (name, acc) in sum.iter_mut() {
        if std > 0.0 {
            for a in acc.data_mut() {
                *a += std * rng.normal();
            }
        }
        avg.insert(name, acc.scale(1.0 / n as f64).cast::<T>());
    }
    let applied_norm = global_norm(&avg);
    sgd_step(&mut net.params, &avg, state, sgd)?;
    Ok(DpStepReport { loss: loss / n as f64, correct, clipped: clipped as f64 / n as f64, applied_norm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpTrainConfig {
    pub epochs: usize,
    /// Samples per step, drawn by shuffling.
    pub batch: usize,
    pub sgd: SgdConfig,
    pub schedule: Schedule,
    pub dp: DpConfig,
    pub preprocess: PreprocessSpec,
    pub seed: u64,
}

/// Epochs of [`dp_sgd_step`] over shuffled batches.
pub fn train_dp<T: Element>(net: &mut Network<T>, train: &Dataset, eval: Option<&Dataset>, cfg: &DpTrainConfig) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(KnError::Config("epochs and batch size must be positive".into()));
    }
    cfg.dp.validate()?;
    cfg.sgd.validate()?;
    cfg.schedule.validate()?;
    cfg.preprocess.validate(train.geometry().0)?;
    if !net.batch_independent()? {
        return Err(KnError::PerSampleUnavailable("the model mixes samples through batch statistics".into()));
    }
    let indices: Vec<usize> = (0..train.len()).collect();
    let mut noise = Rng::new(cfg.seed, stream_id(&[NOISE_TAG]));
    let mut state = SgdState::new();
    let mut metrics = Metrics::default();
    let mut step = 0u64;
    let mut diverged = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(&cfg.schedule, epoch as u64, cfg.sgd.lr);
        let sgd = cfg.sgd.with_lr(lr);
        let t0 = Instant::now();
        let res = run_epoch::<T>(train, &indices, cfg.batch, 1, &cfg.preprocess, cfg.seed, &[NOISE_TAG, epoch as u64], |b| {
            step += 1;
            let opts = ForwardOpts::train(cfg.seed, step).with_ids(&b.ids);
            let r = dp_sgd_step(net, &b.x, &b.labels, &opts, &cfg.dp, &sgd, &mut state, &mut noise)?;
            Ok((r.loss, r.correct))
        });
        let stats = match res {
            Ok(s) => s,
            Err(KnError::Divergence(msg)) => {
                diverged = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        metrics.push(Record {
            epoch,
            split: "train".into(),
            loss: stats.loss(),
            acc: stats.acc(),
            lr,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
        if let Some(r) = eval_record(net, eval, cfg.batch, &cfg.preprocess.mode, epoch, lr)? {
            metrics.push(r);
        }
    }
    Ok(TrainOutcome { metrics, steps: step, diverged })
}
