use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{Dataset, Normalization, PreprocessSpec};
use crate::element::Element;
use crate::error::{KnError, Result};
use crate::models::{ForwardOpts, Network};
use crate::ops::loss::argmax_rows;

use super::{lr_at, run_epoch, Metrics, Record, Schedule, SgdConfig, SgdState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub sgd: SgdConfig,
    /// Evaluated once per epoch.
    pub schedule: Schedule,
    pub preprocess: PreprocessSpec,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(KnError::Config("epochs and batch size must be positive".into()));
        }
        self.sgd.validate()?;
        self.schedule.validate()?;
        self.preprocess.validate(channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Metrics,
    pub steps: u64,
    /// Set when a non-finite loss or gradient stopped the run early.
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub acc: f64,
    pub count: usize,
}

/// Inference-mode loss and accuracy over the whole dataset.
pub fn evaluate<T: Element>(net: &mut Network<T>, ds: &Dataset, batch: usize, norm: &Normalization) -> Result<EvalStats> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for chunk in all.chunks(batch.max(1)) {
        let (x, labels) = ds.batch::<T>(chunk, norm)?;
        let mut tape = Tape::new();
        let f = net.forward(&mut tape, &x, &ForwardOpts::eval(), false)?;
        correct += argmax_rows(tape.value(f.output)).iter().zip(&labels).filter(|(p, y)| p == y).count();
        let l = tape.softmax_cross_entropy(f.output, &labels)?;
        loss_sum += tape.value(l).data()[0].to_f64() * chunk.len() as f64;
    }
    let count = ds.len().max(1);
    Ok(EvalStats { loss: loss_sum / count as f64, acc: correct as f64 / count as f64, count: ds.len() })
}

pub(crate) fn eval_record<T: Element>(
    net: &mut Network<T>,
    eval: Option<&Dataset>,
    batch: usize,
    norm: &Normalization,
    epoch: usize,
    lr: f64,
) -> Result<Option<Record>> {
    let Some(ds) = eval else {
        return Ok(None);
    };
    let t0 = Instant::now();
    let e = evaluate(net, ds, batch, norm)?;
    Ok(Some(Record { epoch, split: "eval".into(), loss: e.loss, acc: e.acc, lr, wall_ms: t0.elapsed().as_millis() as u64 }))
}

/// Shuffled mini-batch SGD with augmentation, one record per epoch for the
/// training pass and one for `eval` when given.
pub fn train_centralized<T: Element>(
    net: &mut Network<T>,
    train: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate(train.geometry().0)?;
    let min_batch = if net.batch_independent()? { 1 } else { 2 };
    let indices: Vec<usize> = (0..train.len()).collect();
    let mut state = SgdState::new();
    let mut metrics = Metrics::default();
    let mut step = 0u64;
    let mut diverged = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(&cfg.schedule, epoch as u64, cfg.sgd.lr);
        let sgd = cfg.sgd.with_lr(lr);
        let t0 = Instant::now();
        let res = run_epoch::<T>(train, &indices, cfg.batch, min_batch, &cfg.preprocess, cfg.seed, &[epoch as u64], |b| {
            step += 1;
            let opts = ForwardOpts::train(cfg.seed, step).with_ids(&b.ids);
            let lg = net.loss_and_grads(&b.x, &b.labels, &opts)?;
            if !lg.loss.is_finite() {
                return Err(KnError::Divergence(format!("loss {}", lg.loss)));
            }
            super::sgd_step(&mut net.params, &lg.grads, &mut state, &sgd)?;
            Ok((lg.loss, lg.correct))
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
