use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PreprocessSpec};
use crate::element::Element;
use crate::error::{shape_err, KnError, Result};
use crate::models::{ForwardOpts, Network, ParamStore};
use crate::rng::stream_id;
use crate::tensor::Tensor4;

use super::centralized::eval_record;
use super::{lr_at, run_epoch, EpochStats, Metrics, Record, Schedule, SgdConfig, SgdState, TrainOutcome};

const FED_TAG: u64 = 0xfed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch: usize,
    pub sgd: SgdConfig,
    /// Evaluated once per round.
    pub schedule: Schedule,
    pub preprocess: PreprocessSpec,
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch == 0 {
            return Err(KnError::Config("rounds, local epochs and batch size must be positive".into()));
        }
        self.sgd.validate()?;
        self.schedule.validate()?;
        self.preprocess.validate(channels)
    }
}

/// `sum_k w_k * stores[k]`, accumulated in f64.
pub fn weighted_average<T: Element>(stores: &[&ParamStore<T>], weights: &[f64]) -> Result<ParamStore<T>> {
    let Some(first) = stores.first() else {
        return Err(KnError::Config("nothing to average".into()));
    };
    if stores.len() != weights.len() {
        return Err(KnError::Config(format!("{} stores but {} weights", stores.len(), weights.len())));
    }
    let mut out = ParamStore::new();
    for (name, t) in first.iter() {
        let mut acc = vec![0.0f64; t.numel()];
        for (s, &w) in stores.iter().zip(weights) {
            let u = s.get(name)?;
            if u.shape() != t.shape() {
                return Err(shape_err("weighted_average", format!("{name}: {} vs {}", u.shape(), t.shape())));
            }
            for (a, &v) in acc.iter_mut().zip(u.data()) {
                *a += w * v.to_f64();
            }
        }
        out.insert(name, Tensor4::from_vec(t.shape(), acc.into_iter().map(T::from_f64).collect())?);
    }
    Ok(out)
}

/// `local_epochs` of SGD on one client's shard, starting from `net`'s
/// current parameters. Streams are keyed by round and shard contents, so
/// client order does not matter; `client` only labels errors.
pub fn local_update<T: Element>(
    net: &mut Network<T>,
    ds: &Dataset,
    shard: &[usize],
    cfg: &FedConfig,
    round: usize,
    client: usize,
    lr: f64,
) -> Result<EpochStats> {
    if shard.is_empty() {
        return Err(KnError::EmptyShard(client));
    }
    let min_batch = if net.batch_independent()? { 1 } else { 2 };
    let sgd = cfg.sgd.with_lr(lr);
    let mut state = SgdState::new();
    let mut total = EpochStats::default();
    let mut step = 0u64;
    let key = stream_id(&shard.iter().map(|&i| i as u64).collect::<Vec<_>>());
    for e in 0..cfg.local_epochs {
        let parts = [FED_TAG, round as u64, key, e as u64];
        let s = run_epoch::<T>(ds, shard, cfg.batch, min_batch, &cfg.preprocess, cfg.seed, &parts, |b| {
            step += 1;
            let global_step = ((round * cfg.local_epochs + e) as u64) << 32 | step;
            let opts = ForwardOpts::train(cfg.seed, global_step).with_ids(&b.ids);
            let lg = net.loss_and_grads(&b.x, &b.labels, &opts)?;
            super::sgd_step(&mut net.params, &lg.grads, &mut state, &sgd)?;
            Ok((lg.loss, lg.correct))
        })?;
        total.loss_sum += s.loss_sum;
        total.correct += s.correct;
        total.seen += s.seen;
    }
    Ok(total)
}

/// One FederatedAveraging round: every client trains a private copy and
/// the server takes the shard-size-weighted mean of parameters and buffers.
pub fn fedavg_round<T: Element>(
    global: &mut Network<T>,
    ds: &Dataset,
    shards: &[Vec<usize>],
    cfg: &FedConfig,
    round: usize,
    lr: f64,
) -> Result<EpochStats> {
    if shards.is_empty() {
        return Err(KnError::Config("federation needs at least one client".into()));
    }
    if let Some(k) = shards.iter().position(Vec::is_empty) {
        return Err(KnError::EmptyShard(k));
    }
    let total: usize = shards.iter().map(Vec::len).sum();
    let weights: Vec<f64> = shards.iter().map(|s| s.len() as f64 / total as f64).collect();
    let mut clients = Vec::with_capacity(shards.len());
    let mut stats = EpochStats::default();
    for (k, shard) in shards.iter().enumerate() {
        let mut local = global.clone();
        let s = local_update(&mut local, ds, shard, cfg, round, k, lr)?;
        stats.loss_sum += s.loss_sum;
        stats.correct += s.correct;
        stats.seen += s.seen;
        clients.push(local);
    }
    let params: Vec<_> = clients.iter().map(|c| &c.params).collect();
    let buffers: Vec<_> = clients.iter().map(|c| &c.buffers).collect();
    global.params = weighted_average(&params, &weights)?;
    if !global.buffers.is_empty() {
        global.buffers = weighted_average(&buffers, &weights)?;
    }
    Ok(stats)
}

/// Rounds of FedAvg with one train record (client-side averages) and an
/// optional eval record per round.
pub fn run_federated<T: Element>(
    net: &mut Network<T>,
    ds: &Dataset,
    shards: &[Vec<usize>],
    eval: Option<&Dataset>,
    cfg: &FedConfig,
) -> Result<TrainOutcome> {
    cfg.validate(ds.geometry().0)?;
    let mut metrics = Metrics::default();
    let mut diverged = None;
    let mut rounds = 0;
    for round in 0..cfg.rounds {
        let lr = lr_at(&cfg.schedule, round as u64, cfg.sgd.lr);
        let t0 = Instant::now();
        let stats = match fedavg_round(net, ds, shards, cfg, round, lr) {
            Ok(s) => s,
            Err(KnError::Divergence(msg)) => {
                diverged = Some(format!("round {round}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        rounds += 1;
        metrics.push(Record {
            epoch: round,
            split: "train".into(),
            loss: stats.loss(),
            acc: stats.acc(),
            lr,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
        if let Some(r) = eval_record(net, eval, cfg.batch.max(32), &cfg.preprocess.mode, round, lr)? {
            metrics.push(r);
        }
    }
    Ok(TrainOutcome { metrics, steps: rounds, diverged })
}
