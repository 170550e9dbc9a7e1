use kn_core::data::{synth_dataset, synth_dataset_with_noise, Dataset, Normalization, PreprocessSpec};
use kn_core::models::{build_network, Architecture, ForwardOpts, ModelSpec, Network, NormKind, ParamStore};
use kn_core::train::{
    dp_sgd_step, fedavg_round, global_norm, local_update, per_sample_grads, sgd_step, train_centralized, train_dp, weighted_average,
    DpConfig, DpTrainConfig, FedConfig, Schedule, SgdConfig, SgdState, TrainConfig,
};
use kn_core::{KnError, Rng, Tensor4};

fn spec(norm: NormKind) -> ModelSpec {
    ModelSpec::new(Architecture::ResNet8, norm, 4).with_input(3, 16, 16).with_width_divisor(8)
}

fn net(norm: NormKind, seed: u64) -> Network<f64> {
    build_network(&spec(norm), seed).unwrap()
}

fn synth(per_class: usize, seed: u64) -> Dataset {
    synth_dataset(4, per_class, (3, 16, 16), &mut Rng::new(seed, 0)).unwrap()
}

fn cfg(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 16,
        sgd: SgdConfig::standard(lr),
        schedule: Schedule::Constant,
        preprocess: PreprocessSpec::plain(Normalization::Div255),
        seed,
    }
}

const GROUP4: NormKind = NormKind::Group { group_size: 4 };

fn rel(a: &ParamStore<f64>, b: &ParamStore<f64>) -> f64 {
    let mut d = 0.0;
    let mut s: f64 = 0.0;
    for (name, x) in a.iter() {
        let y = b.get(name).unwrap();
        d += x.sub(y).unwrap().sq_norm_f64();
    }
    s = s.max(global_norm(a)).max(global_norm(b));
    d.sqrt() / s.max(1e-300)
}

fn mean_store(stores: &[ParamStore<f64>]) -> ParamStore<f64> {
    let refs: Vec<_> = stores.iter().collect();
    weighted_average(&refs, &vec![1.0 / stores.len() as f64; stores.len()]).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let ds = synth(8, 1);
    let mut m = net(NormKind::Kernel, 3);
    let before = m.params.clone();
    let mut c = cfg(1, 0.0, 1);
    c.sgd.weight_decay = 0.0;
    let out = train_centralized(&mut m, &ds, Some(&ds), &c).unwrap();
    assert_eq!(m.params, before);
    assert_eq!(out.metrics.records.len(), 2);
    assert!(out.diverged.is_none());
}

#[test]
fn kernel_resnet8_learns_synthetic_data() {
    // noisy enough that 200 samples are not memorized within five epochs
    let ds = synth_dataset_with_noise(8, 25, (3, 16, 16), 200.0, &mut Rng::new(11, 0)).unwrap();
    let spec = ModelSpec::new(Architecture::ResNet8, NormKind::Kernel, 8).with_input(3, 16, 16).with_width_divisor(8);
    let mut m: Network<f64> = build_network(&spec, 5).unwrap();
    let mut c = cfg(20, 0.003, 2);
    c.preprocess = PreprocessSpec::standard(Normalization::Div255, 16);
    let out = train_centralized(&mut m, &ds, None, &c).unwrap();
    let accs = out.metrics.accs("train");
    assert_eq!(accs.len(), 20);
    let avgs: Vec<f64> = accs.chunks(5).map(|c| c.iter().sum::<f64>() / 5.0).collect();
    for w in avgs.windows(2) {
        assert!(w[1] > w[0], "5-epoch averages not increasing: {avgs:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let ds = synth(8, 1);
    let mut c = cfg(2, 0.05, 9);
    c.preprocess = PreprocessSpec::standard(Normalization::Div255, 16);
    let run = || {
        let mut m = net(NormKind::Kernel, 4);
        let out = train_centralized(&mut m, &ds, Some(&ds), &c).unwrap();
        (out.metrics.to_csv(false), m.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn one_small_step_descends_for_every_norm_kind() {
    let ds = synth(4, 2);
    let idx: Vec<usize> = (0..8).collect();
    let (x, y) = ds.batch::<f64>(&idx, &Normalization::Div255).unwrap();
    for kind in [NormKind::Batch, GROUP4, NormKind::Layer, NormKind::Instance, NormKind::Kernel] {
        let mut m = net(kind, 6);
        let opts = ForwardOpts::train(1, 1);
        let lg = m.loss_and_grads(&x, &y, &opts).unwrap();
        sgd_step(&mut m.params, &lg.grads, &mut SgdState::new(), &SgdConfig::plain(1e-3)).unwrap();
        let after = m.loss_and_grads(&x, &y, &opts).unwrap().loss;
        assert!(after < lg.loss, "{kind}: {} -> {after}", lg.loss);
    }
}

#[test]
fn divergence_stops_with_partial_metrics() {
    let ds = synth(8, 1);
    let mut m = net(GROUP4, 1);
    let first = m.params.names().next().unwrap().to_string();
    m.params.get_mut(&first).unwrap().data_mut()[0] = f64::NAN;
    let out = train_centralized(&mut m, &ds, None, &cfg(3, 0.1, 1)).unwrap();
    assert!(out.diverged.as_deref().unwrap().contains("epoch 0"), "{:?}", out.diverged);
    assert!(out.metrics.records.is_empty());
}

fn fed_cfg() -> FedConfig {
    FedConfig {
        rounds: 1,
        local_epochs: 1,
        batch: 8,
        sgd: SgdConfig::plain(0.05),
        schedule: Schedule::Constant,
        preprocess: PreprocessSpec::plain(Normalization::Div255),
        seed: 3,
    }
}

#[test]
fn weighted_average_matches_elementwise_oracle() {
    let mut rng = Rng::new(1, 1);
    let stores: Vec<ParamStore<f64>> = (0..3)
        .map(|_| {
            let mut s = ParamStore::new();
            s.insert("a", Tensor4::randn([2, 3, 1, 1], 1.0, &mut rng).unwrap());
            s.insert("b", Tensor4::randn([1, 4, 2, 2], 1.0, &mut rng).unwrap());
            s
        })
        .collect();
    let w = [0.5, 0.3, 0.2];
    let avg = weighted_average(&stores.iter().collect::<Vec<_>>(), &w).unwrap();
    for name in ["a", "b"] {
        let got = avg.get(name).unwrap();
        for i in 0..got.numel() {
            let want: f64 = (0..3).map(|k| w[k] * stores[k].get(name).unwrap().data()[i]).sum();
            assert!((got.data()[i] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn fedavg_single_client_is_local_training() {
    let ds = synth(6, 1);
    let shard: Vec<usize> = (0..ds.len()).collect();
    let c = fed_cfg();
    let mut global = net(NormKind::Kernel, 2);
    let mut local = global.clone();
    fedavg_round(&mut global, &ds, std::slice::from_ref(&shard), &c, 0, c.sgd.lr).unwrap();
    local_update(&mut local, &ds, &shard, &c, 0, 0, c.sgd.lr).unwrap();
    assert_eq!(global.params, local.params);
}

#[test]
fn fedavg_identical_clients_and_permutations() {
    let ds = synth(6, 1);
    let c = fed_cfg();
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut twin = net(GROUP4, 2);
    let mut single = twin.clone();
    fedavg_round(&mut twin, &ds, &[all.clone(), all.clone()], &c, 0, 0.05).unwrap();
    fedavg_round(&mut single, &ds, &[all], &c, 0, 0.05).unwrap();
    assert!(rel(&twin.params, &single.params) < 1e-15);

    let shards: Vec<Vec<usize>> = vec![(0..5).collect(), (5..12).collect(), (12..24).collect()];
    let mut a = net(NormKind::Kernel, 7);
    let mut b = a.clone();
    fedavg_round(&mut a, &ds, &shards, &c, 0, 0.05).unwrap();
    let rev: Vec<_> = shards.iter().rev().cloned().collect();
    fedavg_round(&mut b, &ds, &rev, &c, 0, 0.05).unwrap();
    assert!(rel(&a.params, &b.params) < 1e-14);
    for (name, t) in a.params.iter() {
        assert_eq!(t.shape(), b.params.get(name).unwrap().shape());
    }

    let err = fedavg_round(&mut a, &ds, &[vec![0, 1], vec![]], &c, 0, 0.05).unwrap_err();
    assert!(matches!(err, KnError::EmptyShard(1)));
}

fn dp_batch() -> (Tensor4<f64>, Vec<usize>) {
    let ds = synth(2, 4);
    let idx: Vec<usize> = (0..6).collect();
    ds.batch(&idx, &Normalization::Div255).unwrap()
}

#[test]
fn dp_without_clipping_or_noise_is_plain_sgd() {
    let (x, y) = dp_batch();
    let sgd = SgdConfig::plain(0.1);
    let opts = ForwardOpts::train(5, 1);
    let mut a = net(NormKind::Kernel, 3);
    let mut b = a.clone();
    let dp = DpConfig { clip_norm: None, noise_multiplier: 0.0 };
    dp_sgd_step(&mut a, &x, &y, &opts, &dp, &sgd, &mut SgdState::new(), &mut Rng::new(0, 0)).unwrap();
    let lg = b.loss_and_grads(&x, &y, &opts).unwrap();
    sgd_step(&mut b.params, &lg.grads, &mut SgdState::new(), &sgd).unwrap();
    assert!(rel(&a.params, &b.params) <= 1e-6);
}

#[test]
fn dp_clips_single_sample_to_exactly_c() {
    let (x, y) = dp_batch();
    let x1 = x.slice_batch(0..1).unwrap();
    let mut m = net(GROUP4, 3);
    let raw = global_norm(&m.loss_and_grads(&x1, &y[..1], &ForwardOpts::train(1, 1)).unwrap().grads);
    let c = raw / 3.0;
    let dp = DpConfig { clip_norm: Some(c), noise_multiplier: 0.0 };
    let r = dp_sgd_step(
        &mut m,
        &x1,
        &y[..1],
        &ForwardOpts::train(1, 1),
        &dp,
        &SgdConfig::plain(0.0),
        &mut SgdState::new(),
        &mut Rng::new(0, 0),
    )
    .unwrap();
    assert!((r.applied_norm - c).abs() <= 1e-12 * c, "{} vs {c}", r.applied_norm);
    assert_eq!(r.clipped, 1.0);
}

#[test]
fn per_sample_mean_matches_batch_gradient_when_independent() {
    let (x, y) = dp_batch();
    for kind in [NormKind::Kernel, GROUP4, NormKind::Layer, NormKind::Instance] {
        let mut m = net(kind, 8);
        let opts = ForwardOpts::train(2, 3);
        let per: Vec<_> = per_sample_grads(&mut m, &x, &y, &opts).unwrap().into_iter().map(|g| g.grads).collect();
        let batch = m.loss_and_grads(&x, &y, &opts).unwrap().grads;
        let e = rel(&mean_store(&per), &batch);
        assert!(e <= 1e-6, "{kind}: {e}");
    }
    let mut m = net(NormKind::Batch, 8);
    let opts = ForwardOpts::train(2, 3);
    let per: Vec<_> = per_sample_grads(&mut m, &x, &y, &opts).unwrap().into_iter().map(|g| g.grads).collect();
    let batch = m.loss_and_grads(&x, &y, &opts).unwrap().grads;
    let e = rel(&mean_store(&per), &batch);
    assert!(e >= 1e-4, "batch norm unexpectedly consistent: {e}");
}

#[test]
fn dp_rejects_batch_norm() {
    let (x, y) = dp_batch();
    let mut m = net(NormKind::Batch, 1);
    let dp = DpConfig { clip_norm: Some(1.0), noise_multiplier: 1.0 };
    let err =
        dp_sgd_step(&mut m, &x, &y, &ForwardOpts::train(0, 0), &dp, &SgdConfig::plain(0.1), &mut SgdState::new(), &mut Rng::new(0, 0))
            .unwrap_err();
    assert!(err.to_string().contains("per-sample gradients unavailable"), "{err}");
}

#[test]
fn dp_training_is_deterministic_and_noisy_runs_differ_by_seed() {
    let ds = synth(4, 1);
    let mut c = DpTrainConfig {
        epochs: 1,
        batch: 8,
        sgd: SgdConfig::plain(0.5),
        schedule: Schedule::Constant,
        dp: DpConfig { clip_norm: Some(1.0), noise_multiplier: 0.0 },
        preprocess: PreprocessSpec::plain(Normalization::Div255),
        seed: 1,
    };
    let run = |c: &DpTrainConfig| {
        let mut m = net(NormKind::Kernel, 2);
        train_dp(&mut m, &ds, None, c).unwrap();
        m.params
    };
    assert_eq!(run(&c), run(&c));
    c.dp.noise_multiplier = 1.0;
    let a = run(&c);
    c.seed = 2;
    assert_ne!(a, run(&c));
}
