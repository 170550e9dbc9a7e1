use std::collections::BTreeSet;

use kn_core::autodiff::Tape;
use kn_core::data::{augment_batch, noniid_partition, stratified_subset, synth_dataset, Normalization, PreprocessSpec};
use kn_core::models::ParamStore;
use kn_core::train::{sgd_step, SgdConfig, SgdState};
use kn_core::{Rng, Tensor4};

#[test]
fn synthetic_data_is_linearly_separable() {
    let ds = synth_dataset(4, 50, (3, 8, 8), &mut Rng::new(7, 0)).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let (x, y) = ds.batch::<f64>(&all, &Normalization::Div255).unwrap();
    let feats = 3 * 8 * 8;
    let mut params = ParamStore::new();
    params.insert("w", Tensor4::zeros([4, feats, 1, 1]).unwrap());
    params.insert("b", Tensor4::zeros([1, 4, 1, 1]).unwrap());
    let mut state = SgdState::new();
    let cfg = SgdConfig::standard(0.05);
    let mut order = all.clone();
    let mut acc = 0.0;
    for epoch in 0..20 {
        Rng::new(1, epoch).shuffle(&mut order);
        for chunk in order.chunks(20) {
            let xb = x.select_batch(chunk).unwrap();
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let mut t = Tape::new();
            let w = t.param(params.get("w").unwrap().clone());
            let b = t.param(params.get("b").unwrap().clone());
            let xv = t.constant(xb);
            let logits = t.linear(xv, w, Some(b)).unwrap();
            let loss = t.softmax_cross_entropy(logits, &yb).unwrap();
            let mut g = t.backward(loss).unwrap();
            let mut grads = ParamStore::new();
            grads.insert("w", g.take(w).unwrap());
            grads.insert("b", g.take(b).unwrap());
            sgd_step(&mut params, &grads, &mut state, &cfg).unwrap();
        }
        let logits = kn_core::ops::linear::linear(&x, params.get("w").unwrap(), Some(params.get("b").unwrap())).unwrap();
        let pred = kn_core::ops::loss::argmax_rows(&logits);
        acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
    }
    assert!(acc > 0.9, "linear probe train accuracy {acc}");
}

#[test]
fn batch_normalization_round_trips_to_bytes() {
    let ds = synth_dataset(3, 4, (3, 5, 5), &mut Rng::new(2, 0)).unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let norm = Normalization::cifar10();
    let (x, _) = ds.batch::<f64>(&idx, &norm).unwrap();
    for (n, &i) in idx.iter().enumerate() {
        for (k, &byte) in ds.image(i).iter().enumerate() {
            let v = x.sample(n)[k];
            assert!((norm.invert(v, k / 25) - byte as f64).abs() <= 1e-6);
        }
    }
}

#[test]
fn augmentation_keeps_labels_and_order() {
    let ds = synth_dataset(5, 4, (3, 8, 8), &mut Rng::new(3, 0)).unwrap();
    let idx: Vec<usize> = (0..ds.len()).rev().collect();
    let (x, y) = ds.batch::<f32>(&idx, &Normalization::Div255).unwrap();
    let spec = PreprocessSpec::standard(Normalization::Div255, 8);
    let a = augment_batch(&x, &spec, &mut Rng::new(9, 9)).unwrap();
    assert_eq!(a.shape(), x.shape());
    assert_eq!(y, idx.iter().map(|&i| ds.label(i)).collect::<Vec<_>>());
    // each augmented sample only holds its own pixels or padding zeros
    for n in 0..idx.len() {
        let own: BTreeSet<u32> = x.sample(n).iter().map(|v| v.to_bits()).collect();
        assert!(a.sample(n).iter().all(|v| *v == 0.0 || own.contains(&v.to_bits())));
    }
}

#[test]
fn synthetic_federation_partition() {
    let ds = synth_dataset(10, 20, (3, 4, 4), &mut Rng::new(1, 0)).unwrap();
    let parts = noniid_partition(&ds, 10, 2, &mut Rng::new(4, 0)).unwrap();
    let mut seen = BTreeSet::new();
    for p in &parts {
        assert_eq!(p.iter().map(|&i| ds.label(i)).collect::<BTreeSet<_>>().len(), 2);
        seen.extend(p.iter().copied());
    }
    assert_eq!(seen.len(), ds.len());
    let again = noniid_partition(&ds, 10, 2, &mut Rng::new(4, 0)).unwrap();
    assert_eq!(parts, again);
    let sub = stratified_subset(&ds, 50, &mut Rng::new(0, 0)).unwrap();
    assert_eq!(sub.len(), 50);
}
