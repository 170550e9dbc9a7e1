use kn_core::knconv::KnConvRegistry;
use kn_core::verify::{grad_cases, run_verify, Report, VerifyOptions, GRAD_TOL};

fn suite(name: &str) -> Report {
    run_verify(&VerifyOptions::default().with_filter(name)).unwrap()
}

#[test]
fn every_layer_passes_finite_differences() {
    let r = suite("grad");
    assert!(r.passed(), "{}", r.table());
    assert!(r.worst("grad").unwrap() <= GRAD_TOL);
    let names: Vec<String> = grad_cases(&KnConvRegistry::with_builtins(), 0).into_iter().map(|c| c.name).collect();
    for required in [
        "conv2d",
        "relu",
        "mish",
        "max_pool",
        "avg_pool",
        "adaptive_avg_pool",
        "linear+cross_entropy",
        "kernel_norm dropout",
        "kn_mean_var dropout",
        "group_norm",
        "layer_norm",
        "instance_norm",
        "batch_norm train",
        "batch_norm eval",
        "knconv naive k3s1p1",
        "knconv efficient k3s1p1",
        "knconv efficient k2s1p1 dropout",
    ] {
        assert!(names.iter().any(|n| n == required), "missing gradient case {required}");
    }
    for gc in grad_cases(&KnConvRegistry::with_builtins(), 0) {
        assert!(gc.inputs.iter().all(|t| t.numel() <= 1000), "{} too large", gc.name);
    }
}

#[test]
fn independence_suite_passes() {
    let r = suite("independence");
    assert!(r.passed(), "{}", r.table());
    assert_eq!(r.suite("independence").count(), 11);
}

#[test]
fn shape_oracle_passes() {
    let r = suite("shape");
    assert!(r.passed(), "{}", r.table());
}

#[test]
fn filter_selects_one_suite() {
    let r = suite("grad");
    assert!(r.cases.iter().all(|c| c.suite == "grad"));
    assert_eq!(r.suite_ms.len(), 1);
    assert!(r.table().lines().next().unwrap().starts_with("suite"));
}
