use kn_core::autodiff::Tape;
use kn_core::gradcheck::{compare, numeric_gradient, DEFAULT_STEP};
use kn_core::models::{
    build_network, kn_basic_block, kn_vgg_block, load_checkpoint, save_checkpoint, Activation, Architecture, ForwardOpts, GraphBuilder,
    Manifest, ModelSpec, Network, NormKind, Shortcut,
};
use kn_core::{DType, Rng, Shape4, Tensor4};

const ALL_NORMS: [NormKind; 5] =
    [NormKind::Batch, NormKind::Group { group_size: 32 }, NormKind::Layer, NormKind::Instance, NormKind::Kernel];

fn fragment(
    input: (usize, usize, usize),
    f: impl FnOnce(&mut GraphBuilder<f32>) -> kn_core::Result<kn_core::models::NodeId>,
) -> Network<f32> {
    let mut g = GraphBuilder::<f32>::new(input, 3).unwrap();
    let out = f(&mut g).unwrap();
    let (graph, p, b) = g.finish(out);
    Network::new(graph, p, b).unwrap()
}

#[test]
fn vgg_block_shapes_and_names() {
    let net = fragment((64, 32, 32), |g| kn_vgg_block(g, g.input(), 128, true, 0.1, Activation::Relu));
    assert_eq!(net.graph.output_shape(), Shape4::new(1, 128, 16, 16));
    let names: Vec<_> = net.params.names().collect();
    assert_eq!(names, ["conv.weight", "conv.bias"]);
    let net = fragment((16, 9, 7), |g| kn_vgg_block(g, g.input(), 8, false, 0.1, Activation::Relu));
    assert_eq!(net.graph.output_shape(), Shape4::new(1, 8, 9, 7));
}

#[test]
fn basic_block_shapes() {
    let id = fragment((128, 16, 16), |g| kn_basic_block(g, g.input(), 128, Shortcut::Identity, 0.1, Activation::Relu));
    assert_eq!(id.graph.output_shape(), Shape4::new(1, 128, 16, 16));
    let conv = fragment((128, 16, 16), |g| kn_basic_block(g, g.input(), 256, Shortcut::Conv, 0.1, Activation::Relu));
    assert_eq!(conv.graph.output_shape(), Shape4::new(1, 256, 8, 8));
    let mut g = GraphBuilder::<f32>::new((8, 4, 4), 0).unwrap();
    let x = g.input();
    assert!(kn_basic_block(&mut g, x, 16, Shortcut::Identity, 0.1, Activation::Relu).is_err());
}

#[test]
fn zero_branches_give_activation_of_zero() {
    let mut net = fragment((4, 8, 8), |g| kn_basic_block(g, g.input(), 8, Shortcut::Conv, 0.1, Activation::Relu));
    for (_, t) in net.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = Tensor4::<f32>::randn([2, 4, 8, 8], 1.0, &mut Rng::new(0, 0)).unwrap();
    let y = net.predict(&x).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn resnet8_every_norm_kind() {
    let x = Tensor4::<f32>::randn([4, 3, 32, 32], 1.0, &mut Rng::new(1, 0)).unwrap();
    let mut counts = Vec::new();
    for norm in ALL_NORMS {
        let mut net = build_network::<f32>(&ModelSpec::new(Architecture::ResNet8, norm, 10), 0).unwrap();
        assert_eq!(net.predict(&x).unwrap().shape(), Shape4::new(4, 10, 1, 1));
        let fc = net.params.get("fc.weight").unwrap().shape();
        assert_eq!((fc.n, fc.c), (10, 1024));
        counts.push((norm, net.param_count()));
    }
    let batch = counts[0].1;
    let kernel = counts[4].1;
    assert!(batch > kernel, "{batch} vs {kernel}");
}

#[test]
fn kernel_models_have_no_affine_norms() {
    for arch in [Architecture::Vgg9, Architecture::ResNet8, Architecture::PreactResNet18, Architecture::ResNet18] {
        let side = if arch == Architecture::ResNet18 { 64 } else { 32 };
        let spec = ModelSpec::new(arch, NormKind::Kernel, 10).with_input(3, side, side).with_width_divisor(8);
        let net = build_network::<f32>(&spec, 0).unwrap();
        assert_eq!(net.graph.count("norm"), 0, "{arch}");
        assert_eq!(net.graph.count("conv"), 0, "{arch}");
        assert!(net.graph.count("knconv") > 0);
        assert!(net.graph.count("kernel_norm") > 0);
        assert!(net.params.names().all(|n| n.ends_with(".weight") || n.ends_with(".bias")));
        assert!(net.buffers.is_empty());
        assert!(net.batch_independent().unwrap());
    }
}

#[test]
fn vgg9_topology() {
    for norm in [NormKind::Batch, NormKind::Kernel] {
        let mut net = build_network::<f32>(&ModelSpec::new(Architecture::Vgg9, norm, 100), 0).unwrap();
        let convs = net.graph.count("conv") + net.graph.count("knconv");
        assert_eq!(convs, 8);
        assert_eq!(net.graph.count("linear"), 1);
        let x = Tensor4::<f32>::zeros([1, 3, 32, 32]).unwrap();
        assert_eq!(net.predict(&x).unwrap().shape(), Shape4::new(1, 100, 1, 1));
    }
}

#[test]
fn preact_resnet18_shape() {
    let x = Tensor4::<f32>::randn([2, 3, 32, 32], 1.0, &mut Rng::new(2, 0)).unwrap();
    for norm in [NormKind::Group { group_size: 32 }, NormKind::Kernel] {
        let mut net = build_network::<f32>(&ModelSpec::new(Architecture::PreactResNet18, norm, 100), 0).unwrap();
        assert_eq!(net.predict(&x).unwrap().shape(), Shape4::new(2, 100, 1, 1));
    }
}

#[test]
fn resnet18_imagenette_geometry() {
    let x = Tensor4::<f32>::randn([1, 3, 160, 160], 1.0, &mut Rng::new(3, 0)).unwrap();
    for norm in [NormKind::Batch, NormKind::Kernel] {
        let spec = ModelSpec::new(Architecture::ResNet18, norm, 10).with_input(3, 160, 160);
        let mut net = build_network::<f32>(&spec, 0).unwrap();
        assert_eq!(net.predict(&x).unwrap().shape(), Shape4::new(1, 10, 1, 1));
    }
}

#[test]
fn build_is_deterministic() {
    let spec = ModelSpec::new(Architecture::ResNet8, NormKind::Kernel, 10).with_width_divisor(4);
    let a = build_network::<f32>(&spec, 11).unwrap();
    let b = build_network::<f32>(&spec, 11).unwrap();
    let c = build_network::<f32>(&spec, 12).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
}

#[test]
fn batch_independence_end_to_end() {
    let mut rng = Rng::new(4, 0);
    let x = Tensor4::<f64>::randn([4, 3, 16, 16], 1.0, &mut rng).unwrap();
    let ids = [10u64, 11, 12, 13];
    for norm in ALL_NORMS {
        let spec = ModelSpec::new(Architecture::ResNet8, norm, 10).with_input(3, 16, 16).with_width_divisor(8);
        let mut net = build_network::<f64>(&spec, 0).unwrap();
        let joint = net.run(&x, &ForwardOpts::train(5, 1).with_ids(&ids)).unwrap();
        let mut dev: f64 = 0.0;
        for (lo, hi) in [(0, 1), (1, 4)] {
            let part = x.slice_batch(lo..hi).unwrap();
            let alone = net.run(&part, &ForwardOpts::train(5, 1).with_ids(&ids[lo..hi])).unwrap();
            let joint_part = joint.slice_batch(lo..hi).unwrap();
            for (a, b) in alone.data().iter().zip(joint_part.data()) {
                dev = dev.max((a - b).abs());
            }
        }
        if norm == NormKind::Batch {
            assert!(dev >= 1e-3, "batch norm deviation {dev}");
        } else {
            assert!(dev <= 1e-5, "{norm} deviation {dev}");
        }
    }
}

#[test]
fn truncated_kernel_model_gradients() {
    let mut rng = Rng::new(6, 0);
    let x = Tensor4::<f64>::randn([2, 2, 6, 6], 1.0, &mut rng).unwrap();
    let mut g = GraphBuilder::<f64>::new((2, 6, 6), 1).unwrap();
    let input = g.input();
    let a = g.scoped("b1", |g| kn_vgg_block(g, input, 3, true, 0.1, Activation::Mish)).unwrap();
    let b = g.scoped("b2", |g| kn_basic_block(g, a, 3, Shortcut::Identity, 0.1, Activation::Mish)).unwrap();
    let f = g.flatten(b);
    let out = g.linear("fc", f, 3).unwrap();
    let (graph, params, buffers) = g.finish(out);
    let net = Network::new(graph, params.clone(), buffers).unwrap();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let inputs = [x];
    let labels = [0usize, 2];
    let mut n = net.clone();
    let opts = ForwardOpts::train(3, 0);
    let lg = n.loss_and_grads(&inputs[0], &labels, &opts).unwrap();
    for name in &names {
        let p = n.params.get(name).unwrap().clone();
        let numeric = numeric_gradient(
            |probe| {
                let mut m = net.clone();
                *m.params.get_mut(name)? = probe.clone();
                let mut t = Tape::new();
                let f = m.forward(&mut t, &inputs[0], &opts, false)?;
                let l = t.softmax_cross_entropy(f.output, &labels)?;
                Ok(t.value(l).data()[0])
            },
            &p,
            DEFAULT_STEP,
        )
        .unwrap();
        let r = compare(lg.grads.get(name).unwrap(), &numeric);
        assert!(r.passes(1e-5), "{name}: {r:?}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::new(Architecture::ResNet8, NormKind::Batch, 10).with_input(3, 16, 16).with_width_divisor(16);
    let mut net = build_network::<f32>(&spec, 5).unwrap();
    let x = Tensor4::<f32>::randn([2, 3, 16, 16], 1.0, &mut Rng::new(0, 0)).unwrap();
    net.run(&x, &ForwardOpts::train(0, 0)).unwrap();
    save_checkpoint(dir.path(), &net, Manifest::new(&spec, 5, 42, DType::F32)).unwrap();
    let (m, mut back) = load_checkpoint::<f32>(dir.path()).unwrap();
    assert_eq!(m.step, 42);
    assert_eq!(m.norm, NormKind::Batch);
    assert_eq!(back.params, net.params);
    assert_eq!(back.buffers, net.buffers);
    assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    for k in ["architecture", "norm", "seed", "step"] {
        assert!(json.get(k).is_some());
    }
}
