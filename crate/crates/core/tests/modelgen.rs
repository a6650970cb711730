mod common;

use std::time::Duration;

use fpgap_core::io::LayerSpec;
use fpgap_core::modelgen::{
    accuracy, gen_dataset, load_dataset, random_region, random_tiny_network, save_dataset, train, ArchSpec, RunSpec,
    Split, TrainConfig,
};
use fpgap_core::rng;
use fpgap_core::verifier::{Arithmetic, Verifier};
use fpgap_core::{Layer, PerturbationSet};
use proptest::prelude::*;

#[test]
fn a_linear_probe_separates_the_toy_classes() {
    let data = RunSpec::load(&common::demo_dir().join("train.toml")).unwrap().dataset().unwrap();
    let arch = ArchSpec { input_shape: [8, 8, 1], layers: vec![LayerSpec::Flatten, LayerSpec::Dense { rows: 3, cols: 64 }] };
    let cfg = TrainConfig { seed: 1, epochs: 60, lr: 0.05, batch_size: 16, pgd: Default::default() };
    let net = train(&arch, &data, &cfg).unwrap();
    let acc = accuracy(&net, &data, data.test_indices());
    assert!(acc > 0.8, "linear probe test accuracy {acc}");
}

#[test]
fn retraining_reproduces_the_shipped_demo_model() {
    let spec = RunSpec::load(&common::demo_dir().join("train.toml")).unwrap();
    let (data, net) = spec.run().unwrap();
    let demo = common::demo();
    assert_eq!(data, demo.data);
    let bits = |n: &fpgap_core::Network| n.parameters().map(f32::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(&net), bits(&demo.net));
    assert_eq!(net, demo.net);
    assert!(accuracy(&net, &data, data.test_indices()) >= 0.9);
}

#[test]
fn demo_seeds_are_verified_robust_at_the_demo_radius() {
    let d = common::demo();
    let verifier = Verifier::new(Arithmetic::Double, Duration::from_secs(60));
    for &i in &d.seeds {
        assert_eq!(d.data.split(i), Split::Test);
        let region = PerturbationSet::new(d.data.images[i].clone(), d.eps).unwrap();
        let r = verifier.worst(&d.net, &region, d.data.labels[i], 0.0).unwrap();
        assert!(r.is_robust(), "seed {i}: {}", r.label());
    }
}

#[test]
fn datasets_are_deterministic_and_round_trip() {
    let a = gen_dataset(5, 120, 4).unwrap();
    assert_eq!(a, gen_dataset(5, 120, 4).unwrap());
    assert_ne!(a, gen_dataset(6, 120, 4).unwrap());
    assert_eq!(a.num_train, 96);
    assert!(a.labels.iter().all(|&l| l < 4));
    assert!(a.images.iter().flat_map(|x| x.data()).all(|&v| (0.0..=1.0).contains(&v)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.fpgap");
    save_dataset(&a, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), a);
    assert!(gen_dataset(5, 120, 1).is_err());
    assert!(gen_dataset(5, 0, 3).is_err());
}

proptest! {
    #[test]
    fn tiny_networks_stay_tiny(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let net = random_tiny_network(&mut r).unwrap();
        let relus: usize = net
            .layers()
            .iter()
            .zip(net.shapes())
            .filter(|(l, _)| matches!(l, Layer::Relu))
            .map(|(_, s)| s.len())
            .sum();
        prop_assert!(relus <= 8);
        prop_assert!((2..=3).contains(&net.num_classes()));
        let region = random_region(&mut r, net.input_shape()).unwrap();
        prop_assert!((0.02..0.4).contains(&region.eps()));
        prop_assert!(region.center().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
