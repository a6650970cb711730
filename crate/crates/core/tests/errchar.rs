mod common;

use fpgap_core::errchar::{
    bin_edges, cross_backend_histogram, local_sweep, max_gradient_element, max_gradient_element_with_step,
    sweep_csv, sweep_median, SWEEP_RANGE, SWEEP_STEPS,
};
use fpgap_core::rng;
use fpgap_core::BackendId;
use proptest::prelude::*;

fn compared_backends() -> Vec<BackendId> {
    [&[BackendId::RefF64][..], &BackendId::SINGLE[..]].concat()
}

#[test]
fn gradient_element_is_stable_under_the_step() {
    let d = common::demo();
    for &i in &d.seeds[..4] {
        let x = &d.data.images[i];
        let e = max_gradient_element(&d.net, x).unwrap();
        for h in [1e-2, 1e-4] {
            assert_eq!(max_gradient_element_with_step(&d.net, x, h).unwrap(), e, "image {i}, h = {h}");
        }
    }
}

#[test]
fn winograd_drifts_more_than_direct_in_the_local_sweep() {
    let d = common::demo();
    let x = &d.data.images[d.data.num_train];
    let e = max_gradient_element(&d.net, x).unwrap();
    let backends = compared_backends();
    let rows = local_sweep(&d.net, x, e, SWEEP_RANGE, SWEEP_STEPS, &backends).unwrap();
    assert_eq!(rows.len(), SWEEP_STEPS * backends.len());
    let wino = sweep_median(&rows, BackendId::WinogradF32).unwrap();
    let direct = sweep_median(&rows, BackendId::DirectF32).unwrap();
    assert!(wino > direct, "winograd {wino:e} vs direct {direct:e}");

    let mid = SWEEP_STEPS / 2;
    for r in &rows[mid * backends.len()..(mid + 1) * backends.len()] {
        assert_eq!((r.delta, r.linf_change), (0.0, 0.0));
    }
    let again = local_sweep(&d.net, x, e, SWEEP_RANGE, SWEEP_STEPS, &backends).unwrap();
    assert_eq!(sweep_csv(&rows), sweep_csv(&again));
    assert_eq!(sweep_csv(&rows).lines().count(), rows.len() + 1);
}

#[test]
fn winograd_has_the_widest_histogram_against_the_double_reference() {
    let d = common::demo();
    let images = &d.data.images[d.data.num_train..];
    let backends = compared_backends();
    let h = cross_backend_histogram(images, &d.net, &backends, BackendId::RefF64).unwrap();
    let wino = h.get(BackendId::WinogradF32).unwrap();
    for b in [BackendId::DirectF32, BackendId::Im2colF32, BackendId::PairwiseF32] {
        assert!(wino.median > h.get(b).unwrap().median, "{b}");
    }
    assert!(h.get(BackendId::RefF64).unwrap().counts[0] == h.compared);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn histogram_counts_every_element_once(seed in any::<u64>(), n in 1usize..6) {
        let d = common::demo();
        let mut r = rng::seeded(seed);
        let images: Vec<_> = (0..n).map(|_| common::random_image(&mut r, d.net.input_shape())).collect();
        let backends = compared_backends();
        let h = cross_backend_histogram(&images, &d.net, &backends, BackendId::Im2colF32).unwrap();
        prop_assert_eq!(&h.edges, &bin_edges());
        prop_assert_eq!(h.compared as usize, n * d.net.shapes()[1].len());
        for b in &h.backends {
            prop_assert_eq!(b.counts.iter().sum::<u64>(), h.compared);
            prop_assert!(b.median <= b.max);
        }
        prop_assert_eq!(h.get(BackendId::Im2colF32).map(|b| b.max), Some(0.0));
        let csv = h.to_csv();
        prop_assert_eq!(csv.lines().count(), 1 + backends.len() * h.edges.len());
    }

    #[test]
    fn sweep_rows_follow_the_grid(seed in any::<u64>(), steps in 1usize..40, range in 0.0f64..1e-3) {
        let d = common::demo();
        let x = common::random_image(&mut rng::seeded(seed), d.net.input_shape());
        let e = (seed % x.len() as u64) as usize;
        let backends = [BackendId::DirectF32, BackendId::WinogradF32];
        let rows = local_sweep(&d.net, &x, e, range, steps, &backends).unwrap();
        prop_assert_eq!(rows.len(), steps * backends.len());
        for (k, pair) in rows.chunks(backends.len()).enumerate() {
            prop_assert!(pair.iter().zip(&backends).all(|(r, b)| r.backend == *b && r.delta == pair[0].delta));
            prop_assert!(pair[0].delta.abs() <= range);
            if k > 0 {
                prop_assert!(rows[(k - 1) * backends.len()].delta <= pair[0].delta);
            }
        }
        prop_assert!(local_sweep(&d.net, &x, x.len(), range, steps, &backends).is_err());
    }
}
