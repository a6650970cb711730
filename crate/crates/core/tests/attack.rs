use std::time::Duration;

use fpgap_core::attack::{alpha_search, bias_shift, clamp_bounds, scale_image};
use fpgap_core::backends::{infer_typed, Kernel};
use fpgap_core::verifier::{Arithmetic, Verifier};
use fpgap_core::{Dense, ImageTensor, Layer, Network, Rational, Scalar, Shape};
use proptest::prelude::*;

/// Two classes: `y0 = Σx − 1/2`, `y1 = 0`.
fn sum_model(n: usize) -> Network {
    let dense = Dense { rows: 2, cols: n, weights: [vec![1.0; n], vec![0.0; n]].concat(), bias: vec![-0.5, 0.0] };
    Network::new(Shape::new(1, n, 1), vec![Layer::Flatten, Layer::Dense(dense)]).unwrap()
}

#[test]
fn alpha_search_finds_the_analytic_threshold() {
    // With every pixel at 1/2, the worst case of α·x over the ball is
    // n(α/2 − ε) − 1/2, positive exactly for α > 1/n + 2ε.
    let n = 4;
    let eps = 1.0 / 128.0;
    let net = sum_model(n);
    let seed = ImageTensor::new(Shape::new(1, n, 1), vec![0.5f32; n]).unwrap();
    let verifier = Verifier::new(Arithmetic::Double, Duration::from_secs(10));
    let r = alpha_search(&verifier, &net, &seed, eps, 0, 1e-7).unwrap();
    let threshold = 1.0 / n as f64 + 2.0 * eps;
    assert!(r.alpha >= threshold - 1e-7, "alpha {} below {threshold}", r.alpha);
    assert!(r.alpha - r.delta <= threshold + 1e-7);
    assert!(r.delta <= 1e-7 && !r.used_grid);
    assert_eq!(r.x0, scale_image(&seed, r.alpha));
}

fn small_net(bias: f32) -> Network {
    let hidden = Dense { rows: 3, cols: 4, weights: vec![0.5, -0.25, 1.0, 0.75, -1.0, 0.5, 0.25, 0.125, 0.3, 0.3, -0.7, 0.1], bias: vec![0.1, 0.0, -0.2] };
    let out = Dense { rows: 3, cols: 3, weights: vec![1.0, -0.5, 0.25, 0.5, 1.0, -1.0, -0.75, 0.2, 0.6], bias: vec![bias, 0.05, -0.1] };
    Network::new(Shape::new(2, 2, 1), vec![Layer::Flatten, Layer::Dense(hidden), Layer::Relu, Layer::Dense(out)]).unwrap()
}

fn last_bias(net: &Network) -> &[f32] {
    match net.layers().last() {
        Some(Layer::Dense(d)) => &d.bias,
        _ => unreachable!(),
    }
}

proptest! {
    #[test]
    fn bias_shift_moves_only_the_target_logit(
        bias in -2.0f32..2.0,
        tau0 in prop_oneof![Just(0.0), 1e-9f64..1e-3, 1e-3f64..2.0],
        t0 in 0usize..3,
        pixels in prop::collection::vec(0.0f32..=1.0, 4),
    ) {
        let net = small_net(bias);
        let shifted = bias_shift(&net, t0, tau0).unwrap();
        let (b_old, b_new) = (last_bias(&net)[t0], last_bias(&shifted)[t0]);
        let drop = Rational::from_f32(b_old) - Rational::from_f32(b_new);
        let tau = Rational::from_f64(tau0);
        prop_assert!(drop <= tau);
        prop_assert!(Rational::from_f32(b_old) - Rational::from_f32(b_new.next_down()) > tau);

        let x = ImageTensor::new(Shape::new(2, 2, 1), pixels).unwrap();
        let before = infer_typed::<Rational>(Kernel::Direct, &net, &x).unwrap();
        let after = infer_typed::<Rational>(Kernel::Direct, &shifted, &x).unwrap();
        for (j, (a, b)) in before.scores().iter().zip(after.scores()).enumerate() {
            if j == t0 {
                prop_assert_eq!(a - b, drop.clone());
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn clamp_bounds_stay_inside_the_ball_in_both_precisions(
        pixels in prop::collection::vec(prop_oneof![Just(0.0f32), Just(1.0f32), 0.0f32..=1.0, 0.0f32..1e-30], 1..32),
        eps in prop_oneof![Just(1.0 / 128.0), 1e-9f64..0.5, 1e-40f64..1e-30],
    ) {
        let x0 = ImageTensor::new(Shape::new(1, pixels.len(), 1), pixels).unwrap();
        let b = clamp_bounds(&x0, eps);
        let e32 = eps as f32;
        for ((&c, &l), &u) in x0.data().iter().zip(b.lower.data()).zip(b.upper.data()) {
            prop_assert!(0.0 <= l && l <= c && c <= u && u <= 1.0);
            prop_assert!(l as f64 >= (c as f64 - eps).max(0.0));
            prop_assert!(u as f64 <= (c as f64 + eps).min(1.0));
            prop_assert!(c - l <= e32 && u - c <= e32);
            // each bound is as wide as allowed
            let start_l = (c - e32).max(0.0);
            let wider_l = l.next_down();
            prop_assert!(l == start_l || (c - wider_l) > e32 || (c as f64 - wider_l as f64) > eps);
            let start_u = (c + e32).min(1.0);
            let wider_u = u.next_up();
            prop_assert!(u == start_u || (wider_u - c) > e32 || (wider_u as f64 - c as f64) > eps);
        }
    }

    #[test]
    fn scale_image_rounds_once_and_clamps(
        pixels in prop::collection::vec(0.0f32..=1.0, 1..16),
        alpha in 0.0f64..1.5,
    ) {
        let x = ImageTensor::new(Shape::new(1, pixels.len(), 1), pixels).unwrap();
        let y = scale_image(&x, alpha);
        for (&a, &b) in x.data().iter().zip(y.data()) {
            prop_assert_eq!(b, ((alpha * a as f64) as f32).min(1.0));
        }
        prop_assert_eq!(&scale_image(&x, 1.0), &x);
        prop_assert!(scale_image(&x, 0.0).data().iter().all(|&v| v == 0.0));
    }
}
