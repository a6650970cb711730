mod common;

use fpgap_core::backends::kernels::{conv, dense, Kernel};
use fpgap_core::backends::quantized::{measure_layer_error, quantize_input, quantize_network};
use fpgap_core::backends::{infer, quantized_infer, QuantizationScheme};
use fpgap_core::modelgen::random_tiny_network;
use fpgap_core::rng::{self, Rng};
use fpgap_core::{BackendId, Conv2d, Dense, Rational, Scalar, Shape};
use proptest::prelude::*;

fn sym(r: &mut Rng) -> f32 {
    2.0 * rng::unit_f32(r) - 1.0
}

fn random_conv(r: &mut Rng) -> (Conv2d, Shape) {
    let (in_ch, out_ch) = (1 + rng::below(r, 3), 1 + rng::below(r, 3));
    let k = [1, 2, 3][rng::below(r, 3)];
    let padding = rng::below(r, 2);
    let shape = Shape::new(k + rng::below(r, 8), k + rng::below(r, 8), in_ch);
    let layer = Conv2d {
        out_ch,
        in_ch,
        kh: k,
        kw: k,
        padding,
        weights: (0..out_ch * in_ch * k * k).map(|_| sym(r)).collect(),
        bias: (0..out_ch).map(|_| sym(r)).collect(),
    };
    (layer, shape)
}

proptest! {
    #[test]
    fn kernels_agree_exactly_in_rationals(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let (layer, shape) = random_conv(&mut r);
        let input: Vec<Rational> = (0..shape.len()).map(|_| Rational::from_f32(rng::unit_f32(&mut r))).collect();
        let reference = conv(Kernel::Direct, &layer, &input, shape);
        for k in [Kernel::Im2col, Kernel::Pairwise, Kernel::Winograd] {
            prop_assert_eq!(&conv(k, &layer, &input, shape), &reference);
        }
        let d = Dense { rows: 3, cols: 5, weights: (0..15).map(|_| sym(&mut r)).collect(), bias: vec![0.5, -0.25, 1.0] };
        let x: Vec<Rational> = (0..5).map(|_| Rational::from_f32(sym(&mut r))).collect();
        let reference = dense(Kernel::Direct, &d, &x);
        for k in [Kernel::Im2col, Kernel::Pairwise, Kernel::Winograd] {
            prop_assert_eq!(&dense(k, &d, &x), &reference);
        }
    }

    #[test]
    fn single_precision_kernels_stay_close_to_exact(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let (layer, shape) = random_conv(&mut r);
        let x32: Vec<f32> = (0..shape.len()).map(|_| rng::unit_f32(&mut r)).collect();
        let xq: Vec<Rational> = x32.iter().map(|&v| Rational::from_f32(v)).collect();
        let exact = conv(Kernel::Direct, &layer, &xq, shape);
        for k in [Kernel::Direct, Kernel::Im2col, Kernel::Pairwise, Kernel::Winograd] {
            for (a, e) in conv(k, &layer, &x32, shape).iter().zip(&exact) {
                prop_assert!((*a as f64 - e.to_f64()).abs() <= 1e-5, "{:?}: {} vs {}", k, a, e);
            }
        }
    }

    #[test]
    fn inference_is_bit_deterministic(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let net = random_tiny_network(&mut r).unwrap();
        let x = common::random_image(&mut r, net.input_shape());
        for b in BackendId::ALL {
            prop_assert_eq!(infer(b, &net, &x).unwrap(), infer(b, &net, &x).unwrap());
        }
    }

    #[test]
    fn quantized_inference_is_backend_invariant(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let net = random_tiny_network(&mut r).unwrap();
        let (s0, s1) = (1.0 / 32.0, 1.0 / 32.0);
        let qnet = quantize_network(&net, &QuantizationScheme::new(s0, s1, s0 * s1 / 4.0).unwrap()).unwrap();
        let inputs: Vec<_> = (0..8).map(|_| quantize_input(&common::random_image(&mut r, net.input_shape()), s0)).collect();
        let e = measure_layer_error(&qnet, &inputs, (s0, s1), &BackendId::ALL).unwrap();
        let scheme = QuantizationScheme::new(s0, s1, (4.0 * e).max(f64::MIN_POSITIVE)).unwrap();
        for x in &inputs {
            let reference = quantized_infer(&qnet, x, &scheme, BackendId::ExactRat).unwrap();
            for b in BackendId::ALL {
                prop_assert_eq!(&quantized_infer(&qnet, x, &scheme, b).unwrap(), &reference);
            }
        }
    }
}

#[test]
fn single_precision_backends_diverge_on_the_demo() {
    let d = common::demo();
    let mut r = rng::seeded(77);
    let logits: Vec<Vec<Vec<u32>>> = (0..100)
        .map(|_| {
            let x = common::random_image(&mut r, d.net.input_shape());
            BackendId::SINGLE
                .iter()
                .map(|&b| fpgap_core::backends::infer_single(b, &d.net, &x).unwrap().scores().iter().map(|v| v.to_bits()).collect())
                .collect()
        })
        .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert!(
                logits.iter().any(|l| l[i] != l[j]),
                "{} and {} agree on all inputs",
                BackendId::SINGLE[i],
                BackendId::SINGLE[j]
            );
        }
    }
}

#[test]
fn refused_schemes() {
    assert!(QuantizationScheme::new(1.0 / 64.0, 1.0 / 64.0, 1.0 / 8192.0).is_err());
    assert!(QuantizationScheme::new(1.0 / 64.0, 1.0 / 64.0, 1.0 / 8193.0).is_ok());
}
