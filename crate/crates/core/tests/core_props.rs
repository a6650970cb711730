use fpgap_core::modelgen::random_tiny_network;
use fpgap_core::rng;
use fpgap_core::{cw_loss, load_model, save_model, Error, NextAfter, Precision, Rational, Scalar};
use num_traits::Signed;
use proptest::prelude::*;

proptest! {
    #[test]
    fn cw_positive_iff_strict_argmax(y in prop::collection::vec(-4i32..4, 2..6), t in 0usize..6) {
        let t = t % y.len();
        let y: Vec<f64> = y.iter().map(|&v| v as f64 * 0.5).collect();
        let cw = cw_loss(&y, t).unwrap();
        let strict = y.iter().enumerate().all(|(i, &v)| i == t || v < y[t]);
        prop_assert_eq!(cw > 0.0, strict);
        let tie = y.iter().enumerate().any(|(i, &v)| i != t && v == y[t]) && y.iter().all(|&v| v <= y[t]);
        prop_assert_eq!(cw == 0.0, tie);
    }

    #[test]
    fn cw_sign_is_exact_in_rationals(y in prop::collection::vec(-1000i64..1000, 2..5), t in 0usize..5) {
        let t = t % y.len();
        let yq: Vec<Rational> = y.iter().map(|&v| Rational::from_ratio(v, 7)).collect();
        let cw = cw_loss(&yq, t).unwrap();
        let strict = y.iter().enumerate().all(|(i, &v)| i == t || v < y[t]);
        prop_assert_eq!(cw.is_positive(), strict);
    }

    #[test]
    fn widening_is_exact(bits in any::<u32>()) {
        let v = f32::from_bits(bits);
        prop_assume!(v.is_finite());
        prop_assert_eq!(Rational::from_f32(v), Rational::from_f64(v as f64));
        prop_assert_eq!(v as f64 as f32, v);
    }

    #[test]
    fn next_after_steps_back(bits in any::<u32>()) {
        let v = f32::from_bits(bits);
        prop_assume!(v.is_normal());
        prop_assert_eq!(v.next_after(f32::INFINITY).next_after(f32::NEG_INFINITY), v);
        prop_assert_eq!(v.next_after(f32::NEG_INFINITY).next_after(f32::INFINITY), v);
        let w = v as f64;
        let up = fpgap_core::next_after(w, f64::INFINITY, Precision::Single);
        prop_assert_eq!(fpgap_core::next_after(up, f64::NEG_INFINITY, Precision::Single), w);
    }

    #[test]
    fn save_load_preserves_bits(seed in any::<u64>()) {
        let net = random_tiny_network(&mut rng::seeded(seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fpgap");
        save_model(&net, &path).unwrap();
        let back = load_model(&path).unwrap();
        let a: Vec<u32> = net.parameters().map(f32::to_bits).collect();
        let b: Vec<u32> = back.parameters().map(f32::to_bits).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back, net);
    }
}

#[test]
fn corrupted_containers_are_rejected() {
    let net = random_tiny_network(&mut rng::seeded(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fpgap");
    save_model(&net, &path).unwrap();
    let blob = dir.path().join("m.bin");
    let bytes = std::fs::read(&blob).unwrap();

    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format(_))));
    std::fs::write(&blob, [&bytes[..], &[0u8; 4]].concat()).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format(_))));
    let mut nan = bytes.clone();
    nan[..4].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&blob, nan).unwrap();
    assert!(matches!(load_model(&path), Err(Error::NonFinite(_))));

    std::fs::write(&blob, &bytes).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("FPGAP-MODEL-v1", "FPGAP-MODEL-v2", 1)).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format(_))));
    std::fs::write(&path, text.replace("blob = \"m.bin\"", "blob = \"../m.bin\"")).unwrap();
    assert!(load_model(&path).is_err());
}
