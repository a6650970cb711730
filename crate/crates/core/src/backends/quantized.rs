//! Lattice-quantized inference.
//!
//! Activations are multiples of `s0`, weights multiples of `s1` and biases
//! multiples of `s0·s1`, so every exact linear-layer output is a multiple of
//! `s0·s1`. When a backend's error on a layer stays below `E` and
//! `s0·s1 > 2E`, rounding the computed output to the nearest multiple of
//! `s0·s1` recovers the exact value, and the logits become identical across
//! backends. Post-ReLU activations are requantized to the `s0` lattice so
//! the premise holds again for the next layer.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use super::{apply_layer, BackendId, Kernel};
use crate::error::{Error, Result};
use crate::network::{Layer, Logits, Network};
use crate::scalar::{round_to_multiple, Precision, Rational, Scalar};
use crate::tensor::{ImageTensor, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationScheme {
    s0: f64,
    s1: f64,
    error_bound: f64,
}

impl QuantizationScheme {
    /// Requires positive finite steps and `s0·s1 > 2E` (checked exactly).
    pub fn new(s0: f64, s1: f64, error_bound: f64) -> Result<Self> {
        for (name, v) in [("s0", s0), ("s1", s1), ("E", error_bound)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Quantization(format!("{name} = {v} must be positive and finite")));
            }
        }
        let lhs = Rational::from_f64(s0) * Rational::from_f64(s1);
        let rhs = Rational::from_f64(error_bound) * Rational::from_usize(2);
        if lhs <= rhs {
            return Err(Error::Quantization(format!("s0*s1 = {} <= 2E = {}", s0 * s1, 2.0 * error_bound)));
        }
        Ok(QuantizationScheme { s0, s1, error_bound })
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn error_bound(&self) -> f64 {
        self.error_bound
    }

    fn activation_step(&self) -> Rational {
        Rational::from_f64(self.s0)
    }

    fn weight_step(&self) -> Rational {
        Rational::from_f64(self.s1)
    }

    fn output_step(&self) -> Rational {
        self.activation_step() * self.weight_step()
    }
}

fn is_multiple(v: f32, step: &Rational) -> bool {
    (Rational::from_f32(v) / step).is_integer()
}

fn check_scheme(net: &Network, x: &ImageTensor<f32>, q: &QuantizationScheme) -> Result<()> {
    let (ws, bs, xs) = (q.weight_step(), q.output_step(), q.activation_step());
    for (i, layer) in net.layers().iter().enumerate() {
        let (w, b): (&[f32], &[f32]) = match layer {
            Layer::Conv2d(c) => (&c.weights, &c.bias),
            Layer::Dense(d) => (&d.weights, &d.bias),
            _ => continue,
        };
        if let Some(j) = w.iter().position(|&v| !is_multiple(v, &ws)) {
            return Err(Error::Quantization(format!("layer {i} weight {j} = {} is not a multiple of s1", w[j])));
        }
        if let Some(j) = b.iter().position(|&v| !is_multiple(v, &bs)) {
            return Err(Error::Quantization(format!("layer {i} bias {j} = {} is not a multiple of s0*s1", b[j])));
        }
    }
    if let Some(j) = x.data().iter().position(|&v| !is_multiple(v, &xs)) {
        return Err(Error::Quantization(format!("input element {j} is not a multiple of s0")));
    }
    Ok(())
}

fn snap<T: Scalar>(v: &T, step: &Rational) -> T {
    T::from_rational(&round_to_multiple(&v.to_rational(), step))
}

/// Quantized forward pass; `record` sees every linear layer's input and raw output.
fn run<T: Scalar>(
    net: &Network,
    kernel: Kernel,
    x: &ImageTensor<f32>,
    q: &QuantizationScheme,
    mut record: impl FnMut(usize, &[T], &[T]),
) -> Vec<T> {
    let (out_step, act_step) = (q.output_step(), q.activation_step());
    let mut act: Vec<T> = x.data().iter().map(|&v| T::from_f32(v)).collect();
    for (i, (layer, &shape)) in net.layers().iter().zip(net.shapes()).enumerate() {
        let input = act;
        let out = apply_layer(layer, kernel, input.clone(), shape);
        act = match layer {
            Layer::Conv2d(_) | Layer::Dense(_) => {
                record(i, &input, &out);
                out.iter().map(|v| snap(v, &out_step)).collect()
            }
            Layer::Relu => out.iter().map(|v| snap(v, &act_step)).collect(),
            Layer::Flatten => out,
        };
    }
    act
}

/// Inference on the quantization lattice. Errors if the network or the
/// input is off-lattice. Logits are returned as exact multiples of `s0·s1`.
pub fn quantized_infer(
    net: &Network,
    x: &ImageTensor<f32>,
    q: &QuantizationScheme,
    backend: BackendId,
) -> Result<Logits<f64>> {
    net.check_input_shape(x.shape())?;
    x.check_unit_range()?;
    check_scheme(net, x, q)?;
    let k = backend.kernel();
    let scores = match backend.precision() {
        Precision::Single => run::<f32>(net, k, x, q, |_, _, _| ()).iter().map(Scalar::to_f64).collect(),
        Precision::Double => run::<f64>(net, k, x, q, |_, _, _| ()),
        Precision::Rational => run::<Rational>(net, k, x, q, |_, _, _| ()).iter().map(Scalar::to_f64).collect(),
    };
    Logits::new(scores)
}

/// Round weights to the `s1` lattice and biases to the `s0·s1` lattice.
pub fn quantize_network(net: &Network, q: &QuantizationScheme) -> Result<Network> {
    let (ws, bs) = (q.weight_step(), q.output_step());
    let round = |v: &[f32], step: &Rational| -> Vec<f32> {
        v.iter().map(|&w| round_to_multiple(&Rational::from_f32(w), step).to_f64() as f32).collect()
    };
    let layers = net
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Conv2d(c) => {
                let mut c = c.clone();
                c.weights = round(&c.weights, &ws);
                c.bias = round(&c.bias, &bs);
                Layer::Conv2d(c)
            }
            Layer::Dense(d) => {
                let mut d = d.clone();
                d.weights = round(&d.weights, &ws);
                d.bias = round(&d.bias, &bs);
                Layer::Dense(d)
            }
            other => other.clone(),
        })
        .collect();
    let out = net.with_layers(layers)?;
    // steps such as 0.001 have lattice points that single precision cannot hold
    let zero = ImageTensor::zeros(net.input_shape());
    check_scheme(&out, &zero, q).map_err(|e| {
        Error::Quantization(format!("lattice not representable in single precision ({e})"))
    })?;
    Ok(out)
}

/// Snap an image onto the `s0` lattice (ties to even), staying in `[0, 1]`.
pub fn quantize_input(x: &ImageTensor<f32>, s0: f64) -> ImageTensor<f32> {
    let step = Rational::from_f64(s0);
    x.map(|&v| {
        let r = round_to_multiple(&Rational::from_f32(v), &step);
        (r.to_f64() as f32).clamp(0.0, 1.0)
    })
}

/// Largest per-layer deviation `|backend output − exact output|` over the
/// given lattice inputs, where each linear layer of every backend is fed the
/// exact quantized activations. Multiplying this by a safety factor gives a
/// measured `E`.
pub fn measure_layer_error(
    net: &Network,
    inputs: &[ImageTensor<f32>],
    q_steps: (f64, f64),
    backends: &[BackendId],
) -> Result<f64> {
    // steps only matter for requantization; any E works for measuring
    let probe = QuantizationScheme { s0: q_steps.0, s1: q_steps.1, error_bound: f64::MIN_POSITIVE };
    let mut worst = 0.0f64;
    for x in inputs {
        check_scheme(net, x, &probe)?;
        let mut layer_io: Vec<(usize, Vec<Rational>, Vec<Rational>)> = Vec::new();
        run::<Rational>(net, Kernel::Direct, x, &probe, |i, input, out| {
            layer_io.push((i, input.to_vec(), out.to_vec()))
        });
        for &b in backends {
            for (i, input, exact) in &layer_io {
                let layer = &net.layers()[*i];
                let shape: Shape = net.shapes()[*i];
                let diff = |got: Vec<Rational>| -> f64 {
                    got.iter()
                        .zip(exact)
                        .map(|(g, e)| (g - e).abs().to_f64())
                        .fold(0.0, f64::max)
                };
                let k = b.kernel();
                let d = match b.precision() {
                    Precision::Single => {
                        let inp: Vec<f32> = input.iter().map(f32::from_rational).collect();
                        diff(apply_layer(layer, k, inp, shape).iter().map(Scalar::to_rational).collect())
                    }
                    Precision::Double => {
                        let inp: Vec<f64> = input.iter().map(f64::from_rational).collect();
                        diff(apply_layer(layer, k, inp, shape).iter().map(Scalar::to_rational).collect())
                    }
                    Precision::Rational => {
                        let got = apply_layer(layer, k, input.clone(), shape);
                        debug_assert!(got.iter().zip(exact).all(|(g, e)| (g - e).is_zero()));
                        0.0
                    }
                };
                worst = worst.max(d);
            }
        }
    }
    Ok(worst)
}
