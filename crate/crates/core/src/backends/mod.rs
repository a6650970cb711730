//! Inference backends with deliberately distinct rounding behaviour.
//!
//! | backend        | arithmetic | linear-layer reduction                       |
//! |----------------|------------|----------------------------------------------|
//! | `REF_F64`      | double     | direct                                       |
//! | `DIRECT_F32`   | single     | direct (bias first, `in_ch` innermost)       |
//! | `IM2COL_F32`   | single     | lowered GEMM, sequential over `k`, bias last |
//! | `PAIRWISE_F32` | single     | lowered GEMM, balanced tree, bias last       |
//! | `WINOGRAD_F32` | single     | F(4×4, 3×3) Winograd for 3×3 convs           |
//! | `EXACT_RAT`    | rational   | exact                                        |
//!
//! Intermediate activations are stored at the backend precision. An
//! inference is single-threaded and fully deterministic.

pub mod kernels;
pub mod quantized;
pub mod winograd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use kernels::Kernel;
pub use quantized::{quantized_infer, QuantizationScheme};
pub use winograd::{winograd_conv, WinogradParams};

use crate::error::{Error, Result};
use crate::network::{Layer, Logits, Network};
use crate::scalar::{Precision, Rational, Scalar};
use crate::tensor::{ImageTensor, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BackendId {
    #[serde(rename = "REF_F64")]
    RefF64,
    /// Stands in for the default CPU convolution.
    #[serde(rename = "DIRECT_F32")]
    DirectF32,
    /// Stands in for the CPU matrix-multiplication path.
    #[serde(rename = "IM2COL_F32")]
    Im2colF32,
    /// Stands in for the GPU matmul / implicit-GEMM paths.
    #[serde(rename = "PAIRWISE_F32")]
    PairwiseF32,
    /// Stands in for the GPU Winograd path.
    #[serde(rename = "WINOGRAD_F32")]
    WinogradF32,
    #[serde(rename = "EXACT_RAT")]
    ExactRat,
}

impl BackendId {
    pub const ALL: [BackendId; 6] = [
        BackendId::RefF64,
        BackendId::DirectF32,
        BackendId::Im2colF32,
        BackendId::PairwiseF32,
        BackendId::WinogradF32,
        BackendId::ExactRat,
    ];

    /// The single-precision backends an attacker targets, in report column order.
    pub const SINGLE: [BackendId; 4] = [
        BackendId::Im2colF32,
        BackendId::DirectF32,
        BackendId::PairwiseF32,
        BackendId::WinogradF32,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackendId::RefF64 => "REF_F64",
            BackendId::DirectF32 => "DIRECT_F32",
            BackendId::Im2colF32 => "IM2COL_F32",
            BackendId::PairwiseF32 => "PAIRWISE_F32",
            BackendId::WinogradF32 => "WINOGRAD_F32",
            BackendId::ExactRat => "EXACT_RAT",
        }
    }

    pub fn precision(self) -> Precision {
        match self {
            BackendId::RefF64 => Precision::Double,
            BackendId::ExactRat => Precision::Rational,
            _ => Precision::Single,
        }
    }

    pub fn kernel(self) -> Kernel {
        match self {
            BackendId::RefF64 | BackendId::DirectF32 | BackendId::ExactRat => Kernel::Direct,
            BackendId::Im2colF32 => Kernel::Im2col,
            BackendId::PairwiseF32 => Kernel::Pairwise,
            BackendId::WinogradF32 => Kernel::Winograd,
        }
    }

    pub fn is_single(self) -> bool {
        self.precision() == Precision::Single
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackendId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let id = match norm.as_str() {
            "REF_F64" | "REF" => BackendId::RefF64,
            "DIRECT_F32" | "DIRECT" => BackendId::DirectF32,
            "IM2COL_F32" | "IM2COL" => BackendId::Im2colF32,
            "PAIRWISE_F32" | "PAIRWISE" => BackendId::PairwiseF32,
            "WINOGRAD_F32" | "WINOGRAD" => BackendId::WinogradF32,
            "EXACT_RAT" | "EXACT" => BackendId::ExactRat,
            _ => return Err(Error::Unsupported(format!("unknown backend {s:?}"))),
        };
        Ok(id)
    }
}

/// Origin offset and step of the perturbation windows used by the random
/// perturbation attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGeometry {
    pub offset: usize,
    pub stride: usize,
}

impl TileGeometry {
    pub const SMALL_TILES: TileGeometry = TileGeometry { offset: 0, stride: 4 };

    /// Geometry for a Winograd kernel mapping `input_tile²` inputs to
    /// `output_tile²` outputs: one window per output tile, skipping the
    /// `input_tile − output_tile` leading samples shared with the previous tile.
    pub fn for_winograd_tiles(input_tile: usize, output_tile: usize) -> TileGeometry {
        assert!(input_tile > output_tile && output_tile > 0);
        TileGeometry { offset: input_tile - output_tile, stride: output_tile }
    }
}

pub fn tile_geometry(backend: BackendId) -> TileGeometry {
    match backend {
        BackendId::WinogradF32 => {
            TileGeometry::for_winograd_tiles(winograd::INPUT_TILE, winograd::OUTPUT_TILE)
        }
        _ => TileGeometry::SMALL_TILES,
    }
}

/// Apply one layer at precision `T` with the given reduction strategy.
pub fn apply_layer<T: Scalar>(layer: &Layer, kernel: Kernel, x: Vec<T>, shape: Shape) -> Vec<T> {
    match layer {
        Layer::Conv2d(c) => kernels::conv(kernel, c, &x, shape),
        Layer::Dense(d) => kernels::dense(kernel, d, &x),
        Layer::Relu => x.into_iter().map(|v| v.max_of(T::zero())).collect(),
        Layer::Flatten => x,
    }
}

/// Run all layers without input validation.
pub fn forward<T: Scalar>(net: &Network, kernel: Kernel, input: Vec<T>) -> Vec<T> {
    net.layers()
        .iter()
        .zip(net.shapes())
        .fold(input, |x, (layer, &shape)| apply_layer(layer, kernel, x, shape))
}

/// Logits at the precision of the producing backend.
#[derive(Clone, Debug, PartialEq)]
pub enum BackendLogits {
    Single(Logits<f32>),
    Double(Logits<f64>),
    Exact(Logits<Rational>),
}

impl BackendLogits {
    pub fn precision(&self) -> Precision {
        match self {
            BackendLogits::Single(_) => Precision::Single,
            BackendLogits::Double(_) => Precision::Double,
            BackendLogits::Exact(_) => Precision::Rational,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            BackendLogits::Single(l) => l.to_f64(),
            BackendLogits::Double(l) => l.to_f64(),
            BackendLogits::Exact(l) => l.to_f64(),
        }
    }

    pub fn argmax(&self) -> usize {
        match self {
            BackendLogits::Single(l) => l.argmax(),
            BackendLogits::Double(l) => l.argmax(),
            BackendLogits::Exact(l) => l.argmax(),
        }
    }

    /// CW loss computed in the logits' own precision, reported as a double.
    pub fn cw_loss(&self, t: usize) -> Result<f64> {
        Ok(match self {
            BackendLogits::Single(l) => l.cw_loss(t)?.to_f64(),
            BackendLogits::Double(l) => l.cw_loss(t)?,
            BackendLogits::Exact(l) => l.cw_loss(t)?.to_f64(),
        })
    }

    /// Sign of the CW loss, exact for every precision.
    pub fn cw_sign(&self, t: usize) -> Result<std::cmp::Ordering> {
        use num_traits::Signed;
        let sign = |pos: bool, neg: bool| {
            if pos {
                std::cmp::Ordering::Greater
            } else if neg {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Equal
            }
        };
        Ok(match self {
            BackendLogits::Single(l) => {
                let v = l.cw_loss(t)?;
                sign(v > 0.0, v < 0.0)
            }
            BackendLogits::Double(l) => {
                let v = l.cw_loss(t)?;
                sign(v > 0.0, v < 0.0)
            }
            BackendLogits::Exact(l) => {
                let v = l.cw_loss(t)?;
                sign(v.is_positive(), v.is_negative())
            }
        })
    }
}

fn check_input(net: &Network, x: &ImageTensor<f32>) -> Result<()> {
    net.check_input_shape(x.shape())?;
    x.check_unit_range()
}

/// Inference at precision `T` with `kernel`, validating the input.
pub fn infer_typed<T: Scalar>(kernel: Kernel, net: &Network, x: &ImageTensor<f32>) -> Result<Logits<T>> {
    check_input(net, x)?;
    Logits::new(forward(net, kernel, x.data().iter().map(|&v| T::from_f32(v)).collect()))
}

pub fn infer(backend: BackendId, net: &Network, x: &ImageTensor<f32>) -> Result<BackendLogits> {
    let k = backend.kernel();
    Ok(match backend.precision() {
        Precision::Single => BackendLogits::Single(infer_typed(k, net, x)?),
        Precision::Double => BackendLogits::Double(infer_typed(k, net, x)?),
        Precision::Rational => BackendLogits::Exact(infer_typed(k, net, x)?),
    })
}

/// Single-precision inference; only the `*_F32` backends qualify.
pub fn infer_single(backend: BackendId, net: &Network, x: &ImageTensor<f32>) -> Result<Logits<f32>> {
    if !backend.is_single() {
        return Err(Error::Unsupported(format!("{backend} is not a single-precision backend")));
    }
    infer_typed(backend.kernel(), net, x)
}

/// Pre-activation output of the first layer, at the backend's precision, as doubles.
pub fn first_layer_output(backend: BackendId, net: &Network, x: &ImageTensor<f32>) -> Result<Vec<f64>> {
    let first = net.layers().first().ok_or_else(|| Error::InvalidNetwork("empty network".into()))?;
    if !first.is_linear() {
        return Err(Error::InvalidNetwork(format!("first layer is {}, expected conv or dense", first.kind())));
    }
    check_input(net, x)?;
    fn run<T: Scalar>(first: &Layer, k: Kernel, x: &ImageTensor<f32>) -> Vec<f64> {
        let input = x.data().iter().map(|&v| T::from_f32(v)).collect();
        apply_layer::<T>(first, k, input, x.shape()).iter().map(Scalar::to_f64).collect()
    }
    let k = backend.kernel();
    Ok(match backend.precision() {
        Precision::Single => run::<f32>(first, k, x),
        Precision::Double => run::<f64>(first, k, x),
        Precision::Rational => run::<Rational>(first, k, x),
    })
}
