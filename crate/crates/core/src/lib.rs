//! Exact robustness verification of small ReLU networks, a family of
//! numerically distinct inference backends, and the construction of
//! adversarial inputs that exploit the floating-point gap between them.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below name the
//! instantiations used throughout.

pub mod attack;
pub mod backends;
pub mod errchar;
pub mod error;
pub mod float;
pub mod io;
pub mod modelgen;
pub mod network;
pub mod region;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod verifier;

pub use backends::{infer, BackendId, BackendLogits, TileGeometry};
pub use error::{Error, Result};
pub use float::{next_after, NextAfter};
pub use io::{load_model, save_model};
pub use network::{cw_loss, Conv2d, Dense, Layer, Logits, Network};
pub use region::PerturbationSet;
pub use scalar::{Precision, Rational, Scalar};
pub use tensor::{linf_distance, ImageTensor, Shape};

/// Single-precision image: the canonical storage of inputs.
pub type Image32 = ImageTensor<f32>;
/// Double-precision image.
pub type Image64 = ImageTensor<f64>;
/// Exact rational image.
pub type ImageQ = ImageTensor<Rational>;
