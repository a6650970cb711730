//! Scalar abstraction shared by inference, bound propagation and the LP engine.
//!
//! Everything numeric in the crate is written once against [`Scalar`] and
//! instantiated at three precisions: `f32` (the canonical storage and the
//! inference precision of the `*_F32` backends), `f64` (reference inference
//! and the default verifier arithmetic) and [`Rational`] (exact arithmetic).

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Arbitrary-precision exact rational.
pub type Rational = BigRational;

/// Arithmetic a value is carried in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
    Rational,
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
            Precision::Rational => "rational",
        })
    }
}

pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;
    /// True when arithmetic never rounds.
    const EXACT: bool;

    /// Widening conversion; exact for every implementor.
    fn from_f32(v: f32) -> Self;
    /// Exact for `f64` and rationals, round-to-nearest for `f32`.
    ///
    /// `v` must be finite.
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn is_finite(&self) -> bool;

    /// A tolerance of magnitude `v` in this arithmetic (zero when exact).
    fn tol(v: f64) -> Self {
        if Self::EXACT {
            Self::zero()
        } else {
            Self::from_f64(v)
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    /// `num / den`: exact for rationals, rounded once for floats.
    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_f64(num as f64 / den as f64)
    }

    /// Exact rational value.
    fn to_rational(&self) -> Rational {
        Rational::from_f64(self.to_f64())
    }

    /// Nearest representable value (identity for rationals).
    fn from_rational(v: &Rational) -> Self {
        Self::from_f64(ToPrimitive::to_f64(v).expect("finite rational"))
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    const EXACT: bool = false;

    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
    fn is_finite(&self) -> bool {
        f32::is_finite(*self)
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    const EXACT: bool = false;

    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl Scalar for Rational {
    const PRECISION: Precision = Precision::Rational;
    const EXACT: bool = true;

    fn from_f32(v: f32) -> Self {
        Self::from_f64(v as f64)
    }
    fn from_f64(v: f64) -> Self {
        BigRational::from_float(v).expect("rational conversion of a non-finite value")
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn is_finite(&self) -> bool {
        true
    }
    fn from_usize(v: usize) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn to_rational(&self) -> Rational {
        self.clone()
    }
    fn from_rational(v: &Rational) -> Self {
        v.clone()
    }
}

/// Exact rational value of a finite `f32`.
pub fn rational_of_f32(v: f32) -> Rational {
    Rational::from_f32(v)
}

/// Round an exact rational to the nearest multiple of `step` (ties to the even multiple).
pub fn round_to_multiple(v: &Rational, step: &Rational) -> Rational {
    let q = v / step;
    let floor = q.floor();
    let frac = &q - &floor;
    let half = Rational::new(BigInt::one(), BigInt::from(2));
    // ties go to the even neighbour
    let up = frac > half || (frac == half && !(floor.to_integer() % BigInt::from(2)).is_zero());
    let n = if up { floor + Rational::one() } else { floor };
    n * step
}
