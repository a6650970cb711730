//! IEEE-754 stepping helpers.

use crate::scalar::Precision;

/// Values that have a well-defined adjacent representable neighbour.
pub trait NextAfter: Copy + PartialOrd {
    /// IEEE-754 `nextafter`: the neighbour of `self` in the direction of
    /// `toward`, or `toward` itself when the two compare equal.
    fn next_after(self, toward: Self) -> Self;
}

impl NextAfter for f32 {
    fn next_after(self, toward: f32) -> f32 {
        if self.is_nan() || toward.is_nan() {
            f32::NAN
        } else if self == toward {
            toward
        } else if toward > self {
            self.next_up()
        } else {
            self.next_down()
        }
    }
}

impl NextAfter for f64 {
    fn next_after(self, toward: f64) -> f64 {
        if self.is_nan() || toward.is_nan() {
            f64::NAN
        } else if self == toward {
            toward
        } else if toward > self {
            self.next_up()
        } else {
            self.next_down()
        }
    }
}

/// `nextafter` at a run-time precision; the value travels as `f64`.
///
/// For [`Precision::Single`] the input is first rounded to `f32`. Rational
/// values have no neighbour, so the input is returned unchanged.
pub fn next_after(v: f64, toward: f64, precision: Precision) -> f64 {
    match precision {
        Precision::Single => (v as f32).next_after(toward as f32) as f64,
        Precision::Double => v.next_after(toward),
        Precision::Rational => v,
    }
}
