//! The ℓ∞ perturbation set around an input, intersected with the unit box.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{linf_distance, ImageTensor, Shape};

/// `{x : ‖x − x0‖∞ ≤ ε, 0 ≤ x ≤ 1}`.
///
/// The centre is single precision. The radius is held as a double;
/// single-precision comparisons use its rounding to `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSet {
    center: ImageTensor<f32>,
    eps: f64,
}

impl PerturbationSet {
    pub fn new(center: ImageTensor<f32>, eps: f64) -> Result<Self> {
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::OutOfRange(format!("eps = {eps}")));
        }
        center.check_unit_range()?;
        Ok(PerturbationSet { center, eps })
    }

    pub fn center(&self) -> &ImageTensor<f32> {
        &self.center
    }

    pub fn shape(&self) -> Shape {
        self.center.shape()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn eps_single(&self) -> f32 {
        self.eps as f32
    }

    /// Per-element box `[max(x0 − ε, 0), min(x0 + ε, 1)]`, evaluated in `T`.
    pub fn box_bounds<T: Scalar>(&self) -> (Vec<T>, Vec<T>) {
        let eps = T::from_f64(self.eps);
        self.center
            .data()
            .iter()
            .map(|&c| {
                let c = T::from_f32(c);
                let lo = (c.clone() - eps.clone()).max_of(T::zero());
                let hi = (c + eps.clone()).min_of(T::one());
                (lo, hi)
            })
            .unzip()
    }

    /// The whole unit box, i.e. the region with radius one around the same centre.
    pub fn unit_box(&self) -> PerturbationSet {
        PerturbationSet { center: self.center.clone(), eps: 1.0 }
    }

    /// Membership evaluated entirely in single precision.
    pub fn contains_single(&self, x: &ImageTensor<f32>) -> bool {
        x.in_unit_range()
            && linf_distance(x, &self.center).is_ok_and(|d| d <= self.eps_single())
    }

    /// Membership of the exact double widenings against the double radius.
    pub fn contains_double(&self, x: &ImageTensor<f32>) -> bool {
        let (xd, cd) = (x.widen_to_double(), self.center.widen_to_double());
        xd.in_unit_range() && linf_distance(&xd, &cd).is_ok_and(|d| d <= self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_is_clipped_to_unit_interval() {
        let c = ImageTensor::new(Shape::flat(3), vec![0.05f32, 0.5, 0.97]).unwrap();
        let r = PerturbationSet::new(c, 0.1).unwrap();
        let (lo, hi) = r.box_bounds::<f64>();
        assert_eq!(lo[0], 0.0);
        assert_eq!(hi[2], 1.0);
        assert_eq!(lo[1], 0.5 - 0.1);
        assert!(PerturbationSet::new(r.center().clone(), -1.0).is_err());
    }

    #[test]
    fn single_and_double_membership_can_differ() {
        // single(0.1) exceeds double(0.1), so a single-precision step of
        // exactly single(0.1) passes the single check only
        let c = ImageTensor::new(Shape::flat(1), vec![0.0f32]).unwrap();
        let r = PerturbationSet::new(c, 0.1).unwrap();
        let x = ImageTensor::new(Shape::flat(1), vec![0.1f32]).unwrap();
        assert!(r.contains_single(&x));
        assert!(!r.contains_double(&x));
    }
}
