//! Images and activation tensors in row-major `(height, width, channels)` order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Precision, Rational, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape { height, width, channels }
    }

    /// A flat vector of `n` elements.
    pub const fn flat(n: usize) -> Self {
        Shape::new(1, 1, n)
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// An `m × n × c` tensor. Network inputs additionally live in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} elements supplied for shape {shape}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image element {i}")));
        }
        Ok(ImageTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        ImageTensor { shape, data: vec![T::zero(); shape.len()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, h: usize, w: usize, c: usize) -> &T {
        &self.data[self.shape.index(h, w, c)]
    }

    /// Replace the element buffer in place; the length must not change.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> ImageTensor<U> {
        ImageTensor { shape: self.shape, data: self.data.iter().map(f).collect() }
    }

    /// Checks the `[0, 1]` input invariant.
    pub fn check_unit_range(&self) -> Result<()> {
        let (zero, one) = (T::zero(), T::one());
        match self.data.iter().position(|v| *v < zero || *v > one) {
            Some(i) => Err(Error::OutOfRange(format!(
                "image element {i} = {} outside [0, 1]",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.check_unit_range().is_ok()
    }
}

impl ImageTensor<f32> {
    /// Exact single → double widening.
    pub fn widen_to_double(&self) -> ImageTensor<f64> {
        self.map(|&v| v as f64)
    }

    pub fn to_rational(&self) -> ImageTensor<Rational> {
        self.map(|&v| Rational::from_f32(v))
    }

    /// Widen into any scalar type (exact).
    pub fn cast<T: Scalar>(&self) -> ImageTensor<T> {
        self.map(|&v| T::from_f32(v))
    }

    /// Bit patterns, for bit-exact comparisons.
    pub fn bits(&self) -> Vec<u32> {
        self.data.iter().map(|v| v.to_bits()).collect()
    }
}

impl<T: Scalar> ImageTensor<T> {
    /// Round every element to single precision.
    pub fn round_to_single(&self) -> ImageTensor<f32> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v.to_f64() as f32).collect(),
        }
    }
}

/// `‖a − b‖∞`, with each subtraction and the comparison carried out in `T`.
pub fn linf_distance<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<T> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!("{} vs {}", a.shape, b.shape)));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x.clone() - y.clone()).abs())
        .fold(T::zero(), T::max_of))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(data: Vec<f32>) -> ImageTensor<f32> {
        let n = data.len();
        ImageTensor::new(Shape::new(1, n, 1), data).unwrap()
    }

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(ImageTensor::new(Shape::new(2, 2, 1), vec![0.0f32; 3]).is_err());
        assert!(ImageTensor::new(Shape::new(1, 1, 1), vec![f32::NAN]).is_err());
    }

    #[test]
    fn linf_identity_and_single_difference() {
        let a = img(vec![0.1, 0.5, 0.75]);
        assert_eq!(linf_distance(&a, &a).unwrap(), 0.0);
        let b = img(vec![0.1, 0.25, 0.75]);
        assert_eq!(linf_distance(&a, &b).unwrap(), 0.25);
        let c = img(vec![0.0; 4]);
        assert!(linf_distance(&a, &c).is_err());
    }

    #[test]
    fn widening_preserves_values() {
        let a = img(vec![0.0, 0.5, 0.1]);
        let d = a.widen_to_double();
        assert_eq!(d.data()[1], 0.5);
        assert_eq!(d.data()[2], 0.1f32 as f64);
        assert_ne!(d.data()[2], 0.1f64);
        assert_eq!(d.shape(), a.shape());
        assert!(img(vec![0.0; 3]).widen_to_double().data().iter().all(|v| *v == 0.0));
    }

    // Elementwise oracle: the single-precision distance agrees with the
    // widened one exactly when no elementwise subtraction rounds.
    #[test]
    fn single_vs_widened_distance_near_tenth() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a: Vec<f32> = (0..16).map(|_| 0.1 + rng.gen_range(-1e-3f32..1e-3)).collect();
            let b: Vec<f32> = (0..16).map(|_| 0.1 + rng.gen_range(-1e-3f32..1e-3)).collect();
            let (ia, ib) = (img(a.clone()), img(b.clone()));
            let single = linf_distance(&ia, &ib).unwrap();
            let double = linf_distance(&ia.widen_to_double(), &ib.widen_to_double()).unwrap();
            let all_exact = a
                .iter()
                .zip(&b)
                .all(|(x, y)| (x - y) as f64 == *x as f64 - *y as f64);
            if all_exact {
                assert_eq!(single as f64, double);
            }
            // rounding of the final subtraction is monotone, so the widened
            // maximum always rounds to the single-precision maximum
            assert_eq!(double as f32, single);
        }
    }

    #[test]
    fn unit_range_check() {
        assert!(img(vec![0.0, 1.0]).in_unit_range());
        assert!(!img(vec![-0.01, 0.5]).in_unit_range());
    }
}
