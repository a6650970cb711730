//! Winograd F(4×4, 3×3) fast convolution.
//!
//! A 6×6 input tile `d` and a 3×3 filter `g` produce the 4×4 output tile
//! `Aᵀ [(G g Gᵀ) ⊙ (Bᵀ d B)] A`. The matrix entries are rationals with
//! denominators up to 24; in floating point they are rounded once, which is
//! one source of the larger error of this algorithm.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::network::Conv2d;
use crate::scalar::Scalar;
use crate::tensor::Shape;

pub const INPUT_TILE: usize = 6;
pub const OUTPUT_TILE: usize = 4;
pub const KERNEL_SIZE: usize = 3;

/// Tile sizes of a Winograd variant. Only F(4×4, 3×3) is implemented.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WinogradParams {
    pub output_tile: usize,
    pub kernel: usize,
}

impl WinogradParams {
    pub const F4X4_3X3: WinogradParams = WinogradParams { output_tile: OUTPUT_TILE, kernel: KERNEL_SIZE };

    pub fn input_tile(&self) -> usize {
        self.output_tile + self.kernel - 1
    }
}

// (numerator, denominator) entries, row-major
const BT: [[(i64, i64); 6]; 6] = [
    [(4, 1), (0, 1), (-5, 1), (0, 1), (1, 1), (0, 1)],
    [(0, 1), (-4, 1), (-4, 1), (1, 1), (1, 1), (0, 1)],
    [(0, 1), (4, 1), (-4, 1), (-1, 1), (1, 1), (0, 1)],
    [(0, 1), (-2, 1), (-1, 1), (2, 1), (1, 1), (0, 1)],
    [(0, 1), (2, 1), (-1, 1), (-2, 1), (1, 1), (0, 1)],
    [(0, 1), (4, 1), (0, 1), (-5, 1), (0, 1), (1, 1)],
];
const G: [[(i64, i64); 3]; 6] = [
    [(1, 4), (0, 1), (0, 1)],
    [(-1, 6), (-1, 6), (-1, 6)],
    [(-1, 6), (1, 6), (-1, 6)],
    [(1, 24), (1, 12), (1, 6)],
    [(1, 24), (-1, 12), (1, 6)],
    [(0, 1), (0, 1), (1, 1)],
];
const AT: [[(i64, i64); 6]; 4] = [
    [(1, 1), (1, 1), (1, 1), (1, 1), (1, 1), (0, 1)],
    [(0, 1), (1, 1), (-1, 1), (2, 1), (-2, 1), (0, 1)],
    [(0, 1), (1, 1), (1, 1), (4, 1), (4, 1), (0, 1)],
    [(0, 1), (1, 1), (-1, 1), (8, 1), (-8, 1), (1, 1)],
];

/// Row-major dense matrix small enough to live on the heap without fuss.
#[derive(Clone, Debug, PartialEq)]
struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    fn from_entries<const C: usize>(entries: &[[(i64, i64); C]]) -> Self {
        Mat {
            rows: entries.len(),
            cols: C,
            data: entries.iter().flatten().map(|&(n, d)| T::from_ratio(n, d)).collect(),
        }
    }

    fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.data[r * self.cols + c].clone());
            }
        }
        Mat { rows: self.cols, cols: self.rows, data }
    }

    /// `self · rhs`, each entry summed over `k` in increasing order.
    fn mul(&self, rhs: &Mat<T>) -> Mat<T> {
        debug_assert_eq!(self.cols, rhs.rows);
        let mut data = Vec::with_capacity(self.rows * rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc = acc + self.data[i * self.cols + k].clone() * rhs.data[k * rhs.cols + j].clone();
                }
                data.push(acc);
            }
        }
        Mat { rows: self.rows, cols: rhs.cols, data }
    }
}

struct Transforms<T> {
    bt: Mat<T>,
    b: Mat<T>,
    g: Mat<T>,
    gt: Mat<T>,
    at: Mat<T>,
    a: Mat<T>,
}

impl<T: Scalar> Transforms<T> {
    fn new() -> Self {
        let (bt, g, at) = (Mat::from_entries(&BT), Mat::from_entries(&G), Mat::from_entries(&AT));
        Transforms { b: bt.transpose(), gt: g.transpose(), a: at.transpose(), bt, g, at }
    }

    fn filter(&self, filter: &[T]) -> Mat<T> {
        let g = Mat { rows: 3, cols: 3, data: filter.to_vec() };
        self.g.mul(&g).mul(&self.gt)
    }

    fn input(&self, tile: Vec<T>) -> Mat<T> {
        let d = Mat { rows: 6, cols: 6, data: tile };
        self.bt.mul(&d).mul(&self.b)
    }

    fn output(&self, m: Mat<T>) -> Mat<T> {
        self.at.mul(&m).mul(&self.a)
    }
}

fn hadamard_accumulate<T: Scalar>(acc: &mut Option<Mat<T>>, u: &Mat<T>, v: &Mat<T>) {
    let prod = u.data.iter().zip(&v.data).map(|(a, b)| a.clone() * b.clone());
    match acc {
        None => *acc = Some(Mat { rows: u.rows, cols: u.cols, data: prod.collect() }),
        Some(m) => m.data.iter_mut().zip(prod).for_each(|(s, p)| *s = s.clone() + p),
    }
}

/// One single-channel Winograd tile: 6×6 input (row-major) and 3×3 filter
/// in, 4×4 output out. Computes a valid cross-correlation.
pub fn winograd_conv<T: Scalar>(params: WinogradParams, tile: &[T], filter: &[T]) -> Result<Vec<T>> {
    if params != WinogradParams::F4X4_3X3 {
        return Err(Error::Unsupported(format!(
            "Winograd F({0}x{0}, {1}x{1}); only F(4x4, 3x3) is implemented",
            params.output_tile, params.kernel
        )));
    }
    if filter.len() != KERNEL_SIZE * KERNEL_SIZE {
        return Err(Error::Unsupported(format!("filter with {} taps, expected 9", filter.len())));
    }
    if tile.len() != INPUT_TILE * INPUT_TILE {
        return Err(Error::ShapeMismatch(format!("input tile with {} elements, expected 36", tile.len())));
    }
    let tf = Transforms::<T>::new();
    let mut m = None;
    hadamard_accumulate(&mut m, &tf.filter(filter), &tf.input(tile.to_vec()));
    Ok(tf.output(m.unwrap()).data)
}

fn f32_transforms() -> &'static Transforms<f32> {
    static CACHE: OnceLock<Transforms<f32>> = OnceLock::new();
    CACHE.get_or_init(Transforms::new)
}

fn with_transforms<T: Scalar, R>(f: impl FnOnce(&Transforms<T>) -> R) -> R {
    // f32 is on the attack's hot path; other precisions rebuild on demand.
    if let Some(tf) = (f32_transforms() as &dyn std::any::Any).downcast_ref::<Transforms<T>>() {
        f(tf)
    } else {
        f(&Transforms::<T>::new())
    }
}

/// Full 3×3 convolution layer by 4×4 output tiles. Channels are summed in the
/// transformed domain (`Σ_c U ⊙ V` in channel order) before the output
/// transform; the bias is added to each inverse-transformed value.
pub(crate) fn conv_winograd<T: Scalar>(layer: &Conv2d, input: &[T], shape: Shape) -> Vec<T> {
    debug_assert!(layer.kh == 3 && layer.kw == 3);
    let out_shape = layer.output_shape(shape).expect("conv shape validated by Network");
    with_transforms(|tf: &Transforms<T>| {
        let filters: Vec<Vec<Mat<T>>> = (0..layer.out_ch)
            .map(|o| {
                (0..layer.in_ch)
                    .map(|c| {
                        let taps: Vec<T> = (0..9)
                            .map(|t| T::from_f32(layer.weight(o, c, t / 3, t % 3)))
                            .collect();
                        tf.filter(&taps)
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![T::zero(); out_shape.len()];
        let pad = layer.padding as isize;
        for ty in (0..out_shape.height).step_by(OUTPUT_TILE) {
            for tx in (0..out_shape.width).step_by(OUTPUT_TILE) {
                let transformed: Vec<Mat<T>> = (0..layer.in_ch)
                    .map(|c| {
                        let mut tile = Vec::with_capacity(INPUT_TILE * INPUT_TILE);
                        for dy in 0..INPUT_TILE {
                            for dx in 0..INPUT_TILE {
                                let y = (ty + dy) as isize - pad;
                                let x = (tx + dx) as isize - pad;
                                let inside = y >= 0
                                    && x >= 0
                                    && (y as usize) < shape.height
                                    && (x as usize) < shape.width;
                                tile.push(if inside {
                                    input[shape.index(y as usize, x as usize, c)].clone()
                                } else {
                                    T::zero()
                                });
                            }
                        }
                        tf.input(tile)
                    })
                    .collect();
                for (o, filter) in filters.iter().enumerate() {
                    let mut m = None;
                    for (u, v) in filter.iter().zip(&transformed) {
                        hadamard_accumulate(&mut m, u, v);
                    }
                    let y = tf.output(m.unwrap());
                    let bias = T::from_f32(layer.bias[o]);
                    for dy in 0..OUTPUT_TILE.min(out_shape.height - ty) {
                        for dx in 0..OUTPUT_TILE.min(out_shape.width - tx) {
                            out[out_shape.index(ty + dy, tx + dx, o)] =
                                y.data[dy * OUTPUT_TILE + dx].clone() + bias.clone();
                        }
                    }
                }
            }
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;
    use rand::{Rng, SeedableRng};

    fn direct_tile<T: Scalar>(tile: &[T], filter: &[T]) -> Vec<T> {
        let mut out = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                let mut acc = T::zero();
                for ky in 0..3 {
                    for kx in 0..3 {
                        acc = acc + tile[(y + ky) * 6 + x + kx].clone() * filter[ky * 3 + kx].clone();
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn zero_filter_gives_zero_tile() {
        let tile: Vec<f32> = (0..36).map(|i| i as f32 * 0.1).collect();
        let out = winograd_conv(WinogradParams::F4X4_3X3, &tile, &[0.0f32; 9]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unsupported_sizes_are_rejected() {
        let p = WinogradParams { output_tile: 2, kernel: 3 };
        assert!(winograd_conv(p, &[0.0f32; 16], &[0.0f32; 9]).is_err());
        assert!(winograd_conv(WinogradParams::F4X4_3X3, &[0.0f32; 36], &[0.0f32; 25]).is_err());
    }

    #[test]
    fn rational_winograd_equals_direct() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let tile: Vec<Rational> =
                (0..36).map(|_| Rational::from_ratio(rng.gen_range(-1000..1000), rng.gen_range(1..500))).collect();
            let filter: Vec<Rational> =
                (0..9).map(|_| Rational::from_ratio(rng.gen_range(-1000..1000), rng.gen_range(1..500))).collect();
            let w = winograd_conv(WinogradParams::F4X4_3X3, &tile, &filter).unwrap();
            assert_eq!(w, direct_tile(&tile, &filter));
        }
    }

    #[test]
    fn delta_filter_on_small_integers() {
        let mut filter = [0.0f32; 9];
        filter[4] = 1.0;
        let tile: Vec<f32> = (0..36).map(|i| ((i * 7) % 11) as f32).collect();
        let out = winograd_conv(WinogradParams::F4X4_3X3, &tile, &filter).unwrap();
        let expected = direct_tile(&tile, &filter);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() <= 4.0 * f32::EPSILON * 16.0, "{a} vs {b}");
        }
    }

    #[test]
    fn f32_winograd_error_exceeds_direct() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (mut err_w, mut err_d) = (0.0f64, 0.0f64);
        for _ in 0..200 {
            let tile: Vec<f32> = (0..36).map(|_| rng.gen_range(0.0f32..1.0)).collect();
            let filter: Vec<f32> = (0..9).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let exact = direct_tile(
                &tile.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                &filter.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            );
            let w = winograd_conv(WinogradParams::F4X4_3X3, &tile, &filter).unwrap();
            let d = direct_tile(&tile, &filter);
            for i in 0..16 {
                err_w += (w[i] as f64 - exact[i]).abs();
                err_d += (d[i] as f64 - exact[i]).abs();
            }
        }
        assert!(err_w > 2.0 * err_d, "winograd {err_w} direct {err_d}");
    }
}
