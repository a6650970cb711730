//! Linear-layer kernels with fixed, documented reduction orders.
//!
//! Every kernel is generic over [`Scalar`]; each multiply and each add is a
//! separate operation (no fused multiply-add), so for a given scalar type
//! the result is a pure function of the operand bits.

use crate::network::{Conv2d, Dense};
use crate::scalar::Scalar;
use crate::tensor::Shape;

/// Reduction strategy of a linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// Accumulator starts at the bias; conv loops `kw` outermost, then `kh`,
    /// with `in_ch` innermost. Dense accumulates columns left to right.
    Direct,
    /// Convolution lowered to a GEMM over `k = (in_ch, kh, kw)` row-major;
    /// the dot product runs sequentially from zero and the bias is added last.
    Im2col,
    /// Same products as [`Kernel::Im2col`], reduced by a balanced binary tree,
    /// bias added last.
    Pairwise,
    /// F(4×4, 3×3) Winograd for 3×3 convolutions; other layers use [`Kernel::Direct`].
    Winograd,
}

/// Input sample at `(y, x, c)` of a zero-padded image, `None` in the padding.
#[inline]
fn padded<T>(input: &[T], shape: Shape, pad: usize, y: usize, x: usize, c: usize) -> Option<&T> {
    let (y, x) = (y.checked_sub(pad)?, x.checked_sub(pad)?);
    if y >= shape.height || x >= shape.width {
        return None;
    }
    Some(&input[shape.index(y, x, c)])
}

pub fn conv<T: Scalar>(kernel: Kernel, layer: &Conv2d, input: &[T], shape: Shape) -> Vec<T> {
    match kernel {
        Kernel::Direct => conv_direct(layer, input, shape),
        Kernel::Im2col => conv_lowered(layer, input, shape, sequential_sum),
        Kernel::Pairwise => conv_lowered(layer, input, shape, pairwise_sum),
        Kernel::Winograd => {
            if layer.kh == 3 && layer.kw == 3 {
                super::winograd::conv_winograd(layer, input, shape)
            } else {
                conv_direct(layer, input, shape)
            }
        }
    }
}

pub fn dense<T: Scalar>(kernel: Kernel, layer: &Dense, input: &[T]) -> Vec<T> {
    (0..layer.rows)
        .map(|r| {
            let products = || (0..layer.cols).map(|c| T::from_f32(layer.weight(r, c)) * input[c].clone());
            let bias = T::from_f32(layer.bias[r]);
            match kernel {
                Kernel::Direct | Kernel::Winograd => products().fold(bias, |acc, p| acc + p),
                Kernel::Im2col => sequential_sum(products().collect()) + bias,
                Kernel::Pairwise => pairwise_sum(products().collect()) + bias,
            }
        })
        .collect()
}

fn conv_direct<T: Scalar>(layer: &Conv2d, input: &[T], shape: Shape) -> Vec<T> {
    let out_shape = layer.output_shape(shape).expect("conv shape validated by Network");
    let mut out = Vec::with_capacity(out_shape.len());
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            for o in 0..layer.out_ch {
                let mut acc = T::from_f32(layer.bias[o]);
                for kx in 0..layer.kw {
                    for ky in 0..layer.kh {
                        for c in 0..layer.in_ch {
                            if let Some(v) = padded(input, shape, layer.padding, oy + ky, ox + kx, c) {
                                acc = acc + T::from_f32(layer.weight(o, c, ky, kx)) * v.clone();
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Unfold the padded input into one row of `in_ch·kh·kw` samples per output pixel.
pub fn im2col<T: Scalar>(layer: &Conv2d, input: &[T], shape: Shape) -> (Vec<Vec<T>>, Shape) {
    let out_shape = layer.output_shape(shape).expect("conv shape validated by Network");
    let mut rows = Vec::with_capacity(out_shape.height * out_shape.width);
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            let mut row = Vec::with_capacity(layer.in_ch * layer.kh * layer.kw);
            for c in 0..layer.in_ch {
                for ky in 0..layer.kh {
                    for kx in 0..layer.kw {
                        row.push(
                            padded(input, shape, layer.padding, oy + ky, ox + kx, c)
                                .cloned()
                                .unwrap_or_else(T::zero),
                        );
                    }
                }
            }
            rows.push(row);
        }
    }
    (rows, out_shape)
}

fn conv_lowered<T: Scalar>(
    layer: &Conv2d,
    input: &[T],
    shape: Shape,
    reduce: fn(Vec<T>) -> T,
) -> Vec<T> {
    let (patches, out_shape) = im2col(layer, input, shape);
    let k = layer.in_ch * layer.kh * layer.kw;
    let weights: Vec<T> = layer.weights.iter().map(|&w| T::from_f32(w)).collect();
    let mut out = Vec::with_capacity(out_shape.len());
    for patch in &patches {
        for o in 0..layer.out_ch {
            let row = &weights[o * k..(o + 1) * k];
            let products = row.iter().zip(patch).map(|(w, x)| w.clone() * x.clone()).collect();
            out.push(reduce(products) + T::from_f32(layer.bias[o]));
        }
    }
    out
}

pub fn sequential_sum<T: Scalar>(values: Vec<T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}

/// Balanced tree: split at `len / 2`, sum halves recursively.
pub fn pairwise_sum<T: Scalar>(values: Vec<T>) -> T {
    fn go<T: Scalar>(v: &[T]) -> T {
        match v.len() {
            0 => T::zero(),
            1 => v[0].clone(),
            n => go(&v[..n / 2]) + go(&v[n / 2..]),
        }
    }
    go(&values)
}
