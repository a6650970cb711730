//! Random tiny networks and regions for oracle comparisons.

use crate::error::Result;
use crate::network::{Conv2d, Dense, Layer, Network};
use crate::region::PerturbationSet;
use crate::rng::{below, unit_f32, Rng};
use crate::tensor::{ImageTensor, Shape};

fn weights(rng: &mut Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| scale * (2.0 * unit_f32(rng) - 1.0)).collect()
}

/// A network with at most eight ReLUs and two or three classes: either
/// dense–ReLU(–dense–ReLU)–dense on a short vector, or a 2×2 convolution
/// with two channels on a 3×3 image followed by a dense layer.
pub fn random_tiny_network(rng: &mut Rng) -> Result<Network> {
    let k = 2 + below(rng, 2);
    if below(rng, 3) == 0 {
        let conv = Conv2d { out_ch: 2, in_ch: 1, kh: 2, kw: 2, padding: 0, weights: weights(rng, 8, 1.0), bias: weights(rng, 2, 0.5) };
        let dense = Dense { rows: k, cols: 8, weights: weights(rng, 8 * k, 1.0), bias: weights(rng, k, 0.5) };
        return Network::new(Shape::new(3, 3, 1), vec![Layer::Conv2d(conv), Layer::Relu, Layer::Flatten, Layer::Dense(dense)]);
    }
    let n = 2 + below(rng, 3);
    let h1 = 2 + below(rng, 4);
    let h2 = below(rng, 4);
    let mut layers = vec![
        Layer::Dense(Dense { rows: h1, cols: n, weights: weights(rng, h1 * n, 1.0), bias: weights(rng, h1, 0.5) }),
        Layer::Relu,
    ];
    let mut width = h1;
    if h2 > 0 {
        layers.push(Layer::Dense(Dense { rows: h2, cols: h1, weights: weights(rng, h1 * h2, 1.0), bias: weights(rng, h2, 0.5) }));
        layers.push(Layer::Relu);
        width = h2;
    }
    layers.push(Layer::Dense(Dense { rows: k, cols: width, weights: weights(rng, k * width, 1.0), bias: weights(rng, k, 0.5) }));
    Network::new(Shape::flat(n), layers)
}

/// Region with a uniformly random centre and a radius in `[0.02, 0.4)`.
pub fn random_region(rng: &mut Rng, shape: Shape) -> Result<PerturbationSet> {
    let center = ImageTensor::new(shape, (0..shape.len()).map(|_| unit_f32(rng)).collect())?;
    let eps = 0.02 + 0.38 * unit_f32(rng) as f64;
    PerturbationSet::new(center, eps)
}
