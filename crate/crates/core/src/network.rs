//! Network model: an ordered list of conv / dense / ReLU / flatten layers
//! with canonical single-precision parameters.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Shape;

/// 2-D convolution with unit stride and symmetric zero padding.
///
/// Weights are stored in `(out_ch, in_ch, kh, kw)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub padding: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    #[inline]
    pub fn weight(&self, o: usize, i: usize, y: usize, x: usize) -> f32 {
        self.weights[((o * self.in_ch + i) * self.kh + y) * self.kw + x]
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {input}",
                self.in_ch
            )));
        }
        let h = input.height + 2 * self.padding;
        let w = input.width + 2 * self.padding;
        if h < self.kh || w < self.kw {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} kernel does not fit input {input} with padding {}",
                self.kh, self.kw, self.padding
            )));
        }
        Ok(Shape::new(h - self.kh + 1, w - self.kw + 1, self.out_ch))
    }
}

/// Fully connected layer; `weights` is `rows × cols` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    #[inline]
    pub fn weight(&self, r: usize, c: usize) -> f32 {
        self.weights[r * self.cols + c]
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {input}",
                self.cols
            )));
        }
        Ok(Shape::flat(self.rows))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Dense(_))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::Dense(d) => d.output_shape(input),
            Layer::Relu => Ok(input),
            Layer::Flatten => Ok(Shape::flat(input.len())),
        }
    }

    fn check(&self, idx: usize) -> Result<()> {
        let (w, b, expected_w, expected_b) = match self {
            Layer::Conv2d(c) => {
                (&c.weights, &c.bias, c.out_ch * c.in_ch * c.kh * c.kw, c.out_ch)
            }
            Layer::Dense(d) => (&d.weights, &d.bias, d.rows * d.cols, d.rows),
            _ => return Ok(()),
        };
        if w.len() != expected_w || b.len() != expected_b {
            return Err(Error::InvalidNetwork(format!(
                "layer {idx}: {} weights / {} biases, expected {expected_w} / {expected_b}",
                w.len(),
                b.len()
            )));
        }
        if w.iter().chain(b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {idx} parameters")));
        }
        Ok(())
    }
}

/// A validated feed-forward network.
///
/// Construction checks that consecutive shapes compose, that every
/// parameter is finite and that the output is a vector of at least two
/// logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Shape,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

impl Network {
    pub fn new(input_shape: Shape, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() {
            return Err(Error::InvalidNetwork("empty input shape".into()));
        }
        let mut shapes = vec![input_shape];
        for (i, layer) in layers.iter().enumerate() {
            layer.check(i)?;
            let next = layer
                .output_shape(*shapes.last().unwrap())
                .map_err(|e| Error::InvalidNetwork(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        let out = *shapes.last().unwrap();
        if out.height != 1 || out.width != 1 || out.channels < 2 {
            return Err(Error::InvalidNetwork(format!(
                "output must be a vector of at least 2 logits, got {out}"
            )));
        }
        Ok(Network { input_shape, layers, shapes })
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().unwrap()
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().channels
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// `shapes()[i]` is the input shape of layer `i`; the last entry is the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// Rebuild with modified layers, re-running validation.
    pub fn with_layers(&self, layers: Vec<Layer>) -> Result<Network> {
        Network::new(self.input_shape, layers)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.weights.len() + c.bias.len(),
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Every parameter in declaration order.
    pub fn parameters(&self) -> impl Iterator<Item = f32> + '_ {
        self.layers.iter().flat_map(|l| {
            let (w, b): (&[f32], &[f32]) = match l {
                Layer::Conv2d(c) => (&c.weights, &c.bias),
                Layer::Dense(d) => (&d.weights, &d.bias),
                _ => (&[], &[]),
            };
            w.iter().chain(b).copied()
        })
    }

    pub fn check_input_shape(&self, shape: Shape) -> Result<()> {
        if shape != self.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "network expects input {}, got {shape}",
                self.input_shape
            )));
        }
        Ok(())
    }
}

/// Classification scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits<T> {
    scores: Vec<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn new(scores: Vec<T>) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InvalidNetwork(format!("{} logits, need at least 2", scores.len())));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(Logits { scores })
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn num_classes(&self) -> usize {
        self.scores.len()
    }

    /// Index of the largest score; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.scores.iter().enumerate().skip(1) {
            if *v > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn cw_loss(&self, t: usize) -> Result<T> {
        cw_loss(&self.scores, t)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.scores.iter().map(Scalar::to_f64).collect()
    }

    /// `max_i |a_i − b_i|`, evaluated in double.
    pub fn linf_change(&self, other: &Logits<T>) -> f64 {
        self.scores
            .iter()
            .zip(&other.scores)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Carlini-Wagner margin `y_t − max_{i≠t} y_i`, in the precision of `y`.
///
/// Positive exactly when `t` is the strict argmax; an exact tie gives zero.
pub fn cw_loss<T: Scalar>(y: &[T], t: usize) -> Result<T> {
    if y.len() < 2 {
        return Err(Error::InvalidNetwork(format!("{} logits, need at least 2", y.len())));
    }
    if t >= y.len() {
        return Err(Error::InvalidClass { index: t, classes: y.len() });
    }
    let best_other = y
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t)
        .map(|(_, v)| v.clone())
        .reduce(T::max_of)
        .unwrap();
    Ok(y[t].clone() - best_other)
}
