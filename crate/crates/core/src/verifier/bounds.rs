//! Interval bound propagation.

use crate::network::{Conv2d, Dense, Layer, Network};
use crate::region::PerturbationSet;
use crate::scalar::Scalar;
use crate::tensor::Shape;

/// Interval of every activation vector of a network over a region.
///
/// Entry `0` is the input box and entry `i + 1` the output of layer `i`,
/// so the pre-activation of a ReLU at layer `i` is entry `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsTable<T> {
    lower: Vec<Vec<T>>,
    upper: Vec<Vec<T>>,
}

impl<T: Scalar> BoundsTable<T> {
    pub fn input(&self) -> (&[T], &[T]) {
        self.at(0)
    }

    /// Bounds of the vector entering layer `i` (`i == layers` gives the logits).
    pub fn at(&self, i: usize) -> (&[T], &[T]) {
        (&self.lower[i], &self.upper[i])
    }

    pub fn logits(&self) -> (&[T], &[T]) {
        self.at(self.lower.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// `(layer, neuron)` of every ReLU whose pre-activation interval straddles zero.
    pub fn unstable_relus(&self, net: &Network) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, layer) in net.layers().iter().enumerate() {
            if matches!(layer, Layer::Relu) {
                let (l, u) = self.at(i);
                out.extend(
                    l.iter()
                        .zip(u)
                        .enumerate()
                        .filter(|(_, (l, u))| l.is_negative() && u.is_positive())
                        .map(|(n, _)| (i, n)),
                );
            }
        }
        out
    }

    /// True when every element of `values[i]` lies in entry `i`.
    pub fn contains(&self, values: &[Vec<T>]) -> bool {
        values.len() == self.len()
            && values.iter().enumerate().all(|(i, v)| {
                let (l, u) = self.at(i);
                v.len() == l.len() && v.iter().zip(l.iter().zip(u)).all(|(v, (l, u))| l <= v && v <= u)
            })
    }
}

fn scale_interval<T: Scalar>(w: &T, l: &T, u: &T) -> (T, T) {
    if w.is_negative() {
        (w.clone() * u.clone(), w.clone() * l.clone())
    } else {
        (w.clone() * l.clone(), w.clone() * u.clone())
    }
}

// Same loop order as the direct kernel, so a degenerate box reproduces it.
fn conv_interval<T: Scalar>(c: &Conv2d, l: &[T], u: &[T], shape: Shape) -> (Vec<T>, Vec<T>) {
    let out_shape = c.output_shape(shape).expect("conv shape validated by Network");
    let (mut lo, mut hi) = (Vec::with_capacity(out_shape.len()), Vec::with_capacity(out_shape.len()));
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            for o in 0..c.out_ch {
                let b = T::from_f32(c.bias[o]);
                let (mut al, mut au) = (b.clone(), b);
                for kx in 0..c.kw {
                    for ky in 0..c.kh {
                        for ic in 0..c.in_ch {
                            let (Some(y), Some(x)) = ((oy + ky).checked_sub(c.padding), (ox + kx).checked_sub(c.padding)) else {
                                continue;
                            };
                            if y >= shape.height || x >= shape.width {
                                continue;
                            }
                            let idx = shape.index(y, x, ic);
                            let (pl, pu) = scale_interval(&T::from_f32(c.weight(o, ic, ky, kx)), &l[idx], &u[idx]);
                            al = al + pl;
                            au = au + pu;
                        }
                    }
                }
                lo.push(al);
                hi.push(au);
            }
        }
    }
    (lo, hi)
}

fn dense_interval<T: Scalar>(d: &Dense, l: &[T], u: &[T]) -> (Vec<T>, Vec<T>) {
    (0..d.rows)
        .map(|r| {
            let b = T::from_f32(d.bias[r]);
            (0..d.cols).fold((b.clone(), b), |(al, au), c| {
                let (pl, pu) = scale_interval(&T::from_f32(d.weight(r, c)), &l[c], &u[c]);
                (al + pl, au + pu)
            })
        })
        .unzip()
}

/// Propagate an explicit input box through `net`.
pub fn propagate_box<T: Scalar>(net: &Network, lower: Vec<T>, upper: Vec<T>) -> BoundsTable<T> {
    let mut table = BoundsTable { lower: vec![lower], upper: vec![upper] };
    for (layer, &shape) in net.layers().iter().zip(net.shapes()) {
        let (l, u) = (table.lower.last().unwrap(), table.upper.last().unwrap());
        let (nl, nu) = match layer {
            Layer::Conv2d(c) => conv_interval(c, l, u, shape),
            Layer::Dense(d) => dense_interval(d, l, u),
            Layer::Relu => (
                l.iter().map(|v| v.clone().max_of(T::zero())).collect(),
                u.iter().map(|v| v.clone().max_of(T::zero())).collect(),
            ),
            Layer::Flatten => (l.clone(), u.clone()),
        };
        table.lower.push(nl);
        table.upper.push(nu);
    }
    table
}

/// Sound interval bounds for every activation of `net` over `region`.
pub fn interval_bounds<T: Scalar>(net: &Network, region: &PerturbationSet) -> BoundsTable<T> {
    let (lo, hi) = region.box_bounds::<T>();
    propagate_box(net, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{forward, Kernel};
    use crate::scalar::Rational;
    use crate::tensor::ImageTensor;

    #[test]
    fn dense_hand_example() {
        let d = Dense { rows: 1, cols: 2, weights: vec![1.0, -1.0], bias: vec![0.0] };
        let net = Network::new(Shape::flat(2), vec![Layer::Dense(d), Layer::Relu, Layer::Dense(Dense {
            rows: 2,
            cols: 1,
            weights: vec![1.0, -1.0],
            bias: vec![0.0; 2],
        })])
        .unwrap();
        let x0 = ImageTensor::new(Shape::flat(2), vec![0.5f32, 0.5]).unwrap();
        let region = PerturbationSet::new(x0, 0.1).unwrap();
        let t = interval_bounds::<Rational>(&net, &region);
        let r = |n: i64, d: i64| Rational::new(n.into(), d.into());
        // 0.1 is not a dyadic rational; compare against the exact widening
        let e = Rational::from_f64(0.1);
        assert_eq!(t.at(1).0[0], -(e.clone() + e.clone()));
        assert_eq!(t.at(1).1[0], e.clone() + e.clone());
        assert_eq!(t.at(2).0[0], r(0, 1));
        assert_eq!(t.unstable_relus(&net), vec![(1, 0)]);
        let t64 = interval_bounds::<f64>(&net, &region);
        assert!((t64.at(1).0[0] + 0.2).abs() < 1e-15 && (t64.at(1).1[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_collapses_to_forward_pass() {
        let conv = Conv2d {
            out_ch: 2,
            in_ch: 1,
            kh: 3,
            kw: 3,
            padding: 1,
            weights: (0..18).map(|i| ((i * 37 % 17) as f32 - 8.0) / 9.0).collect(),
            bias: vec![0.1, -0.2],
        };
        let net = Network::new(Shape::new(4, 4, 1), vec![
            Layer::Conv2d(conv),
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense(Dense { rows: 2, cols: 32, weights: (0..64).map(|i| (i as f32 - 31.5) / 40.0).collect(), bias: vec![0.3, 0.0] }),
        ])
        .unwrap();
        let x0 = ImageTensor::new(Shape::new(4, 4, 1), (0..16).map(|i| i as f32 / 17.0).collect()).unwrap();
        let t = interval_bounds::<f64>(&net, &PerturbationSet::new(x0.clone(), 0.0).unwrap());
        let y = forward::<f64>(&net, Kernel::Direct, x0.data().iter().map(|&v| v as f64).collect());
        assert_eq!(t.logits().0, &y[..]);
        assert_eq!(t.logits().1, &y[..]);
    }
}
