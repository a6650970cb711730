//! Phase-enumeration oracle: one LP per ReLU activation pattern and rival class.

use std::time::Instant;

use super::bounds::interval_bounds;
use super::milp::{LinExpr, Sense};
use super::simplex::{solve_lp_robust, LpProblem, LpRow, LpStatus};
use super::{SolveStats, Verdict, VerifyResult};
use crate::error::{Error, Result};
use crate::network::{Layer, Network};
use crate::region::PerturbationSet;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// Largest number of unstable ReLUs [`brute_force_verify`] accepts.
pub const MAX_UNSTABLE: usize = 20;

fn affine_layer<T: Scalar>(layer: &Layer, shape: crate::tensor::Shape, act: &[LinExpr<T>]) -> Vec<LinExpr<T>> {
    match layer {
        Layer::Conv2d(c) => {
            let out_shape = c.output_shape(shape).expect("conv shape validated by Network");
            let mut out = Vec::with_capacity(out_shape.len());
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    for o in 0..c.out_ch {
                        let mut e = LinExpr::constant(T::from_f32(c.bias[o]));
                        for ic in 0..c.in_ch {
                            for ky in 0..c.kh {
                                for kx in 0..c.kw {
                                    let (y, x) = (oy + ky, ox + kx);
                                    if y < c.padding || x < c.padding || y - c.padding >= shape.height || x - c.padding >= shape.width {
                                        continue;
                                    }
                                    let src = &act[shape.index(y - c.padding, x - c.padding, ic)];
                                    e = e.add_scaled(&T::from_f32(c.weight(o, ic, ky, kx)), src);
                                }
                            }
                        }
                        out.push(e);
                    }
                }
            }
            out
        }
        Layer::Dense(d) => (0..d.rows)
            .map(|r| {
                (0..d.cols).fold(LinExpr::constant(T::from_f32(d.bias[r])), |e, c| {
                    e.add_scaled(&T::from_f32(d.weight(r, c)), &act[c])
                })
            })
            .collect(),
        Layer::Relu | Layer::Flatten => unreachable!("not affine"),
    }
}

/// Decide `min CW > tau` over `region` by enumerating every phase pattern
/// of the unstable ReLUs. Returns the exact global optimum as the margin.
///
/// Pattern `p` sets unstable neuron `i` (in layer, then neuron order)
/// active iff bit `i` of `p` is set.
pub fn brute_force_verify<T: Scalar>(net: &Network, region: &PerturbationSet, t0: usize, tau: T) -> Result<VerifyResult<T>> {
    let start = Instant::now();
    let k = net.num_classes();
    if t0 >= k {
        return Err(Error::InvalidClass { index: t0, classes: k });
    }
    net.check_input_shape(region.shape())?;
    let bounds = interval_bounds::<T>(net, region);
    let unstable = bounds.unstable_relus(net);
    if unstable.len() > MAX_UNSTABLE {
        return Err(Error::Refused(format!("{} unstable ReLUs exceed the limit of {MAX_UNSTABLE}", unstable.len())));
    }
    let (lower, upper) = region.box_bounds::<T>();
    let n = lower.len();
    let mut stats = SolveStats::default();
    let mut best: Option<(T, Vec<T>)> = None;

    for pattern in 0u64..(1u64 << unstable.len()) {
        stats.nodes += 1;
        let mut rows: Vec<LpRow<T>> = Vec::new();
        let mut act: Vec<LinExpr<T>> = (0..n).map(LinExpr::var).collect();
        let mut next_unstable = 0;
        for (i, (layer, &shape)) in net.layers().iter().zip(net.shapes()).enumerate() {
            act = match layer {
                Layer::Flatten => act,
                Layer::Relu => {
                    let (l, u) = bounds.at(i);
                    act.into_iter()
                        .enumerate()
                        .map(|(j, z)| {
                            if !l[j].is_negative() {
                                return z;
                            }
                            if !u[j].is_positive() {
                                return LinExpr::constant(T::zero());
                            }
                            debug_assert_eq!(unstable[next_unstable], (i, j));
                            let on = pattern >> next_unstable & 1 == 1;
                            next_unstable += 1;
                            let sense = if on { Sense::Ge } else { Sense::Le };
                            rows.push(LpRow { coeffs: z.terms.clone(), sense, rhs: -z.constant.clone() });
                            if on {
                                z
                            } else {
                                LinExpr::constant(T::zero())
                            }
                        })
                        .collect()
                }
                _ => affine_layer(layer, shape, &act),
            };
        }
        for c in (0..k).filter(|&c| c != t0) {
            let obj = act[t0].sub(&act[c]);
            let lp = LpProblem {
                lower: lower.clone(),
                upper: upper.clone(),
                rows: rows.clone(),
                objective: obj.terms,
                objective_constant: obj.constant,
            };
            let (out, retried) = solve_lp_robust(&lp)?;
            stats.lp_solves += 1;
            stats.lp_iterations += out.iterations;
            stats.exact_retries += retried as usize;
            if let LpStatus::Optimal { value, x } = out.status {
                if best.as_ref().is_none_or(|(b, _)| value < *b) {
                    best = Some((value, x));
                }
            }
        }
    }
    stats.wall_time = start.elapsed();
    let verdict = match best {
        Some((v, x)) if v <= tau => {
            let data = x.into_iter().zip(lower.iter().zip(&upper)).map(|(v, (l, u))| v.max_of(l.clone()).min_of(u.clone())).collect();
            Verdict::NotRobust { counterexample: ImageTensor::new(region.shape(), data)?, margin: v }
        }
        best => Verdict::Robust { margin: best.map(|(v, _)| v) },
    };
    Ok(VerifyResult { verdict, stats })
}
