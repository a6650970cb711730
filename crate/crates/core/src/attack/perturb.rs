//! Step 3: random perturbation descent on the inference CW loss.

use serde::Serialize;

use crate::backends::{infer, tile_geometry, BackendId};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::rng::{seeded, symmetric_f32};
use crate::tensor::ImageTensor;

pub const DEFAULT_U: f64 = 2e-7;
pub const DEFAULT_ITERATIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackParams {
    /// Perturbation bound.
    pub u: f64,
    /// Passes over the image.
    pub iterations: usize,
    pub backend: BackendId,
    /// Seed of the perturbation stream.
    pub seed: u64,
}

impl AttackParams {
    pub fn new(backend: BackendId, seed: u64) -> Self {
        AttackParams { u: DEFAULT_U, iterations: DEFAULT_ITERATIONS, backend, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u.is_finite() && self.u > 0.0) {
            return Err(Error::OutOfRange(format!("u = {} must be positive", self.u)));
        }
        if self.iterations == 0 {
            return Err(Error::OutOfRange("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Elementwise clamp box `[x_l, x_u]` inside the region in both precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct ClampBounds {
    pub lower: ImageTensor<f32>,
    pub upper: ImageTensor<f32>,
    /// `next_after` steps taken per bound, summed over elements.
    pub steps: (usize, usize),
    /// Largest step count of a single element.
    pub max_element_steps: usize,
}

/// `x_l = max(x0 − ε, 0)` and `x_u = min(x0 + ε, 1)` in single precision,
/// each element then moved toward `x0` one ulp at a time until its
/// distance from `x0` is at most `single(ε)` in single precision and at
/// most `ε` between the double widenings.
///
/// The acceptance test is monotone along the walk, so long walks (which
/// happen when a bound clamped at 0 has to cross the subnormal range) are
/// finished by bisection over the bit patterns with the same result.
pub fn clamp_bounds(x0: &ImageTensor<f32>, eps: f64) -> ClampBounds {
    let (e32, e64) = (eps as f32, eps);
    let inside = |a: f32, b: f32| (a - b).abs() <= e32 && (a as f64 - b as f64).abs() <= e64;
    let mut steps = (0, 0);
    let mut max_steps = 0;
    let mut tighten = |start: f32, c: f32, up: bool, count: &mut usize| {
        let v = walk_toward(start, c, up, |v| inside(c, v));
        // values here are non-negative, so bit patterns are ordered like the values
        let n = v.to_bits().abs_diff(start.to_bits()) as usize;
        *count += n;
        max_steps = max_steps.max(n);
        v
    };
    let data = x0.data();
    let lower: Vec<f32> = data.iter().map(|&c| tighten((c - e32).max(0.0), c, true, &mut steps.0)).collect();
    let upper: Vec<f32> = data.iter().map(|&c| tighten((c + e32).min(1.0), c, false, &mut steps.1)).collect();
    let lower = ImageTensor::new(x0.shape(), lower).expect("finite bounds");
    let upper = ImageTensor::new(x0.shape(), upper).expect("finite bounds");
    ClampBounds { lower, upper, steps, max_element_steps: max_steps }
}

/// First value reached from `start` by unit steps toward `target` (which
/// must satisfy `ok`) for which `ok` holds; `ok` must be monotone along the walk.
fn walk_toward(start: f32, target: f32, up: bool, ok: impl Fn(f32) -> bool) -> f32 {
    const LINEAR_STEPS: usize = 64;
    let mut v = start;
    for _ in 0..LINEAR_STEPS {
        if ok(v) {
            return v;
        }
        v = if up { v.next_up() } else { v.next_down() };
    }
    // invariant: !ok(bits a), ok(bits b), searching along non-negative floats
    let (mut bad, mut good) = (v.to_bits(), target.to_bits());
    if ok(v) {
        return v;
    }
    while bad.abs_diff(good) > 1 {
        let mid = if up { bad + (good - bad) / 2 } else { bad - (bad - good) / 2 };
        if ok(f32::from_bits(mid)) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    f32::from_bits(good)
}

/// Accepted steps of one run, with the CW value each produced.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AcceptedStep {
    pub iteration: usize,
    pub tile: (usize, usize),
    pub cw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackRun {
    /// Final iterate; adversarial iff `success`.
    pub x: ImageTensor<f32>,
    pub success: bool,
    pub initial_cw: f64,
    pub final_cw: f64,
    pub accepted: Vec<AcceptedStep>,
    pub evaluations: usize,
}

fn cw(net: &Network, backend: BackendId, x: &ImageTensor<f32>, t: usize) -> Result<f64> {
    infer(backend, net, x)?.cw_loss(t)
}

/// Random perturbation: for `iterations` passes, perturb each tile window of `x1`
/// by independent draws in `[−u, u]` (single-precision addition), clamp
/// into `[x_l, x_u]`, and keep the candidate iff its CW loss under the
/// backend is strictly lower. Succeeds iff the final CW loss is negative.
///
/// Window `(h, w)` covers rows `h + offset .. h + stride` and the same
/// columns, every channel, for tile origins stepping by `stride`. Draws are
/// taken in row, column, channel order from a ChaCha8 stream seeded with
/// `params.seed`.
pub fn random_perturb_attack(
    net: &Network,
    x0: &ImageTensor<f32>,
    t: usize,
    x1: &ImageTensor<f32>,
    eps: f64,
    params: &AttackParams,
) -> Result<AttackRun> {
    params.validate()?;
    if x0.shape() != x1.shape() {
        return Err(Error::ShapeMismatch(format!("x0 is {} but x1 is {}", x0.shape(), x1.shape())));
    }
    let bounds = clamp_bounds(x0, eps);
    random_perturb_within(net, t, x1, &bounds, params)
}

/// [`random_perturb_attack`] with precomputed clamp bounds.
pub fn random_perturb_within(
    net: &Network,
    t: usize,
    x1: &ImageTensor<f32>,
    bounds: &ClampBounds,
    params: &AttackParams,
) -> Result<AttackRun> {
    random_perturb_observed(net, t, x1, bounds, params, |_, _| ())
}

/// [`random_perturb_within`], calling `observe` with every accepted step and
/// the iterate it produced.
pub fn random_perturb_observed(
    net: &Network,
    t: usize,
    x1: &ImageTensor<f32>,
    bounds: &ClampBounds,
    params: &AttackParams,
    mut observe: impl FnMut(&AcceptedStep, &ImageTensor<f32>),
) -> Result<AttackRun> {
    let geo = tile_geometry(params.backend);
    let shape = x1.shape();
    let u = params.u as f32;
    let mut rng = seeded(params.seed);
    let (lo, hi) = (bounds.lower.data(), bounds.upper.data());

    let mut x = x1.clone();
    let mut best = cw(net, params.backend, &x, t)?;
    let initial_cw = best;
    let mut accepted = Vec::new();
    let mut evaluations = 1;
    for it in 0..params.iterations {
        for h in (0..shape.height).step_by(geo.stride) {
            for w in (0..shape.width).step_by(geo.stride) {
                let rows = (h + geo.offset)..(h + geo.stride).min(shape.height);
                let cols = (w + geo.offset)..(w + geo.stride).min(shape.width);
                if rows.is_empty() || cols.is_empty() {
                    continue;
                }
                let mut cand = x.clone();
                let data = cand.data_mut();
                for y in rows {
                    for xx in cols.clone() {
                        for c in 0..shape.channels {
                            let i = shape.index(y, xx, c);
                            let v = data[i] + symmetric_f32(&mut rng, u);
                            data[i] = v.min(hi[i]).max(lo[i]);
                        }
                    }
                }
                let v = cw(net, params.backend, &cand, t)?;
                evaluations += 1;
                if v < best {
                    best = v;
                    x = cand;
                    let step = AcceptedStep { iteration: it, tile: (h, w), cw: v };
                    observe(&step, &x);
                    accepted.push(step);
                }
            }
        }
    }
    Ok(AttackRun { x, success: best < 0.0, initial_cw, final_cw: best, accepted, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn clamp_bounds_respect_both_norms() {
        let x0 = ImageTensor::new(Shape::flat(4), vec![0.0f32, 0.1, 0.5, 0.95]).unwrap();
        let b = clamp_bounds(&x0, 0.1);
        for ((l, u), c) in b.lower.data().iter().zip(b.upper.data()).zip(x0.data()) {
            assert!(c - l <= 0.1f32 && u - c <= 0.1f32);
            assert!((*c as f64 - *l as f64) <= 0.1 && (*u as f64 - *c as f64) <= 0.1);
            assert!(*l >= 0.0 && *u <= 1.0 && l <= c && c <= u);
        }
        // single(0.1) exceeds 0.1: the lower bound of 0.1f32 must leave 0 and
        // cross the subnormals, which only the bisection finishes quickly
        assert!(b.lower.data()[1] > 0.0);
        let (c, l) = (0.1f32, b.lower.data()[1]);
        assert!((c as f64 - l as f64) <= 0.1);
        assert!((c as f64 - l.next_down() as f64) > 0.1);
    }

    #[test]
    fn walk_matches_unit_steps() {
        let mut rng = crate::rng::seeded(3);
        for _ in 0..2000 {
            let c = 0.05 + 0.9 * crate::rng::unit_f32(&mut rng);
            let eps = 1e-3 + 0.04 * crate::rng::unit_f64(&mut rng);
            let e32 = eps as f32;
            let inside = |v: f32| (c - v).abs() <= e32 && (c as f64 - v as f64).abs() <= eps;
            for up in [true, false] {
                let start = if up { c - e32 } else { c + e32 };
                let mut v = start;
                while !inside(v) {
                    v = if up { v.next_up() } else { v.next_down() };
                }
                assert_eq!(walk_toward(start, c, up, inside), v);
                assert_eq!(walk_toward(start - if up { 1e-4 } else { -1e-4 }, c, up, inside), v);
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(AttackParams { u: 0.0, ..AttackParams::new(BackendId::DirectF32, 0) }.validate().is_err());
        assert!(AttackParams { iterations: 0, ..AttackParams::new(BackendId::DirectF32, 0) }.validate().is_err());
    }
}
