//! Complete MILP robustness verification.
//!
//! [`interval_bounds`] supplies big-M constants, [`encode_milp`] builds the
//! mixed-integer model for the worst-case or closest-point query, and
//! [`branch_and_bound`] solves it with the in-crate simplex. Everything is
//! generic over the verifier arithmetic (`f64` or exact [`Rational`]);
//! [`Verifier`] selects one at run time.

pub mod bnb;
pub mod bounds;
pub mod brute;
pub mod milp;
pub mod simplex;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use bnb::{branch_and_bound, BnbOptions, SearchGoal, DEFAULT_TIME_LIMIT};
pub use bounds::{interval_bounds, propagate_box, BoundsTable};
pub use brute::brute_force_verify;
pub use milp::{encode_milp, MilpModel, Objective};
pub use simplex::{solve_lp, LpOutcome, LpProblem, LpStatus};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::region::PerturbationSet;
use crate::scalar::{Precision, Rational, Scalar};
use crate::tensor::ImageTensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict<T> {
    /// The optimum exceeds the threshold. `margin` is a lower bound on the
    /// optimum (exact when solved with [`SearchGoal::Optimize`]), `None` if
    /// the model is infeasible.
    Robust { margin: Option<T> },
    /// `counterexample` attains objective value `margin ≤ threshold`.
    NotRobust { counterexample: ImageTensor<T>, margin: T },
    Timeout,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SolveStats {
    pub nodes: usize,
    pub lp_solves: usize,
    pub lp_iterations: usize,
    /// Floating-point LP solves redone in exact arithmetic.
    pub exact_retries: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SolveStats {
    pub(crate) fn absorb(&mut self, other: &SolveStats) {
        self.nodes += other.nodes;
        self.lp_solves += other.lp_solves;
        self.lp_iterations += other.lp_iterations;
        self.exact_retries += other.exact_retries;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyResult<T> {
    pub verdict: Verdict<T>,
    pub stats: SolveStats,
}

impl<T: Scalar> VerifyResult<T> {
    pub fn is_robust(&self) -> bool {
        matches!(self.verdict, Verdict::Robust { .. })
    }

    pub fn is_not_robust(&self) -> bool {
        matches!(self.verdict, Verdict::NotRobust { .. })
    }

    pub fn is_timeout(&self) -> bool {
        matches!(self.verdict, Verdict::Timeout)
    }

    pub fn margin(&self) -> Option<&T> {
        match &self.verdict {
            Verdict::Robust { margin } => margin.as_ref(),
            Verdict::NotRobust { margin, .. } => Some(margin),
            Verdict::Timeout => None,
        }
    }

    pub fn counterexample(&self) -> Option<&ImageTensor<T>> {
        match &self.verdict {
            Verdict::NotRobust { counterexample, .. } => Some(counterexample),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.verdict {
            Verdict::Robust { .. } => "robust",
            Verdict::NotRobust { .. } => "not-robust",
            Verdict::Timeout => "timeout",
        }
    }

    /// Convert margin and counterexample to doubles (rounding rationals).
    pub fn to_f64(&self) -> VerifyResult<f64> {
        let verdict = match &self.verdict {
            Verdict::Robust { margin } => Verdict::Robust { margin: margin.as_ref().map(Scalar::to_f64) },
            Verdict::NotRobust { counterexample, margin } => Verdict::NotRobust {
                counterexample: counterexample.map(Scalar::to_f64),
                margin: margin.to_f64(),
            },
            Verdict::Timeout => Verdict::Timeout,
        };
        VerifyResult { verdict, stats: self.stats.clone() }
    }
}

/// Decide whether `min CW(NN(x), t0) > tau` over the region.
pub fn verify_worst<T: Scalar>(
    net: &Network,
    region: &PerturbationSet,
    t0: usize,
    tau: T,
    opts: &BnbOptions,
) -> Result<VerifyResult<T>> {
    let bounds = interval_bounds::<T>(net, region);
    let model = encode_milp(net, region, t0, Objective::Worst { tau }, &bounds)?;
    branch_and_bound(&model, opts)
}

/// Decide whether every misclassified input is farther than `eps` from `x0`.
pub fn verify_closest<T: Scalar>(
    net: &Network,
    x0: &ImageTensor<f32>,
    eps: T,
    t0: usize,
    opts: &BnbOptions,
) -> Result<VerifyResult<T>> {
    let region = PerturbationSet::new(x0.clone(), 1.0)?;
    let bounds = interval_bounds::<T>(net, &region);
    let model = encode_milp(net, &region, t0, Objective::Closest { eps }, &bounds)?;
    branch_and_bound(&model, opts)
}

/// Verifier arithmetic chosen at run time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arithmetic {
    #[default]
    Double,
    Rational,
}

impl Arithmetic {
    pub fn precision(self) -> Precision {
        match self {
            Arithmetic::Double => Precision::Double,
            Arithmetic::Rational => Precision::Rational,
        }
    }
}

/// Runtime-configured verifier reporting in doubles.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Verifier {
    pub arithmetic: Arithmetic,
    pub options: BnbOptions,
}

impl Verifier {
    pub fn new(arithmetic: Arithmetic, time_limit: Duration) -> Self {
        Verifier { arithmetic, options: BnbOptions { time_limit, ..BnbOptions::default() } }
    }

    pub fn worst(&self, net: &Network, region: &PerturbationSet, t0: usize, tau: f64) -> Result<VerifyResult<f64>> {
        if !tau.is_finite() {
            return Err(Error::NonFinite("tau".into()));
        }
        match self.arithmetic {
            Arithmetic::Double => verify_worst(net, region, t0, tau, &self.options),
            Arithmetic::Rational => Ok(verify_worst(net, region, t0, Rational::from_f64(tau), &self.options)?.to_f64()),
        }
    }

    pub fn closest(&self, net: &Network, x0: &ImageTensor<f32>, eps: f64, t0: usize) -> Result<VerifyResult<f64>> {
        if !eps.is_finite() {
            return Err(Error::NonFinite("eps".into()));
        }
        match self.arithmetic {
            Arithmetic::Double => verify_closest(net, x0, eps, t0, &self.options),
            Arithmetic::Rational => Ok(verify_closest(net, x0, Rational::from_f64(eps), t0, &self.options)?.to_f64()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Dense, Layer};
    use crate::tensor::Shape;

    /// y = relu(x0 − x1), logits (y, 0.25 − y) for inputs in [0, 1]².
    fn net() -> Network {
        Network::new(Shape::flat(2), vec![
            Layer::Dense(Dense { rows: 1, cols: 2, weights: vec![1.0, -1.0], bias: vec![0.0] }),
            Layer::Relu,
            Layer::Dense(Dense { rows: 2, cols: 1, weights: vec![1.0, -1.0], bias: vec![0.0, 0.25] }),
        ])
        .unwrap()
    }

    fn region(eps: f64) -> PerturbationSet {
        PerturbationSet::new(ImageTensor::new(Shape::flat(2), vec![0.75f32, 0.25]).unwrap(), eps).unwrap()
    }

    #[test]
    fn worst_margin_is_exact_in_both_arithmetics() {
        // CW = 2y − 0.25 with y ≥ 0.5 − 2ε, so the minimum is 0.75 − 4ε
        let opts = BnbOptions { goal: SearchGoal::Optimize, ..Default::default() };
        let r = verify_worst(&net(), &region(0.125), 0, 0.0, &opts).unwrap();
        assert_eq!(r.margin(), Some(&0.25));
        let q = verify_worst(&net(), &region(0.125), 0, Rational::from_f64(0.0), &opts).unwrap();
        assert_eq!(q.margin(), Some(&Rational::new(1.into(), 4.into())));
        let r = verify_worst(&net(), &region(0.25), 0, 0.0, &opts).unwrap();
        assert!(r.is_not_robust());
        assert_eq!(r.margin(), Some(&-0.25));
    }

    #[test]
    fn extreme_thresholds() {
        let opts = BnbOptions::default();
        assert!(verify_worst(&net(), &region(0.5), 0, -1e6, &opts).unwrap().is_robust());
        assert!(verify_worst(&net(), &region(0.5), 0, 1e6, &opts).unwrap().is_not_robust());
    }

    #[test]
    fn closest_distance() {
        // misclassified once 2y < 0.25, i.e. x0 − x1 < 0.125: distance 0.1875
        let opts = BnbOptions { goal: SearchGoal::Optimize, ..Default::default() };
        let x0 = region(0.0).center().clone();
        let r = verify_closest(&net(), &x0, Rational::from_f64(0.1), 0, &opts).unwrap();
        assert!(r.is_robust());
        assert_eq!(r.margin(), Some(&Rational::new(3.into(), 16.into())));
        let r = verify_closest(&net(), &x0, 0.2, 0, &BnbOptions::default()).unwrap();
        assert!(r.is_not_robust());
    }

    #[test]
    fn zero_binaries_equals_plain_lp() {
        let region = PerturbationSet::new(ImageTensor::new(Shape::flat(2), vec![0.9f32, 0.1]).unwrap(), 0.05).unwrap();
        let bounds = interval_bounds::<f64>(&net(), &region);
        let model = encode_milp(&net(), &region, 0, Objective::Worst { tau: 0.0 }, &bounds).unwrap();
        assert_eq!(model.num_binaries(), 0);
        let lp = match solve_lp(&model.relaxation(&[])).unwrap().status {
            LpStatus::Optimal { value, .. } => value,
            s => panic!("{s:?}"),
        };
        let opts = BnbOptions { goal: SearchGoal::Optimize, ..Default::default() };
        assert_eq!(branch_and_bound(&model, &opts).unwrap().margin(), Some(&lp));
    }

    #[test]
    fn brute_force_counts_patterns() {
        let r = brute_force_verify(&net(), &region(0.3), 0, 0.0).unwrap();
        assert_eq!(r.stats.lp_solves, 2);
        assert!(r.is_not_robust());
        let r = brute_force_verify(&net(), &PerturbationSet::new(region(0.0).center().clone(), 0.1).unwrap(), 0, 0.0).unwrap();
        assert_eq!(r.stats.lp_solves, 1);
    }
}
