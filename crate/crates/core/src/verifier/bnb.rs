//! Best-first branch-and-bound over the binary variables of a [`MilpModel`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::milp::{MilpModel, VarId};
use super::simplex::{solve_lp_robust, LpStatus};
use super::{SolveStats, Verdict, VerifyResult};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// Default per-solve time limit.
pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(360);
const INTEGRALITY_TOL: f64 = 1e-6;
const OBJECTIVE_TOL: f64 = 1e-9;

/// What the search has to establish.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SearchGoal {
    /// Decide whether the optimum exceeds the threshold; stops at the first
    /// point at or below it, and the robust margin is a proven lower bound.
    #[default]
    Decide,
    /// Find the exact optimum.
    Optimize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnbOptions {
    pub time_limit: Duration,
    pub goal: SearchGoal,
    /// Process one node at a time in priority order. Otherwise up to
    /// `threads` nodes are expanded per round, concurrently.
    pub deterministic: bool,
    pub threads: usize,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions { time_limit: DEFAULT_TIME_LIMIT, goal: SearchGoal::Decide, deterministic: true, threads: 1 }
    }
}

struct Node<T> {
    fixings: Vec<(VarId, T, T)>,
    bound: T,
    x: Vec<T>,
    seq: u64,
}

impl<T: Scalar> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Node<T> {}
impl<T: Scalar> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Node<T> {
    // BinaryHeap is a max-heap: the smallest bound, then the oldest node, wins
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum Eval<T> {
    Infeasible,
    Fractional { bound: T, x: Vec<T> },
    Integral { value: T, x: Vec<T> },
}

fn fractionality<T: Scalar>(v: &T) -> T {
    v.clone().min_of(T::one() - v.clone()).max_of(T::zero())
}

fn solve<T: Scalar>(model: &MilpModel<T>, fixings: &[(VarId, T, T)], stats: &mut SolveStats) -> Result<Option<(T, Vec<T>)>> {
    let (out, retried) = solve_lp_robust(&model.relaxation(fixings))?;
    stats.lp_solves += 1;
    stats.lp_iterations += out.iterations;
    stats.exact_retries += retried as usize;
    Ok(match out.status {
        LpStatus::Optimal { value, x } => Some((value, x)),
        _ => None,
    })
}

fn evaluate<T: Scalar>(model: &MilpModel<T>, binaries: &[VarId], fixings: &[(VarId, T, T)], stats: &mut SolveStats) -> Result<Eval<T>> {
    let Some((bound, x)) = solve(model, fixings, stats)? else {
        return Ok(Eval::Infeasible);
    };
    let tol = T::tol(INTEGRALITY_TOL);
    if binaries.iter().any(|&b| fractionality(&x[b]) > tol) {
        return Ok(Eval::Fractional { bound, x });
    }
    if binaries.iter().all(|&b| x[b].is_zero() || x[b].is_one()) {
        return Ok(Eval::Integral { value: bound, x });
    }
    // near-integral: re-solve with every binary pinned to its rounding
    let half = T::from_ratio(1, 2);
    let pinned: Vec<(VarId, T, T)> = binaries
        .iter()
        .map(|&b| {
            let v = if x[b] >= half { T::one() } else { T::zero() };
            (b, v.clone(), v)
        })
        .collect();
    Ok(match solve(model, &pinned, stats)? {
        Some((value, x)) => Eval::Integral { value, x },
        None => Eval::Infeasible,
    })
}

fn branch_var<T: Scalar>(binaries: &[VarId], x: &[T]) -> VarId {
    let mut best = (binaries[0], T::zero());
    for &b in binaries {
        let f = fractionality(&x[b]);
        if f > best.1 {
            best = (b, f);
        }
    }
    best.0
}

fn counterexample<T: Scalar>(model: &MilpModel<T>, x: &[T]) -> Result<ImageTensor<T>> {
    let data = model
        .input_vars
        .iter()
        .map(|&v| x[v].clone().max_of(model.vars[v].lower.clone()).min_of(model.vars[v].upper.clone()))
        .collect();
    ImageTensor::new(model.input_shape, data)
}

/// Fixings of a node, its evaluation and the work it took.
type Pending<T> = (Vec<(VarId, T, T)>, Result<Eval<T>>, SolveStats);

/// Solve `model` and turn its optimum into a robustness verdict.
pub fn branch_and_bound<T: Scalar>(model: &MilpModel<T>, opts: &BnbOptions) -> Result<VerifyResult<T>> {
    let start = Instant::now();
    let mut stats = SolveStats::default();
    let binaries = model.binaries();
    let threshold = model.threshold().clone();
    let decide = opts.goal == SearchGoal::Decide;
    let obj_tol = T::tol(OBJECTIVE_TOL);

    let mut heap: BinaryHeap<Node<T>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut incumbent: Option<(T, Vec<T>)> = None;
    // smallest bound of a subtree discarded for lying above the threshold
    let mut pruned_above: Option<T> = None;

    let finish = |verdict: Verdict<T>, mut stats: SolveStats| {
        stats.wall_time = start.elapsed();
        Ok(VerifyResult { verdict, stats })
    };

    let mut pending: Vec<Pending<T>> = Vec::new();
    {
        let mut s = SolveStats::default();
        let e = evaluate(model, &binaries, &[], &mut s);
        pending.push((Vec::new(), e, s));
    }
    loop {
        for (fixings, eval, s) in pending.drain(..) {
            stats.absorb(&s);
            stats.nodes += 1;
            match eval? {
                Eval::Infeasible => {}
                Eval::Integral { value, x } => {
                    if incumbent.as_ref().is_none_or(|(v, _)| value < *v) {
                        incumbent = Some((value, x));
                    }
                }
                Eval::Fractional { bound, x } => {
                    heap.push(Node { fixings, bound, x, seq });
                    seq += 1;
                }
            }
        }
        if decide {
            if let Some((v, x)) = &incumbent {
                if *v <= threshold {
                    let cex = counterexample(model, x)?;
                    return finish(Verdict::NotRobust { counterexample: cex, margin: v.clone() }, stats);
                }
            }
        }

        let width = if opts.deterministic { 1 } else { opts.threads.max(1) };
        let mut batch = Vec::with_capacity(width);
        while batch.len() < width {
            let Some(node) = heap.pop() else { break };
            let dominated = incumbent.as_ref().is_some_and(|(v, _)| node.bound >= v.clone() - obj_tol.clone());
            if decide && node.bound > threshold {
                let b = node.bound.clone();
                pruned_above = Some(pruned_above.map_or(b.clone(), |p| p.min_of(b)));
                continue;
            }
            if dominated {
                continue;
            }
            batch.push(node);
        }
        if batch.is_empty() {
            break;
        }
        if start.elapsed() >= opts.time_limit {
            return finish(Verdict::Timeout, stats);
        }

        let mut children = Vec::with_capacity(2 * batch.len());
        for node in &batch {
            let b = branch_var(&binaries, &node.x);
            for v in [T::zero(), T::one()] {
                let mut f = node.fixings.clone();
                f.push((b, v.clone(), v));
                children.push(f);
            }
        }
        let run = |f: Vec<(VarId, T, T)>| {
            let mut s = SolveStats::default();
            let e = evaluate(model, &binaries, &f, &mut s);
            (f, e, s)
        };
        pending = if width == 1 {
            children.into_iter().map(run).collect()
        } else {
            children.into_par_iter().map(run).collect()
        };
    }

    let verdict = match (opts.goal, incumbent) {
        (SearchGoal::Optimize, Some((v, x))) if v <= threshold => {
            Verdict::NotRobust { counterexample: counterexample(model, &x)?, margin: v }
        }
        (SearchGoal::Optimize, inc) => Verdict::Robust { margin: inc.map(|(v, _)| v) },
        (SearchGoal::Decide, inc) => {
            let best = inc.map(|(v, _)| v);
            let margin = match (best, pruned_above) {
                (Some(a), Some(b)) => Some(a.min_of(b)),
                (a, b) => a.or(b),
            };
            Verdict::Robust { margin }
        }
    };
    finish(verdict, stats)
}
