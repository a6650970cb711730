//! Bounded-variable primal simplex on a dense tableau.
//!
//! Pricing uses Bland's rule throughout (lowest-index improving column,
//! lowest-index leaving variable on ratio ties). In floating point the
//! tolerances are 1e-9; with exact rationals every comparison is exact.

use super::milp::Sense;
use crate::error::{Error, Result};
use crate::scalar::{Rational, Scalar};

const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
/// Post-solve residual above which a floating-point solve is rejected.
const RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LpRow<T> {
    pub coeffs: Vec<(usize, T)>,
    pub sense: Sense,
    pub rhs: T,
}

/// `min c·x + c0` subject to rows and finite box bounds on every variable.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub rows: Vec<LpRow<T>>,
    pub objective: Vec<(usize, T)>,
    pub objective_constant: T,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpStatus<T> {
    Optimal { value: T, x: Vec<T> },
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpOutcome<T> {
    pub status: LpStatus<T>,
    pub iterations: usize,
}

impl<T: Scalar> LpProblem<T> {
    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    /// Exact rational copy (every float is a rational).
    pub fn to_rational(&self) -> LpProblem<Rational> {
        let conv = |v: &[(usize, T)]| v.iter().map(|(j, c)| (*j, c.to_rational())).collect();
        LpProblem {
            lower: self.lower.iter().map(Scalar::to_rational).collect(),
            upper: self.upper.iter().map(Scalar::to_rational).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| LpRow { coeffs: conv(&r.coeffs), sense: r.sense, rhs: r.rhs.to_rational() })
                .collect(),
            objective: conv(&self.objective),
            objective_constant: self.objective_constant.to_rational(),
        }
    }

    /// Largest row or bound violation of `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for r in &self.rows {
            let lhs = r.coeffs.iter().fold(T::zero(), |a, (j, c)| a + c.clone() * x[*j].clone());
            let d = lhs - r.rhs.clone();
            let v = match r.sense {
                Sense::Le => d,
                Sense::Ge => -d,
                Sense::Eq => d.abs(),
            };
            worst = worst.max_of(v);
        }
        for ((x, l), u) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max_of(l.clone() - x.clone()).max_of(x.clone() - u.clone());
        }
        worst
    }

    pub fn objective_value(&self, x: &[T]) -> T {
        self.objective.iter().fold(self.objective_constant.clone(), |a, (j, c)| a + c.clone() * x[*j].clone())
    }
}

struct Tableau<T> {
    rows: usize,
    cols: usize,
    a: Vec<T>,
    beta: Vec<T>,
    basis: Vec<usize>,
    row_of: Vec<Option<usize>>,
    at_upper: Vec<bool>,
    lo: Vec<T>,
    hi: Vec<T>,
    iterations: usize,
    max_iterations: usize,
}

impl<T: Scalar> Tableau<T> {
    fn value(&self, j: usize) -> T {
        match self.row_of[j] {
            Some(i) => self.beta[i].clone(),
            None if self.at_upper[j] => self.hi[j].clone(),
            None => self.lo[j].clone(),
        }
    }

    fn reduced_costs(&self, cost: &[T]) -> Vec<T> {
        let mut d = cost.to_vec();
        for i in 0..self.rows {
            let cb = &cost[self.basis[i]];
            if cb.is_zero() {
                continue;
            }
            let row = &self.a[i * self.cols..(i + 1) * self.cols];
            for (dj, aij) in d.iter_mut().zip(row) {
                if !aij.is_zero() {
                    *dj = dj.clone() - cb.clone() * aij.clone();
                }
            }
        }
        d
    }

    /// Minimise `cost` from the current basis. Returns `false` if unbounded.
    fn optimize(&mut self, cost: &[T]) -> Result<bool> {
        let (piv_tol, opt_tol) = (T::tol(PIVOT_TOL), T::tol(OPT_TOL));
        let mut d = self.reduced_costs(cost);
        loop {
            let Some(q) = (0..self.cols).find(|&j| {
                self.row_of[j].is_none()
                    && self.lo[j] < self.hi[j]
                    && if self.at_upper[j] { d[j] > opt_tol } else { d[j] < -opt_tol.clone() }
            }) else {
                return Ok(true);
            };
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(Error::Lp(format!("iteration limit {} reached", self.max_iterations)));
            }
            let increasing = !self.at_upper[q];
            // leaving candidate: (step, row)
            let mut best: Option<(T, usize)> = None;
            for i in 0..self.rows {
                let t = &self.a[i * self.cols + q];
                if t.abs() <= piv_tol {
                    continue;
                }
                // basic variable moves by -t per unit increase of x_q
                let falls = t.is_positive() == increasing;
                let b = self.basis[i];
                let step = if falls {
                    (self.beta[i].clone() - self.lo[b].clone()) / t.abs()
                } else {
                    (self.hi[b].clone() - self.beta[i].clone()) / t.abs()
                };
                let step = step.max_of(T::zero());
                let better = match &best {
                    None => true,
                    Some((s, r)) => step < *s || (step == *s && b < self.basis[*r]),
                };
                if better {
                    best = Some((step, i));
                }
            }
            let flip = self.hi[q].clone() - self.lo[q].clone();
            let signed = |s: T| if increasing { s } else { -s };
            match best {
                Some((step, r)) if step < flip => self.pivot(r, q, signed(step), increasing, &mut d),
                _ => {
                    let delta = signed(flip);
                    self.shift_basics(q, &delta);
                    self.at_upper[q] = increasing;
                }
            }
        }
    }

    fn shift_basics(&mut self, q: usize, delta: &T) {
        for i in 0..self.rows {
            let t = &self.a[i * self.cols + q];
            if !t.is_zero() {
                self.beta[i] = self.beta[i].clone() - t.clone() * delta.clone();
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize, delta: T, increasing: bool, d: &mut [T]) {
        let cols = self.cols;
        let entering_value = self.value(q) + delta.clone();
        let leaving = self.basis[r];
        let t = self.a[r * cols + q].clone();
        // the leaving variable stops at the bound it was moving toward
        let falls = t.is_positive() == increasing;
        self.shift_basics(q, &delta);
        self.beta[r] = entering_value;

        let p = t;
        for v in &mut self.a[r * cols..(r + 1) * cols] {
            if !v.is_zero() {
                *v = v.clone() / p.clone();
            }
        }
        let pivot_row: Vec<T> = self.a[r * cols..(r + 1) * cols].to_vec();
        let nz: Vec<usize> = (0..cols).filter(|&j| !pivot_row[j].is_zero()).collect();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.a[i * cols + q].clone();
            if f.is_zero() {
                continue;
            }
            let row = &mut self.a[i * cols..(i + 1) * cols];
            for &j in &nz {
                row[j] = row[j].clone() - f.clone() * pivot_row[j].clone();
            }
            row[q] = T::zero();
        }
        let f = d[q].clone();
        if !f.is_zero() {
            for &j in &nz {
                d[j] = d[j].clone() - f.clone() * pivot_row[j].clone();
            }
            d[q] = T::zero();
        }
        self.basis[r] = q;
        self.row_of[q] = Some(r);
        self.row_of[leaving] = None;
        self.at_upper[leaving] = !falls;
    }
}

/// Solve `lp` to optimality.
///
/// In floating point, a solution whose residual exceeds 1e-6 is reported as
/// an [`Error::Lp`] so the caller can retry exactly.
pub fn solve_lp<T: Scalar>(lp: &LpProblem<T>) -> Result<LpOutcome<T>> {
    solve_lp_with_limit(lp, 200_000)
}

pub fn solve_lp_with_limit<T: Scalar>(lp: &LpProblem<T>, max_iterations: usize) -> Result<LpOutcome<T>> {
    let n = lp.num_vars();
    if lp.upper.len() != n {
        return Err(Error::Lp("bound vectors differ in length".into()));
    }
    if lp.lower.iter().chain(&lp.upper).any(|v| !v.is_finite()) {
        return Err(Error::Lp("every variable needs finite bounds".into()));
    }
    if lp.lower.iter().zip(&lp.upper).any(|(l, u)| l > u) {
        return Ok(LpOutcome { status: LpStatus::Infeasible, iterations: 0 });
    }
    let m = lp.rows.len();

    // slack and artificial layout
    let mut lo = lp.lower.clone();
    let mut hi = lp.upper.clone();
    let mut row_cols: Vec<Vec<(usize, T)>> = Vec::with_capacity(m);
    let mut scale = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut artificials = Vec::new();
    let mut pending_art: Vec<(usize, T, T)> = Vec::new(); // (row, coef, value)
    for (i, row) in lp.rows.iter().enumerate() {
        let (mut act, mut min_act, mut max_act) = (T::zero(), T::zero(), T::zero());
        for (j, c) in &row.coeffs {
            if *j >= n {
                return Err(Error::Lp(format!("row {i} references undeclared variable {j}")));
            }
            let (a, b) = (c.clone() * lo[*j].clone(), c.clone() * hi[*j].clone());
            act = act + a.clone();
            min_act = min_act + a.clone().min_of(b.clone());
            max_act = max_act + a.max_of(b);
        }
        let r = row.rhs.clone() - act;
        let mut cols = row.coeffs.clone();
        let slack = |lo: &mut Vec<T>, hi: &mut Vec<T>, cap: T| {
            lo.push(T::zero());
            hi.push(cap.max_of(T::zero()));
            lo.len() - 1
        };
        match row.sense {
            Sense::Le => {
                let s = slack(&mut lo, &mut hi, row.rhs.clone() - min_act);
                cols.push((s, T::one()));
                if !r.is_negative() {
                    scale.push(T::one());
                    beta.push(r);
                    basis.push(s);
                } else {
                    pending_art.push((i, -T::one(), -r));
                    scale.push(-T::one());
                    beta.push(T::zero());
                    basis.push(usize::MAX);
                }
            }
            Sense::Ge => {
                let s = slack(&mut lo, &mut hi, max_act - row.rhs.clone());
                cols.push((s, -T::one()));
                if !r.is_positive() {
                    scale.push(-T::one());
                    beta.push(-r);
                    basis.push(s);
                } else {
                    pending_art.push((i, T::one(), r));
                    scale.push(T::one());
                    beta.push(T::zero());
                    basis.push(usize::MAX);
                }
            }
            Sense::Eq => {
                let (coef, val) = if r.is_negative() { (-T::one(), -r) } else { (T::one(), r) };
                scale.push(coef.clone());
                pending_art.push((i, coef, val));
                beta.push(T::zero());
                basis.push(usize::MAX);
            }
        }
        row_cols.push(cols);
    }
    for (i, coef, val) in pending_art {
        lo.push(T::zero());
        hi.push(val.clone());
        let col = lo.len() - 1;
        row_cols[i].push((col, coef));
        artificials.push(col);
        beta[i] = val;
        basis[i] = col;
    }
    let cols = lo.len();
    let mut a = vec![T::zero(); m * cols];
    for (i, rc) in row_cols.into_iter().enumerate() {
        for (j, c) in rc {
            let cell = &mut a[i * cols + j];
            *cell = cell.clone() + c * scale[i].clone();
        }
    }
    let mut row_of = vec![None; cols];
    for (i, &b) in basis.iter().enumerate() {
        row_of[b] = Some(i);
    }
    let mut tab = Tableau {
        rows: m,
        cols,
        a,
        beta,
        basis,
        row_of,
        at_upper: vec![false; cols],
        lo,
        hi,
        iterations: 0,
        max_iterations,
    };

    if !artificials.is_empty() {
        let mut cost = vec![T::zero(); cols];
        for &j in &artificials {
            cost[j] = T::one();
        }
        tab.optimize(&cost)?;
        let infeas = artificials.iter().fold(T::zero(), |s, &j| s + tab.value(j));
        if infeas > T::tol(FEAS_TOL) {
            return Ok(LpOutcome { status: LpStatus::Infeasible, iterations: tab.iterations });
        }
        for &j in &artificials {
            tab.hi[j] = T::zero();
            tab.at_upper[j] = false;
            if let Some(i) = tab.row_of[j] {
                tab.beta[i] = T::zero();
            }
        }
    }

    let mut cost = vec![T::zero(); cols];
    for (j, c) in &lp.objective {
        if *j >= n {
            return Err(Error::Lp(format!("objective references undeclared variable {j}")));
        }
        cost[*j] = cost[*j].clone() + c.clone();
    }
    if !tab.optimize(&cost)? {
        return Ok(LpOutcome { status: LpStatus::Unbounded, iterations: tab.iterations });
    }
    let mut x: Vec<T> = (0..n).map(|j| tab.value(j)).collect();
    if !T::EXACT {
        for ((v, l), u) in x.iter_mut().zip(&lp.lower).zip(&lp.upper) {
            if *v < *l || *v > *u {
                *v = v.clone().max_of(l.clone()).min_of(u.clone());
            }
        }
        let resid = lp.max_violation(&x);
        if resid.to_f64() > RESIDUAL_LIMIT || !resid.is_finite() {
            return Err(Error::Lp(format!("residual {} after {} iterations", resid, tab.iterations)));
        }
    }
    let value = lp.objective_value(&x);
    Ok(LpOutcome { status: LpStatus::Optimal { value, x }, iterations: tab.iterations })
}

/// Solve in `T`, retrying in exact arithmetic when a floating-point solve
/// fails numerically. The flag reports whether the retry happened.
pub fn solve_lp_robust<T: Scalar>(lp: &LpProblem<T>) -> Result<(LpOutcome<T>, bool)> {
    match solve_lp(lp) {
        Ok(out) => Ok((out, false)),
        Err(Error::Lp(_)) if !T::EXACT => {
            let exact = solve_lp(&lp.to_rational())?;
            let status = match exact.status {
                LpStatus::Optimal { value, x } => LpStatus::Optimal {
                    value: T::from_rational(&value),
                    x: x.iter().map(T::from_rational).collect(),
                },
                LpStatus::Infeasible => LpStatus::Infeasible,
                LpStatus::Unbounded => LpStatus::Unbounded,
            };
            Ok((LpOutcome { status, iterations: exact.iterations }, true))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::type_complexity)]
    fn lp(lower: Vec<f64>, upper: Vec<f64>, rows: Vec<(Vec<(usize, f64)>, Sense, f64)>, obj: Vec<(usize, f64)>) -> LpProblem<f64> {
        LpProblem {
            lower,
            upper,
            rows: rows.into_iter().map(|(coeffs, sense, rhs)| LpRow { coeffs, sense, rhs }).collect(),
            objective: obj,
            objective_constant: 0.0,
        }
    }

    fn optimum<T: Scalar>(out: LpOutcome<T>) -> (T, Vec<T>) {
        match out.status {
            LpStatus::Optimal { value, x } => (value, x),
            s => panic!("expected optimum, got {s:?}"),
        }
    }

    #[test]
    fn box_only() {
        let p = lp(vec![2.0], vec![5.0], vec![], vec![(0, 1.0)]);
        assert_eq!(optimum(solve_lp(&p).unwrap()), (2.0, vec![2.0]));
    }

    #[test]
    fn covering_row() {
        let p = lp(vec![0.0; 2], vec![1.0; 2], vec![(vec![(0, 1.0), (1, 1.0)], Sense::Ge, 1.0)], vec![(0, 1.0), (1, 1.0)]);
        assert_eq!(optimum(solve_lp(&p).unwrap()).0, 1.0);
        let q = optimum(solve_lp(&p.to_rational()).unwrap()).0;
        assert_eq!(q, Rational::from_f64(1.0));
    }

    #[test]
    fn maximisation_via_negated_costs() {
        // max x + 2y s.t. x + y ≤ 1.5, x − y = 0.25
        let p = lp(
            vec![0.0; 2],
            vec![1.0; 2],
            vec![(vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.5), (vec![(0, 1.0), (1, -1.0)], Sense::Eq, 0.25)],
            vec![(0, -1.0), (1, -2.0)],
        );
        let (v, x) = optimum(solve_lp(&p).unwrap());
        assert!((v + 2.125).abs() < 1e-12, "{v} {x:?}");
    }

    #[test]
    fn infeasible_rows() {
        let p = lp(vec![0.0], vec![1.0], vec![(vec![(0, 1.0)], Sense::Ge, 2.0)], vec![(0, 1.0)]);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
        let p = lp(vec![1.0], vec![0.0], vec![], vec![]);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn infinite_bounds_are_rejected() {
        let p = lp(vec![0.0], vec![f64::INFINITY], vec![], vec![(0, 1.0)]);
        assert!(solve_lp(&p).is_err());
    }
}
