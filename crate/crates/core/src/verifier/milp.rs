//! Mixed-integer encoding of a ReLU network and the two robustness objectives.

use std::fmt::Write as _;

use super::bounds::BoundsTable;
use super::simplex::{LpProblem, LpRow};
use crate::error::{Error, Result};
use crate::network::{Layer, Network};
use crate::region::PerturbationSet;
use crate::scalar::Scalar;
use crate::tensor::Shape;

pub type VarId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable<T> {
    pub name: String,
    pub lower: T,
    pub upper: T,
    pub kind: VarKind,
}

/// Sparse affine expression `Σ coef·var + constant`, terms sorted by variable.
#[derive(Clone, Debug, PartialEq)]
pub struct LinExpr<T> {
    pub terms: Vec<(VarId, T)>,
    pub constant: T,
}

impl<T: Scalar> LinExpr<T> {
    pub fn constant(c: T) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr { terms: vec![(v, T::one())], constant: T::zero() }
    }

    /// `self + k·other`.
    pub fn add_scaled(&self, k: &T, other: &LinExpr<T>) -> LinExpr<T> {
        let (a, b) = (&self.terms, &other.terms);
        let mut terms = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
                terms.push(a[i].clone());
                i += 1;
            } else if i == a.len() || b[j].0 < a[i].0 {
                terms.push((b[j].0, k.clone() * b[j].1.clone()));
                j += 1;
            } else {
                let c = a[i].1.clone() + k.clone() * b[j].1.clone();
                if !c.is_zero() {
                    terms.push((a[i].0, c));
                }
                i += 1;
                j += 1;
            }
        }
        terms.retain(|(_, c)| !c.is_zero());
        LinExpr { terms, constant: self.constant.clone() + k.clone() * other.constant.clone() }
    }

    pub fn sub(&self, other: &LinExpr<T>) -> LinExpr<T> {
        self.add_scaled(&-T::one(), other)
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms.iter().fold(self.constant.clone(), |acc, (v, c)| acc + c.clone() * x[*v].clone())
    }
}

/// Weighted sum `bias + Σ w_i·e_i` of expressions, accumulated densely.
fn combine<T: Scalar>(
    nvars: usize,
    bias: T,
    src: &[LinExpr<T>],
    parts: impl Iterator<Item = (T, usize)>,
    buf: &mut Vec<T>,
) -> LinExpr<T> {
    buf.clear();
    buf.resize(nvars, T::zero());
    let mut touched = Vec::new();
    let mut constant = bias;
    for (w, e) in parts {
        let e = &src[e];
        constant = constant + w.clone() * e.constant.clone();
        for (v, c) in &e.terms {
            if buf[*v].is_zero() {
                touched.push(*v);
            }
            buf[*v] = buf[*v].clone() + w.clone() * c.clone();
        }
    }
    touched.sort_unstable();
    touched.dedup();
    let terms = touched
        .into_iter()
        .filter_map(|v| {
            let c = std::mem::replace(&mut buf[v], T::zero());
            (!c.is_zero()).then_some((v, c))
        })
        .collect();
    LinExpr { terms, constant }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// Provenance of a constraint row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowTag {
    /// One of the four big-M rows of ReLU `(layer, neuron)`.
    Relu { layer: usize, neuron: usize },
    /// `m ≥ y_i` of the CW max over competitor `class`.
    MaxLower { class: usize },
    /// `m ≤ y_i + M_i(1 − s_i)` selecting competitor `class`.
    MaxSelect { class: usize },
    /// `Σ s_i = 1`.
    SelectOne,
    /// `|x_j − x0_j| ≤ d` of the closest objective.
    Distance { input: usize },
    /// `CW ≤ 0` of the closest objective.
    Misclassified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint<T> {
    pub terms: Vec<(VarId, T)>,
    pub sense: Sense,
    pub rhs: T,
    pub tag: RowTag,
}

impl<T: Scalar> Constraint<T> {
    /// `expr ⋈ 0`, with the constant moved to the right-hand side.
    fn from_expr(expr: LinExpr<T>, sense: Sense, tag: RowTag) -> Self {
        Constraint { terms: expr.terms, sense, rhs: -expr.constant, tag }
    }

    /// Violation at `x` (zero when satisfied).
    pub fn violation(&self, x: &[T]) -> T {
        let lhs = self.terms.iter().fold(T::zero(), |acc, (v, c)| acc + c.clone() * x[*v].clone());
        let d = lhs - self.rhs.clone();
        match self.sense {
            Sense::Le => d.max_of(T::zero()),
            Sense::Ge => (-d).max_of(T::zero()),
            Sense::Eq => d.abs(),
        }
    }
}

/// Which robustness query is encoded, with its decision threshold.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective<T> {
    /// Minimise `CW(NN(x), t0)` over the region; robust iff the minimum exceeds `tau`.
    Worst { tau: T },
    /// Minimise `‖x − x0‖∞` subject to `CW ≤ 0` over the unit box; robust iff
    /// the minimum exceeds `eps` or no such `x` exists.
    Closest { eps: T },
}

impl<T> Objective<T> {
    pub fn threshold(&self) -> &T {
        match self {
            Objective::Worst { tau } => tau,
            Objective::Closest { eps } => eps,
        }
    }
}

/// A minimisation MILP. The query answers "robust" iff the optimum exceeds
/// the objective's threshold (an infeasible model is robust).
#[derive(Clone, Debug)]
pub struct MilpModel<T> {
    pub vars: Vec<Variable<T>>,
    pub constraints: Vec<Constraint<T>>,
    pub objective: LinExpr<T>,
    pub query: Objective<T>,
    pub input_shape: Shape,
    pub input_vars: Vec<VarId>,
    pub target: usize,
    /// Logits as affine expressions of the variables.
    pub logits: Vec<LinExpr<T>>,
}

impl<T: Scalar> MilpModel<T> {
    pub fn threshold(&self) -> &T {
        self.query.threshold()
    }

    pub fn binaries(&self) -> Vec<VarId> {
        (0..self.vars.len()).filter(|&v| self.vars[v].kind == VarKind::Binary).collect()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn count_rows(&self, pred: impl Fn(&RowTag) -> bool) -> usize {
        self.constraints.iter().filter(|c| pred(&c.tag)).count()
    }

    fn add_var(&mut self, name: String, lower: T, upper: T, kind: VarKind) -> VarId {
        self.vars.push(Variable { name, lower, upper, kind });
        self.vars.len() - 1
    }

    fn add_row(&mut self, expr: LinExpr<T>, sense: Sense, tag: RowTag) {
        self.constraints.push(Constraint::from_expr(expr, sense, tag));
    }

    /// The LP relaxation with the given per-variable bound overrides
    /// (binaries fixed or restricted).
    pub fn relaxation(&self, overrides: &[(VarId, T, T)]) -> LpProblem<T> {
        let mut lower: Vec<T> = self.vars.iter().map(|v| v.lower.clone()).collect();
        let mut upper: Vec<T> = self.vars.iter().map(|v| v.upper.clone()).collect();
        for (v, l, u) in overrides {
            lower[*v] = l.clone();
            upper[*v] = u.clone();
        }
        LpProblem {
            lower,
            upper,
            rows: self
                .constraints
                .iter()
                .map(|c| LpRow { coeffs: c.terms.clone(), sense: c.sense, rhs: c.rhs.clone() })
                .collect(),
            objective: self.objective.terms.clone(),
            objective_constant: self.objective.constant.clone(),
        }
    }

    /// Largest constraint or bound violation of a full assignment.
    pub fn max_violation(&self, x: &[T]) -> T {
        let rows = self.constraints.iter().map(|c| c.violation(x));
        let bounds = self.vars.iter().zip(x).map(|(v, x)| {
            (v.lower.clone() - x.clone()).max_of(x.clone() - v.upper.clone()).max_of(T::zero())
        });
        rows.chain(bounds).fold(T::zero(), T::max_of)
    }

    /// Plain-text dump in an LP-file-like layout.
    pub fn to_lp_string(&self) -> String {
        let mut s = String::new();
        let expr = |terms: &[(VarId, T)]| -> String {
            let mut e = String::new();
            for (v, c) in terms {
                let c = c.to_f64();
                let sign = if c < 0.0 { '-' } else { '+' };
                let _ = write!(e, " {sign} {} {}", c.abs(), self.vars[*v].name);
            }
            if e.is_empty() {
                e.push_str(" 0");
            }
            e
        };
        let _ = writeln!(s, "\\ target {} threshold {} ({:?})", self.target, self.threshold().to_f64(), self.query);
        let _ = writeln!(s, "minimize");
        let _ = writeln!(s, " obj:{} + {}", expr(&self.objective.terms), self.objective.constant.to_f64());
        let _ = writeln!(s, "subject to");
        for (i, c) in self.constraints.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(s, " c{i}:{} {op} {}  \\ {:?}", expr(&c.terms), c.rhs.to_f64(), c.tag);
        }
        let _ = writeln!(s, "bounds");
        for v in &self.vars {
            let _ = writeln!(s, " {} <= {} <= {}", v.lower.to_f64(), v.name, v.upper.to_f64());
        }
        let _ = writeln!(s, "binaries");
        for v in self.vars.iter().filter(|v| v.kind == VarKind::Binary) {
            let _ = writeln!(s, " {}", v.name);
        }
        let _ = writeln!(s, "end");
        s
    }
}

/// Encode `net` on `region` for class `t0`.
///
/// `bounds` must have been propagated from a box containing the encoded
/// input box: the region's box for [`Objective::Worst`], `[0, 1]` for
/// [`Objective::Closest`].
pub fn encode_milp<T: Scalar>(
    net: &Network,
    region: &PerturbationSet,
    t0: usize,
    query: Objective<T>,
    bounds: &BoundsTable<T>,
) -> Result<MilpModel<T>> {
    let k = net.num_classes();
    if t0 >= k {
        return Err(Error::InvalidClass { index: t0, classes: k });
    }
    net.check_input_shape(region.shape())?;
    if bounds.len() != net.layers().len() + 1 {
        return Err(Error::ShapeMismatch("bounds table does not match the network".into()));
    }
    let (in_lo, in_hi) = match query {
        Objective::Worst { .. } => region.box_bounds::<T>(),
        Objective::Closest { .. } => {
            let n = region.shape().len();
            (vec![T::zero(); n], vec![T::one(); n])
        }
    };
    let (bl, bu) = bounds.input();
    if in_lo.iter().zip(bl).any(|(a, b)| a < b) || in_hi.iter().zip(bu).any(|(a, b)| a > b) {
        return Err(Error::OutOfRange("bounds were propagated from a box smaller than the encoded input box".into()));
    }

    let mut m = MilpModel {
        vars: Vec::new(),
        constraints: Vec::new(),
        objective: LinExpr::constant(T::zero()),
        query,
        input_shape: region.shape(),
        input_vars: Vec::new(),
        target: t0,
        logits: Vec::new(),
    };
    for (j, (l, u)) in in_lo.into_iter().zip(in_hi).enumerate() {
        let v = m.add_var(format!("x_{j}"), l, u, VarKind::Continuous);
        m.input_vars.push(v);
    }
    let mut act: Vec<LinExpr<T>> = m.input_vars.iter().map(|&v| LinExpr::var(v)).collect();
    let mut buf = Vec::new();

    for (i, (layer, &shape)) in net.layers().iter().zip(net.shapes()).enumerate() {
        let nvars = m.vars.len();
        act = match layer {
            Layer::Conv2d(c) => {
                let out_shape = c.output_shape(shape)?;
                let mut out = Vec::with_capacity(out_shape.len());
                for oy in 0..out_shape.height {
                    for ox in 0..out_shape.width {
                        for o in 0..c.out_ch {
                            let mut parts = Vec::new();
                            for ky in 0..c.kh {
                                for kx in 0..c.kw {
                                    let (Some(y), Some(x)) = ((oy + ky).checked_sub(c.padding), (ox + kx).checked_sub(c.padding)) else {
                                        continue;
                                    };
                                    if y >= shape.height || x >= shape.width {
                                        continue;
                                    }
                                    for ic in 0..c.in_ch {
                                        let w = c.weight(o, ic, ky, kx);
                                        if w != 0.0 {
                                            parts.push((T::from_f32(w), shape.index(y, x, ic)));
                                        }
                                    }
                                }
                            }
                            out.push(combine(nvars, T::from_f32(c.bias[o]), &act, parts.into_iter(), &mut buf));
                        }
                    }
                }
                out
            }
            Layer::Dense(d) => (0..d.rows)
                .map(|r| {
                    let parts = (0..d.cols)
                        .filter(|&c| d.weight(r, c) != 0.0)
                        .map(|c| (T::from_f32(d.weight(r, c)), c));
                    combine(nvars, T::from_f32(d.bias[r]), &act, parts, &mut buf)
                })
                .collect(),
            Layer::Relu => {
                let (l, u) = bounds.at(i);
                let mut out = Vec::with_capacity(act.len());
                for (n, z) in act.iter().enumerate() {
                    let (l, u) = (&l[n], &u[n]);
                    if !l.is_negative() {
                        out.push(z.clone());
                    } else if !u.is_positive() {
                        out.push(LinExpr::constant(T::zero()));
                    } else {
                        let y = m.add_var(format!("y_{i}_{n}"), T::zero(), u.clone(), VarKind::Continuous);
                        let a = m.add_var(format!("a_{i}_{n}"), T::zero(), T::one(), VarKind::Binary);
                        let tag = RowTag::Relu { layer: i, neuron: n };
                        let ye = LinExpr::var(y);
                        let ae = LinExpr::<T>::var(a);
                        m.add_row(ye.clone(), Sense::Ge, tag);
                        m.add_row(ye.sub(z), Sense::Ge, tag);
                        // y ≤ z − l(1 − a)  ⇔  y − z − l·a + l ≤ 0
                        let row = ye.sub(z).add_scaled(&-l.clone(), &ae).add_scaled(l, &LinExpr::constant(T::one()));
                        m.add_row(row, Sense::Le, tag);
                        m.add_row(ye.add_scaled(&-u.clone(), &ae), Sense::Le, tag);
                        out.push(ye);
                    }
                }
                out
            }
            Layer::Flatten => act,
        };
    }

    let (ll, lu) = bounds.logits();
    let mut rivals: Vec<usize> = (0..k).filter(|&i| i != t0).collect();
    // a rival whose upper bound is below another rival's lower bound never attains the max
    let best_lower = rivals.iter().map(|&i| ll[i].clone()).fold(None, |acc: Option<T>, v| Some(acc.map_or(v.clone(), |a| a.max_of(v))));
    if let Some(bl) = best_lower {
        let keep: Vec<usize> = rivals.iter().copied().filter(|&i| lu[i] >= bl).collect();
        rivals = keep;
    }
    let max_expr = if rivals.len() == 1 {
        act[rivals[0]].clone()
    } else {
        let lo = rivals.iter().map(|&i| ll[i].clone()).reduce(T::max_of).unwrap();
        let hi = rivals.iter().map(|&i| lu[i].clone()).reduce(T::max_of).unwrap();
        let mv = m.add_var("m".into(), lo, hi.clone(), VarKind::Continuous);
        let me = LinExpr::var(mv);
        let mut select_sum = LinExpr::constant(-T::one());
        for &i in &rivals {
            m.add_row(me.sub(&act[i]), Sense::Ge, RowTag::MaxLower { class: i });
            let s = m.add_var(format!("s_{i}"), T::zero(), T::one(), VarKind::Binary);
            let big = hi.clone() - ll[i].clone();
            // m − y_i ≤ M(1 − s)  ⇔  m − y_i + M·s − M ≤ 0
            let row = me.sub(&act[i]).add_scaled(&big, &LinExpr::var(s)).add_scaled(&-big.clone(), &LinExpr::constant(T::one()));
            m.add_row(row, Sense::Le, RowTag::MaxSelect { class: i });
            select_sum = select_sum.add_scaled(&T::one(), &LinExpr::var(s));
        }
        m.add_row(select_sum, Sense::Eq, RowTag::SelectOne);
        me
    };
    let cw = act[t0].sub(&max_expr);

    match m.query {
        Objective::Worst { .. } => m.objective = cw,
        Objective::Closest { .. } => {
            let d = m.add_var("d".into(), T::zero(), T::one(), VarKind::Continuous);
            let de = LinExpr::var(d);
            for (j, &c) in region.center().data().iter().enumerate() {
                let xe = LinExpr::var(m.input_vars[j]).add_scaled(&-T::from_f32(c), &LinExpr::constant(T::one()));
                m.add_row(xe.sub(&de), Sense::Le, RowTag::Distance { input: j });
                m.add_row(xe.add_scaled(&T::one(), &de), Sense::Ge, RowTag::Distance { input: j });
            }
            m.add_row(cw, Sense::Le, RowTag::Misclassified);
            m.objective = de;
        }
    }
    m.logits = act;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Dense;
    use crate::tensor::ImageTensor;
    use crate::verifier::bounds::interval_bounds;

    fn tiny(bias: f32) -> Network {
        Network::new(Shape::flat(1), vec![
            Layer::Dense(Dense { rows: 1, cols: 1, weights: vec![1.0], bias: vec![bias] }),
            Layer::Relu,
            Layer::Dense(Dense { rows: 2, cols: 1, weights: vec![1.0, -1.0], bias: vec![0.0, 0.0] }),
        ])
        .unwrap()
    }

    fn region() -> PerturbationSet {
        PerturbationSet::new(ImageTensor::new(Shape::flat(1), vec![0.5f32]).unwrap(), 0.25).unwrap()
    }

    #[test]
    fn stable_relus_need_no_binaries() {
        let net = tiny(1.0);
        let b = interval_bounds::<f64>(&net, &region());
        let m = encode_milp(&net, &region(), 0, Objective::Worst { tau: 0.0 }, &b).unwrap();
        assert_eq!(m.num_binaries(), 0);
        assert_eq!(m.constraints.len(), 0);
    }

    #[test]
    fn one_unstable_relu_gives_one_binary_and_four_rows() {
        let net = tiny(-0.5);
        let b = interval_bounds::<f64>(&net, &region());
        let m = encode_milp(&net, &region(), 0, Objective::Worst { tau: 0.0 }, &b).unwrap();
        assert_eq!(m.num_binaries(), 1);
        assert_eq!(m.count_rows(|t| matches!(t, RowTag::Relu { .. })), 4);
        assert!(m.to_lp_string().contains("binaries\n a_1_0\n"));
    }

    #[test]
    fn class_out_of_range_is_an_error() {
        let net = tiny(0.0);
        let b = interval_bounds::<f64>(&net, &region());
        assert!(matches!(
            encode_milp(&net, &region(), 2, Objective::Worst { tau: 0.0 }, &b),
            Err(Error::InvalidClass { .. })
        ));
    }

    #[test]
    fn closest_requires_unit_box_bounds() {
        let net = tiny(0.0);
        let b = interval_bounds::<f64>(&net, &region());
        assert!(encode_milp(&net, &region(), 0, Objective::Closest { eps: 0.1 }, &b).is_err());
        let b = interval_bounds::<f64>(&net, &region().unit_box());
        let m = encode_milp(&net, &region(), 0, Objective::Closest { eps: 0.1 }, &b).unwrap();
        assert_eq!(m.count_rows(|t| matches!(t, RowTag::Distance { .. })), 2);
    }

    #[test]
    fn add_scaled_merges_and_cancels() {
        let a = LinExpr { terms: vec![(0, 1.0), (2, 2.0)], constant: 1.0 };
        let b = LinExpr { terms: vec![(1, 1.0), (2, 1.0)], constant: 0.5 };
        let c = a.add_scaled(&-2.0, &b);
        assert_eq!(c.terms, vec![(0, 1.0), (1, -2.0)]);
        assert_eq!(c.constant, 0.0);
    }
}
