//! Estimator tuples and their propagation through expression trees: linear
//! under/overestimators with bounds, the twelve product inequalities,
//! univariate cuts, and local bound ledgers with the affine map G.
use std::cmp::Ordering;

use thiserror::Error;

use crate::expr::{ExprNode, Interval, NodeKind};
use crate::milp::{ModelIR, VarId};
use crate::simplotope::DiscretizationScheme;
use crate::Scalar;

/// Coefficients closer than this are treated as equal when deduplicating.
pub const DEDUP_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("variable {0:?} is unbounded")]
    Unbounded(VarId),
    #[error("bounds out of order: need lower {lower} <= a {a} <= upper {upper}")]
    BoundOrder { lower: f64, a: f64, upper: f64 },
    #[error("x^{exponent} has no closed-form envelope on [{lo}, {hi}]")]
    UnsupportedPower { exponent: u32, lo: f64, hi: f64 },
    #[error("tree has no propagated bounds")]
    MissingBounds,
    #[error("ledger: {0}")]
    Ledger(String),
}

/// `constant + sum coeff * var`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: Vec<(VarId, f64)>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { constant: c, terms: Vec::new() }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr { constant: 0.0, terms: vec![(v, 1.0)] }
    }

    pub fn scaled(&self, k: f64) -> Self {
        LinExpr {
            constant: self.constant * k,
            terms: self.terms.iter().map(|&(v, c)| (v, c * k)).collect(),
        }
    }

    /// `self + k * other`.
    pub fn plus(mut self, k: f64, other: &LinExpr) -> Self {
        self.constant += k * other.constant;
        self.terms.extend(other.terms.iter().map(|&(v, c)| (v, c * k)));
        self
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Terms merged, sorted by variable, zeros dropped.
    pub fn normalized(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        LinExpr { constant: self.constant, terms: out }
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum::<f64>() + self.constant
    }

    /// Coefficientwise comparison of normalized forms.
    pub fn approx_eq(&self, other: &LinExpr, tol: f64) -> bool {
        let (a, b) = (self.normalized(), other.normalized());
        let close = |x: f64, y: f64| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0);
        let mut ia = a.terms.iter().filter(|t| t.1.abs() > tol).peekable();
        let mut ib = b.terms.iter().filter(|t| t.1.abs() > tol).peekable();
        loop {
            match (ia.next(), ib.next()) {
                (None, None) => return close(a.constant, b.constant),
                (Some(x), Some(y)) if x.0 == y.0 && close(x.1, y.1) => {}
                _ => return false,
            }
        }
    }

    pub fn variables(&self) -> impl Iterator<Item = VarId> + '_ {
        self.terms.iter().map(|t| t.0)
    }
}

/// Termwise interval enclosure of `expr` over the variable box.
pub fn estimator_bound(expr: &LinExpr, lower: &[f64], upper: &[f64]) -> Result<Interval<f64>, EstimatorError> {
    let mut lo = expr.constant;
    let mut hi = expr.constant;
    for &(v, c) in &expr.normalized().terms {
        let (l, u) = (lower[v.0], upper[v.0]);
        let (a, b) = if c >= 0.0 { (l, u) } else { (u, l) };
        if !a.is_finite() || !b.is_finite() {
            return Err(EstimatorError::Unbounded(v));
        }
        lo += c * a;
        hi += c * b;
    }
    Ok(Interval::new(lo, hi))
}

/// [`estimator_bound`] over the bounds stored in `model`.
pub fn estimator_bound_in(expr: &LinExpr, model: &ModelIR) -> Result<Interval<f64>, EstimatorError> {
    let lower: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();
    estimator_bound(expr, &lower, &upper)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TupleRole {
    /// The constant `f^L` underestimator.
    Constant,
    Cut,
    /// The node's own value, bounded by `f^U`.
    Node,
}

/// A linear estimator of a node value with its bound: underestimators
/// satisfy `expr <= bound`, overestimators `expr >= bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorTuple {
    pub expr: LinExpr,
    pub bound: f64,
    pub underestimator: bool,
    pub role: TupleRole,
}

impl EstimatorTuple {
    /// Underestimator form: an overestimator `(r, a)` of `f` becomes
    /// `(a + f - r, a)`.
    pub fn switched(&self, value: &LinExpr) -> EstimatorTuple {
        if self.underestimator {
            return self.clone();
        }
        EstimatorTuple {
            expr: LinExpr::constant(self.bound).plus(1.0, value).plus(-1.0, &self.expr),
            bound: self.bound,
            underestimator: true,
            role: self.role,
        }
    }
}

/// One side of a product: the factor value, an underestimator variable `s`
/// of it, and bounds `lower <= a <= upper`.
#[derive(Clone, Debug)]
pub struct ProductOperand {
    pub value: LinExpr,
    pub s: LinExpr,
    pub lower: f64,
    pub upper: f64,
    pub a: f64,
}

/// The twelve product inequalities: `lower[k] <= f1 f2 <= upper[k]`, in the
/// order e1..e6 and r1..r6.
#[derive(Clone, Debug)]
pub struct ProductRows {
    pub lower: Vec<LinExpr>,
    pub upper: Vec<LinExpr>,
}

fn combo(parts: &[(f64, &LinExpr)], constant: f64) -> LinExpr {
    parts
        .iter()
        .fold(LinExpr::constant(constant), |acc, &(k, e)| acc.plus(k, e))
        .normalized()
}

pub fn product_inequalities(p1: &ProductOperand, p2: &ProductOperand) -> Result<ProductRows, EstimatorError> {
    for p in [p1, p2] {
        if !(p.lower <= p.a && p.a <= p.upper) {
            return Err(EstimatorError::BoundOrder { lower: p.lower, a: p.a, upper: p.upper });
        }
    }
    let (f1, f2, s1, s2) = (&p1.value, &p2.value, &p1.s, &p2.s);
    let (l1, u1, a1) = (p1.lower, p1.upper, p1.a);
    let (l2, u2, a2) = (p2.lower, p2.upper, p2.a);
    let lower = vec![
        combo(&[(u2, f1), (u1, f2)], -u1 * u2),
        combo(&[(u2 - a2, s1), (u1 - a1, s2), (a2, f1), (a1, f2)], a1 * a2 - a1 * u2 - u1 * a2),
        combo(&[(u2 - l2, s1), (l2, f1), (a1, f2)], -a1 * u2),
        combo(&[(u1 - l1, s2), (a2, f1), (l1, f2)], -u1 * a2),
        combo(&[(a2 - l2, s1), (a1 - l1, s2), (l2, f1), (l1, f2)], -a1 * a2),
        combo(&[(l2, f1), (l1, f2)], -l1 * l2),
    ];
    let upper = vec![
        combo(&[(u2, f1), (l1, f2)], -l1 * u2),
        combo(&[(l2 - a2, s1), (a1 - u1, s2), (a2, f1), (u1, f2)], -a1 * l2),
        combo(&[(l2 - u2, s1), (a1, f2), (u2, f1)], -a1 * l2),
        combo(&[(l1 - u1, s2), (a2, f1), (u1, f2)], -l1 * a2),
        combo(&[(a2 - u2, s1), (l1 - a1, s2), (u2, f1), (a1, f2)], -l1 * a2),
        combo(&[(l2, f1), (u1, f2)], -u1 * l2),
    ];
    Ok(ProductRows { lower, upper })
}

/// Tangents of `arg^exponent` at `points` on the side where the power is
/// convex (or concave), and the secant on the other side.
#[derive(Clone, Debug)]
pub struct UnivariateCuts {
    pub tangents: Vec<EstimatorTuple>,
    pub secant: EstimatorTuple,
}

/// `k` uniformly spaced points of `[lo, hi]`, endpoints included.
pub fn uniform_points(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..k).map(|t| lo + (hi - lo) * t as f64 / (k - 1) as f64).collect(),
    }
}

pub fn univariate_cuts(
    exponent: u32,
    arg: &LinExpr,
    lo: f64,
    hi: f64,
    points: &[f64],
) -> Result<UnivariateCuts, EstimatorError> {
    let convex = exponent % 2 == 0 || lo >= 0.0;
    let concave = exponent % 2 == 1 && hi <= 0.0;
    if exponent == 0 || !(convex || concave) {
        return Err(EstimatorError::UnsupportedPower { exponent, lo, hi });
    }
    let p = exponent as i32;
    let value = |x: f64| x.powi(p);
    let range = Interval::new(lo, hi).powi(exponent);
    let clamp = |v: f64| v.max(range.lo).min(range.hi);
    let line = |slope: f64, intercept: f64| arg.scaled(slope).plus_constant(intercept).normalized();
    let tangents = points
        .iter()
        .map(|&x0| {
            let slope = exponent as f64 * x0.powi(p - 1);
            let at = |x: f64| value(x0) + slope * (x - x0);
            let (bound, under) = if convex {
                (clamp(at(lo).max(at(hi))), true)
            } else {
                (clamp(at(lo).min(at(hi))), false)
            };
            EstimatorTuple {
                expr: line(slope, value(x0) - slope * x0),
                bound,
                underestimator: under,
                role: TupleRole::Cut,
            }
        })
        .collect();
    let slope = if hi > lo { (value(hi) - value(lo)) / (hi - lo) } else { 0.0 };
    let secant = EstimatorTuple {
        expr: line(slope, value(lo) - slope * lo),
        bound: if convex { clamp(value(lo).min(value(hi))) } else { clamp(value(lo).max(value(hi))) },
        underestimator: !convex,
        role: TupleRole::Cut,
    };
    Ok(UnivariateCuts { tangents, secant })
}

#[derive(Clone, Debug)]
pub struct PropagationConfig {
    /// Tangent points per unary node.
    pub cut_points: usize,
    /// Largest number of breakpoints kept per product factor.
    pub max_breakpoints: usize,
    /// When false, product nodes only get McCormick rows.
    pub product_estimators: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            cut_points: 5,
            max_breakpoints: 8,
            product_estimators: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeRole {
    Variable(usize),
    Constant,
    Sum,
    Power(u32),
    /// Index into [`Propagation::products`].
    Product(usize),
}

#[derive(Clone, Debug)]
pub struct NodeInfo {
    pub role: NodeRole,
    pub children: Vec<usize>,
    /// The node value in model terms (a variable, or a constant).
    pub value: LinExpr,
    pub bounds: Interval<f64>,
    /// Sorted estimator tuples handed to the parent.
    pub rlx: Vec<EstimatorTuple>,
    /// Rows `value >= expr` (underestimators) and `value <= expr` that
    /// describe the node in every relaxation.
    pub cuts: Vec<EstimatorTuple>,
    /// For sums: `value == definition`.
    pub definition: Option<LinExpr>,
}

/// One factor of a product node together with the breakpoints of its
/// simplex Q and the underestimator links `u <= s_j`.
#[derive(Clone, Debug)]
pub struct FactorChain {
    pub child: usize,
    pub value: LinExpr,
    pub lower: f64,
    pub upper: f64,
    /// `a_0 = lower < ... < a_n = upper`.
    pub breakpoints: Vec<f64>,
    /// `s_0 = a_0` (constant), interior variables, `s_n = value`.
    pub s: Vec<LinExpr>,
    /// `(j, u)`: `u <= s_j`, tuples already switched to underestimators.
    pub links: Vec<(usize, LinExpr)>,
}

impl FactorChain {
    pub fn n(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Variables of `s_1..s_n` (`s_n` is the factor value variable when
    /// it is one).
    pub fn s_var(&self, j: usize) -> Option<VarId> {
        match self.s[j].terms.as_slice() {
            [(v, c)] if *c == 1.0 && self.s[j].constant == 0.0 => Some(*v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProductInfo {
    pub node: usize,
    pub w: VarId,
    pub factors: [FactorChain; 2],
    /// Set when a factor has a zero-width range; only McCormick rows apply.
    pub degenerate: bool,
    /// e1, e6 (under) and r1, r6 (over) on the factor values.
    pub mccormick: Vec<EstimatorTuple>,
    /// The twelve inequalities over every breakpoint pair, deduplicated.
    pub rows: Vec<EstimatorTuple>,
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub nodes: Vec<NodeInfo>,
    pub products: Vec<ProductInfo>,
    pub root: usize,
}

struct Builder<'a> {
    model: &'a mut ModelIR,
    x: &'a [VarId],
    config: &'a PropagationConfig,
    prefix: String,
    nodes: Vec<NodeInfo>,
    products: Vec<ProductInfo>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Sorts by bound (constant first, node last among ties) and merges tuples
/// with equal direction and expression, keeping the tighter bound.
pub fn sort_and_dedupe(tuples: Vec<EstimatorTuple>) -> Vec<EstimatorTuple> {
    let mut out: Vec<EstimatorTuple> = Vec::with_capacity(tuples.len());
    for t in tuples {
        let dup = out.iter_mut().find(|o| {
            o.underestimator == t.underestimator && o.role == t.role && o.expr.approx_eq(&t.expr, DEDUP_TOL)
        });
        match dup {
            Some(o) => {
                o.bound = if t.underestimator { o.bound.min(t.bound) } else { o.bound.max(t.bound) };
            }
            None => out.push(t),
        }
    }
    out.sort_by(|a, b| a.bound.partial_cmp(&b.bound).unwrap_or(Ordering::Equal).then(a.role.cmp(&b.role)));
    out
}

/// At most `cap` values from the sorted list, always keeping both ends and
/// spreading the rest evenly.
pub fn spread_selection(values: &[f64], cap: usize) -> Vec<f64> {
    if values.len() <= cap || cap < 2 {
        return values.to_vec();
    }
    let last = values.len() - 1;
    let mut picked: Vec<usize> = (0..cap).map(|k| (k * last + (cap - 1) / 2) / (cap - 1)).collect();
    picked.dedup();
    picked.into_iter().map(|k| values[k]).collect()
}

/// The node's estimators as underestimators with bounds clamped into the
/// node range, sorted by bound.
pub fn switched_tuples(info: &NodeInfo) -> Vec<EstimatorTuple> {
    let (lower, upper) = (info.bounds.lo, info.bounds.hi);
    let mut tuples: Vec<EstimatorTuple> = info
        .rlx
        .iter()
        .map(|t| {
            let mut s = t.switched(&info.value);
            s.bound = s.bound.max(lower).min(upper);
            s
        })
        .collect();
    tuples.sort_by(|a, b| a.bound.partial_cmp(&b.bound).unwrap_or(Ordering::Equal));
    tuples
}

/// Distinct underestimator bounds of a node from its lower to its upper
/// bound, thinned to at most `cap` values.
pub fn factor_breakpoints(info: &NodeInfo, cap: usize) -> Vec<f64> {
    let (lower, upper) = (info.bounds.lo, info.bounds.hi);
    let mut values = vec![lower];
    for t in switched_tuples(info) {
        if !close(t.bound, *values.last().unwrap()) && t.bound < upper && !close(t.bound, upper) {
            values.push(t.bound);
        }
    }
    values.push(upper);
    spread_selection(&values, cap)
}

impl Builder<'_> {
    fn endpoints(&self, bounds: Interval<f64>, value: &LinExpr) -> [EstimatorTuple; 2] {
        [
            EstimatorTuple {
                expr: LinExpr::constant(bounds.lo),
                bound: bounds.lo,
                underestimator: true,
                role: TupleRole::Constant,
            },
            EstimatorTuple {
                expr: value.clone(),
                bound: bounds.hi,
                underestimator: true,
                role: TupleRole::Node,
            },
        ]
    }

    fn visit(&mut self, node: &ExprNode) -> Result<usize, EstimatorError> {
        let bounds = node.bounds().ok_or(EstimatorError::MissingBounds)?;
        let info = match &node.kind {
            NodeKind::Variable(i) => {
                let value = LinExpr::var(self.x[*i]);
                NodeInfo {
                    role: NodeRole::Variable(*i),
                    children: Vec::new(),
                    rlx: self.endpoints(bounds, &value).to_vec(),
                    value,
                    bounds,
                    cuts: Vec::new(),
                    definition: None,
                }
            }
            NodeKind::Constant(c) => NodeInfo {
                role: NodeRole::Constant,
                children: Vec::new(),
                value: LinExpr::constant(*c),
                bounds,
                rlx: vec![EstimatorTuple {
                    expr: LinExpr::constant(*c),
                    bound: *c,
                    underestimator: true,
                    role: TupleRole::Constant,
                }],
                cuts: Vec::new(),
                definition: None,
            },
            NodeKind::Sum { children, coeffs } => {
                let ids: Vec<usize> = children.iter().map(|c| self.visit(c)).collect::<Result<_, _>>()?;
                let definition = ids
                    .iter()
                    .zip(coeffs)
                    .fold(LinExpr::default(), |acc, (&k, &w)| acc.plus(w, &self.nodes[k].value))
                    .normalized();
                let v = self.model.add_var(format!("{}f_{}", self.prefix, self.nodes.len()), bounds.lo, bounds.hi);
                let value = LinExpr::var(v);
                NodeInfo {
                    role: NodeRole::Sum,
                    children: ids,
                    rlx: self.endpoints(bounds, &value).to_vec(),
                    value,
                    bounds,
                    cuts: Vec::new(),
                    definition: Some(definition),
                }
            }
            NodeKind::Power(child, p) => {
                let c = self.visit(child)?;
                let cb = self.nodes[c].bounds;
                let v = self.model.add_var(format!("{}f_{}", self.prefix, self.nodes.len()), bounds.lo, bounds.hi);
                let value = LinExpr::var(v);
                let points = uniform_points(cb.lo, cb.hi, self.config.cut_points);
                let mut cuts = Vec::new();
                let mut rlx = self.endpoints(bounds, &value).to_vec();
                if let Ok(uc) = univariate_cuts(*p, &self.nodes[c].value, cb.lo, cb.hi, &points) {
                    cuts.extend(uc.tangents.iter().cloned());
                    cuts.push(uc.secant.clone());
                    for t in uc.tangents.into_iter().chain(std::iter::once(uc.secant)) {
                        let dominated = if t.underestimator {
                            close(t.bound, bounds.hi)
                        } else {
                            close(t.bound, bounds.lo)
                        };
                        if !dominated {
                            rlx.push(t);
                        }
                    }
                }
                NodeInfo {
                    role: NodeRole::Power(*p),
                    children: vec![c],
                    rlx: sort_and_dedupe(rlx),
                    value,
                    bounds,
                    cuts,
                    definition: None,
                }
            }
            NodeKind::Product(l, r) => {
                let a = self.visit(l)?;
                let b = self.visit(r)?;
                self.product(a, b, bounds)?
            }
        };
        self.nodes.push(info);
        Ok(self.nodes.len() - 1)
    }

    fn factor_chain(&mut self, child: usize, tag: &str) -> FactorChain {
        let info = &self.nodes[child];
        let (lower, upper) = (info.bounds.lo, info.bounds.hi);
        let value = info.value.clone();
        let tuples = switched_tuples(info);
        let breakpoints = factor_breakpoints(info, self.config.max_breakpoints);
        let n = breakpoints.len() - 1;
        let mut s = vec![LinExpr::constant(lower)];
        for j in 1..n {
            let v = self.model.add_var(format!("{}s_{}_{}_{}", self.prefix, self.nodes.len(), tag, j), lower, breakpoints[j]);
            s.push(LinExpr::var(v));
        }
        s.push(value.clone());
        let mut links = Vec::new();
        for t in tuples {
            if t.role != TupleRole::Cut {
                continue;
            }
            let j = breakpoints
                .iter()
                .position(|&a| t.bound <= a || close(t.bound, a))
                .unwrap_or(n);
            links.push((j, t.expr));
        }
        FactorChain { child, value, lower, upper, breakpoints, s, links }
    }

    fn product(&mut self, c1: usize, c2: usize, bounds: Interval<f64>) -> Result<NodeInfo, EstimatorError> {
        let w = self.model.add_var(format!("{}f_{}", self.prefix, self.nodes.len()), bounds.lo, bounds.hi);
        let value = LinExpr::var(w);
        let degenerate = [c1, c2].iter().any(|&c| {
            let b = self.nodes[c].bounds;
            close(b.lo, b.hi)
        });
        let use_chains = self.config.product_estimators && !degenerate;
        let factors = if use_chains {
            [self.factor_chain(c1, "a"), self.factor_chain(c2, "b")]
        } else {
            let trivial = |c: usize, nodes: &[NodeInfo]| {
                let info = &nodes[c];
                let (lo, hi) = (info.bounds.lo, info.bounds.hi);
                FactorChain {
                    child: c,
                    value: info.value.clone(),
                    lower: lo,
                    upper: hi,
                    breakpoints: vec![lo, hi],
                    s: vec![LinExpr::constant(lo), info.value.clone()],
                    links: Vec::new(),
                }
            };
            [trivial(c1, &self.nodes), trivial(c2, &self.nodes)]
        };
        let operand = |f: &FactorChain, j: usize| ProductOperand {
            value: f.value.clone(),
            s: f.s[j].clone(),
            lower: f.lower,
            upper: f.upper,
            a: f.breakpoints[j],
        };
        let clamp = |v: f64| v.max(bounds.lo).min(bounds.hi);
        let tuple = |expr: LinExpr, under: bool, model: &ModelIR| -> Result<EstimatorTuple, EstimatorError> {
            let b = estimator_bound_in(&expr, model)?;
            Ok(EstimatorTuple {
                expr,
                bound: clamp(if under { b.hi } else { b.lo }),
                underestimator: under,
                role: TupleRole::Cut,
            })
        };
        let [f1, f2] = &factors;
        let mc = product_inequalities(&operand(f1, f1.n()), &operand(f2, f2.n()))?;
        let mccormick = vec![
            tuple(mc.lower[0].clone(), true, self.model)?,
            tuple(mc.lower[5].clone(), true, self.model)?,
            tuple(mc.upper[0].clone(), false, self.model)?,
            tuple(mc.upper[5].clone(), false, self.model)?,
        ];
        let mut rows = Vec::new();
        if use_chains {
            for j1 in 0..=f1.n() {
                for j2 in 0..=f2.n() {
                    let pr = product_inequalities(&operand(f1, j1), &operand(f2, j2))?;
                    for e in pr.lower {
                        rows.push(tuple(e, true, self.model)?);
                    }
                    for r in pr.upper {
                        rows.push(tuple(r, false, self.model)?);
                    }
                }
            }
        } else {
            rows = mccormick.clone();
        }
        let rows = sort_and_dedupe(rows);
        let mut rlx = self.endpoints(bounds, &value).to_vec();
        if self.config.product_estimators {
            rlx.extend(rows.iter().cloned());
        }
        let index = self.products.len();
        self.products.push(ProductInfo {
            node: self.nodes.len(),
            w,
            factors,
            degenerate,
            mccormick,
            rows,
        });
        Ok(NodeInfo {
            role: NodeRole::Product(index),
            children: vec![c1, c2],
            rlx: sort_and_dedupe(rlx),
            value,
            bounds,
            cuts: Vec::new(),
            definition: None,
        })
    }
}

/// Walks the tree bottom-up, adding node and estimator variables to `model`
/// (`x[i]` is the model variable of tree variable `i`) and recording the
/// sorted estimator arrays, cuts and product data. Rows are left to the
/// relaxation builders.
pub fn propagate(
    tree: &ExprNode,
    x: &[VarId],
    model: &mut ModelIR,
    config: &PropagationConfig,
    prefix: &str,
) -> Result<Propagation, EstimatorError> {
    let mut b = Builder {
        model,
        x,
        config,
        prefix: prefix.to_string(),
        nodes: Vec::new(),
        products: Vec::new(),
    };
    let root = b.visit(tree)?;
    Ok(Propagation {
        nodes: b.nodes,
        products: b.products,
        root,
    })
}

impl Propagation {
    /// Upper bound of an underestimator `u` of node `child` when the node
    /// value lies in `[lo, hi]`: the variable box is narrowed through the
    /// node value and, for powers of tree variables, through the inverse
    /// power.
    pub fn restricted_bound(&self, u: &LinExpr, child: usize, lo: f64, hi: f64, model: &ModelIR) -> Result<f64, EstimatorError> {
        let mut lower: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();
        let info = &self.nodes[child];
        let mut narrow = |v: VarId, l: f64, h: f64| {
            lower[v.0] = lower[v.0].max(l);
            upper[v.0] = upper[v.0].min(h).max(lower[v.0]);
        };
        if let [(v, c)] = info.value.terms.as_slice() {
            if *c == 1.0 {
                narrow(*v, lo, hi);
            }
        }
        if let NodeRole::Power(p) = info.role {
            let arg = &self.nodes[info.children[0]];
            if let ([(v, c)], true) = (arg.value.terms.as_slice(), arg.bounds.lo >= 0.0) {
                if *c == 1.0 && lo >= 0.0 {
                    let root = |y: f64| y.max(0.0).powf(1.0 / p as f64);
                    narrow(*v, root(lo) - 1e-12, root(hi) + 1e-12);
                }
            }
        }
        Ok(estimator_bound(u, &lower, &upper)?.hi)
    }
}

/// Incremental local bounds `b[i][j][k]`, `k = 0..=l_i`, with
/// `L_ij(delta) = a_i0 + sum_k b_ijk delta_ik` (`delta_i0 = 1`,
/// `delta_il = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBoundLedger<T> {
    pub b: Vec<Vec<Vec<T>>>,
}

/// `G_ij` as an affine function: `constant + sum z[j'] coeff + sum delta[k] coeff`
/// with `z` indexed `1..=n` and `delta` indexed `1..l` (the binaries).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineG<T> {
    pub constant: T,
    pub z: Vec<(usize, T)>,
    pub delta: Vec<(usize, T)>,
}

impl<T: Scalar> LocalBoundLedger<T> {
    /// `b_ij0 = a_ij - a_i0` and zero otherwise: the global bounds.
    pub fn trivial(scheme: &DiscretizationScheme<T>) -> Self {
        LocalBoundLedger {
            b: (0..scheme.dims())
                .map(|i| {
                    (0..=scheme.n(i))
                        .map(|j| {
                            let mut row = vec![T::zero(); scheme.cells_in(i) + 1];
                            row[0] = scheme.a(i, j) - scheme.a(i, 0);
                            row
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Ledger from per-cell bounds: `cell_bound[i][j][c - 1]` bounds
    /// `max_{j' <= j} u_ij'` when `f_i` lies in cell `c`. The bounds are
    /// clamped into the cell, made nondecreasing over the cells, and
    /// differenced.
    pub fn from_cell_bounds(scheme: &DiscretizationScheme<T>, cell_bound: &[Vec<Vec<T>>]) -> Self {
        let b = (0..scheme.dims())
            .map(|i| {
                let l = scheme.cells_in(i);
                (0..=scheme.n(i))
                    .map(|j| {
                        let mut prefix = Vec::with_capacity(l);
                        for c in 1..=l {
                            let (left, right) = scheme.cell(i, c);
                            let bd = if j >= scheme.tau(i)[c] {
                                right
                            } else {
                                cell_bound[i][j][c - 1].min_of(right).max_of(left)
                            };
                            let lc = match prefix.last() {
                                Some(&p) => bd.max_of(p),
                                None => bd,
                            };
                            prefix.push(lc);
                        }
                        let mut row = vec![T::zero(); l + 1];
                        row[0] = prefix[0] - scheme.a(i, 0);
                        for k in 1..l {
                            row[k] = prefix[k] - prefix[k - 1];
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        LocalBoundLedger { b }
    }

    /// `L_ij` for the binaries selecting cell `c`.
    pub fn local_bound(&self, scheme: &DiscretizationScheme<T>, i: usize, j: usize, c: usize) -> T {
        self.b[i][j][..c].iter().fold(scheme.a(i, 0), |acc, &v| acc + v)
    }

    /// The local breakpoints `a'_ij` of cell `c`.
    pub fn local_breakpoints(&self, scheme: &DiscretizationScheme<T>, i: usize, c: usize) -> Vec<T> {
        (0..=scheme.n(i)).map(|j| self.local_bound(scheme, i, j, c)).collect()
    }

    /// Nonnegativity and partial-sum monotonicity in `j`.
    pub fn validate(&self, scheme: &DiscretizationScheme<T>, tol: T) -> Result<(), EstimatorError> {
        for i in 0..scheme.dims() {
            let l = scheme.cells_in(i);
            if self.b[i].len() != scheme.n(i) + 1 || self.b[i].iter().any(|r| r.len() != l + 1) {
                return Err(EstimatorError::Ledger(format!("dimension {i} has the wrong shape")));
            }
            for j in 0..=scheme.n(i) {
                if let Some(k) = self.b[i][j].iter().position(|&v| v < -tol) {
                    return Err(EstimatorError::Ledger(format!("b[{i}][{j}][{k}] is negative")));
                }
                if j > 0 {
                    let (mut hi, mut lo) = (T::zero(), T::zero());
                    for k in 0..=l {
                        hi = hi + self.b[i][j][k];
                        lo = lo + self.b[i][j - 1][k];
                        if hi < lo - tol {
                            return Err(EstimatorError::Ledger(format!(
                                "partial sums decrease from j={} to j={j} at k={k}",
                                j - 1
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Cell property of recipe ledgers: in cell `c`, `L_ij = a_tau(c)` for
    /// `j >= tau(c)` and `L_ij >= a_tau(c-1)` below.
    pub fn check_cells(&self, scheme: &DiscretizationScheme<T>, tol: T) -> bool {
        (0..scheme.dims()).all(|i| {
            (1..=scheme.cells_in(i)).all(|c| {
                let (left, right) = scheme.cell(i, c);
                (0..=scheme.n(i)).all(|j| {
                    let v = self.local_bound(scheme, i, j, c);
                    if j >= scheme.tau(i)[c] {
                        (v - right).abs() <= tol
                    } else {
                        v >= left - tol
                    }
                })
            })
        })
    }

    /// Affine form of `s_ij = G_ij(z, delta)`.
    pub fn g_affine(&self, scheme: &DiscretizationScheme<T>, i: usize, j: usize) -> AffineG<T> {
        let tau = scheme.tau(i);
        let l = scheme.cells_in(i);
        let theta = |j: usize| (0..=l).find(|&k| tau[k] >= j).unwrap_or(l);
        let b = &self.b[i];
        let mut constant = scheme.a(i, 0);
        let mut z = Vec::new();
        for jp in 1..=j {
            let coef = (0..theta(jp)).fold(T::zero(), |acc, k| acc + b[jp][k] - b[jp - 1][k]);
            z.push((jp, coef));
        }
        let mut delta = Vec::new();
        let th = theta(j);
        for k in 0..l {
            let coef = if k < th { b[tau[k]][k] } else { b[j][k] };
            if k == 0 {
                constant = constant + coef;
            } else {
                delta.push((k, coef));
            }
        }
        AffineG { constant, z, delta }
    }
}

/// `s = G(z, delta)` with `z[i]` of length `n_i + 1` (`z_i0 = 1`) and
/// `delta[i]` holding the binaries `delta_i1..delta_i,l-1`.
pub fn g_map<T: Scalar>(
    scheme: &DiscretizationScheme<T>,
    ledger: &LocalBoundLedger<T>,
    z: &[Vec<T>],
    delta: &[Vec<T>],
) -> Result<Vec<Vec<T>>, EstimatorError> {
    ledger.validate(scheme, T::from_f64_lossy(1e-9))?;
    Ok((0..scheme.dims())
        .map(|i| {
            (0..=scheme.n(i))
                .map(|j| {
                    let g = ledger.g_affine(scheme, i, j);
                    let zs = g.z.iter().fold(T::zero(), |acc, &(jp, c)| acc + c * z[i][jp]);
                    let ds = g.delta.iter().fold(T::zero(), |acc, &(k, c)| acc + c * delta[i][k - 1]);
                    g.constant + zs + ds
                })
                .collect()
        })
        .collect())
}
