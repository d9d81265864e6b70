//! Whole-problem relaxations of polynomial programs: McCormick, composite
//! (CR) with a separation loop, discretized MIP, the combined CRMIP and its
//! local-bound variant CRMIP+, and a weight-grid baseline.
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelopes::{
    add_vertex_hull, bilinear_concave_terms, bilinear_convex_terms, discrete_concave_envelope, envelope_value, separate,
    AffinePiece, EnvelopeError, HullLink, Side,
};
use crate::estimators::{
    factor_breakpoints, propagate, EstimatorError, EstimatorTuple, FactorChain, LinExpr, LocalBoundLedger, NodeRole,
    Propagation, PropagationConfig,
};
use crate::expr::{ExprNode, NodeKind, PolyModel, VariableBox};
use crate::milp::{
    branch_and_bound, Backend, BranchOptions, Cmp, Constraint, LpSession, ModelIR, ObjSense, SolveResult, SolveStatus,
    VarId,
};
use crate::simplotope::{add_chain_vars, add_incremental, add_incremental_rows, add_logarithmic, SchemeError};
use crate::{Ledger, Scheme};

/// Slack used when deciding whether a separated piece is violated.
pub const CUT_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum RelaxationError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("the fixed point is outside the relaxation")]
    Infeasible,
    #[error("term {0} is not rooted at a product")]
    NotAProduct(usize),
    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantTag {
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "CR")]
    Cr,
    #[serde(rename = "MIP")]
    Mip,
    #[serde(rename = "CRMIP")]
    Crmip,
    #[serde(rename = "CRMIP+")]
    CrmipPlus,
    #[serde(rename = "GRID")]
    Grid,
}

impl VariantTag {
    pub const ALL: [VariantTag; 6] = [
        VariantTag::Mc,
        VariantTag::Cr,
        VariantTag::Mip,
        VariantTag::Crmip,
        VariantTag::CrmipPlus,
        VariantTag::Grid,
    ];

    fn uses_estimators(self) -> bool {
        matches!(self, VariantTag::Cr | VariantTag::Crmip | VariantTag::CrmipPlus)
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantTag::Mc => "MC",
            VariantTag::Cr => "CR",
            VariantTag::Mip => "MIP",
            VariantTag::Crmip => "CRMIP",
            VariantTag::CrmipPlus => "CRMIP+",
            VariantTag::Grid => "GRID",
        })
    }
}

impl FromStr for VariantTag {
    type Err = RelaxationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(VariantTag::Mc),
            "cr" => Ok(VariantTag::Cr),
            "mip" => Ok(VariantTag::Mip),
            "crmip" => Ok(VariantTag::Crmip),
            "crmip+" | "crmip_plus" | "crmipplus" => Ok(VariantTag::CrmipPlus),
            "grid" | "mip19" => Ok(VariantTag::Grid),
            _ => Err(RelaxationError::Unknown { kind: "variant", value: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryFormulation {
    #[default]
    Incremental,
    Logarithmic,
}

impl FromStr for BinaryFormulation {
    type Err = RelaxationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "inc" | "incremental" => Ok(BinaryFormulation::Incremental),
            "log" | "logarithmic" => Ok(BinaryFormulation::Logarithmic),
            _ => Err(RelaxationError::Unknown { kind: "formulation", value: s.to_string() }),
        }
    }
}

/// How CR represents the envelope over Q.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeMode {
    /// Staircase pieces added by the separation loop.
    #[default]
    Separation,
    /// The exact vertex hull.
    Hull,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerKind {
    /// Global breakpoints only.
    Trivial,
    /// Bounds of the estimators restricted to each cell.
    #[default]
    Cells,
}

/// Breakpoints used by MIP and GRID.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MipScheme {
    /// Factor bounds plus `beta` median points, all discretized.
    #[default]
    Median,
    /// The propagated estimator bounds with the CRMIP binaries.
    Propagated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    /// Tangent points per power node.
    pub cut_points: usize,
    /// Discretization points per product factor.
    pub discretization_points: usize,
    pub separation_rounds: usize,
    pub formulation: BinaryFormulation,
    pub max_breakpoints: usize,
    pub envelope: EnvelopeMode,
    pub ledger: LedgerKind,
    pub mip_scheme: MipScheme,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            cut_points: 5,
            discretization_points: 1,
            separation_rounds: 50,
            formulation: BinaryFormulation::Incremental,
            max_breakpoints: 8,
            envelope: EnvelopeMode::Separation,
            ledger: LedgerKind::Cells,
            mip_scheme: MipScheme::Median,
        }
    }
}

impl VariantConfig {
    pub fn validate(&self) -> Result<(), RelaxationError> {
        if self.cut_points < 2 {
            return Err(RelaxationError::Config(format!("need at least 2 cut points, got {}", self.cut_points)));
        }
        if self.max_breakpoints < 2 {
            return Err(RelaxationError::Config("need at least 2 breakpoints per factor".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationVariant {
    pub tag: VariantTag,
    pub config: VariantConfig,
}

impl RelaxationVariant {
    pub fn new(tag: VariantTag) -> Self {
        RelaxationVariant { tag, config: VariantConfig::default() }
    }

    pub fn with_config(tag: VariantTag, config: VariantConfig) -> Self {
        RelaxationVariant { tag, config }
    }
}

/// `sum x coeffs + sum y coeffs (cmp) rhs`, with `y_k` the value of term `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub x: Vec<(usize, f64)>,
    pub y: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// `min c.x + d.y` over linear rows in `(x, y)`, a box on `x`, and
/// `y_k = terms[k](x)`.
#[derive(Clone, Debug)]
pub struct FactorableProblem {
    pub domain: VariableBox,
    pub terms: Vec<ExprNode>,
    pub objective_x: Vec<(usize, f64)>,
    pub objective_y: Vec<(usize, f64)>,
    pub rows: Vec<LinearRow>,
}

impl FactorableProblem {
    /// Propagates bounds on every term.
    pub fn new(
        domain: VariableBox,
        mut terms: Vec<ExprNode>,
        objective_x: Vec<(usize, f64)>,
        objective_y: Vec<(usize, f64)>,
        rows: Vec<LinearRow>,
    ) -> Self {
        for t in &mut terms {
            t.propagate_bounds(&domain);
        }
        FactorableProblem { domain, terms, objective_x, objective_y, rows }
    }

    /// `min tree(x)` over the box.
    pub fn minimize(domain: VariableBox, tree: ExprNode) -> Self {
        Self::new(domain, vec![tree], Vec::new(), vec![(0, 1.0)], Vec::new())
    }

    /// Splits every linear combination of the model into linear parts and
    /// nonlinear terms. Maximization is turned into minimizing the negation,
    /// and a constant objective offset becomes a constant term.
    pub fn from_model(model: &PolyModel) -> Self {
        let mut terms: Vec<ExprNode> = Vec::new();
        let sign = if model.sense == ObjSense::Maximize { -1.0 } else { 1.0 };
        let (ox, oy, offset) = split_linear(&model.objective, sign, &mut terms);
        let mut oy = oy;
        if offset != 0.0 {
            terms.push(ExprNode::constant(offset));
            oy.push((terms.len() - 1, 1.0));
        }
        let rows = model
            .constraints
            .iter()
            .map(|c| {
                let (x, y, k) = split_linear(&c.expr, 1.0, &mut terms);
                LinearRow { x, y, cmp: c.cmp, rhs: c.rhs - k }
            })
            .collect();
        Self::new(model.domain.clone(), terms, ox, oy, rows)
    }

    fn term_values(&self, x: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.evaluate(x).unwrap_or(f64::NAN)).collect()
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let y = self.term_values(x);
        self.objective_x.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.objective_y.iter().map(|&(k, c)| c * y[k]).sum::<f64>()
    }

    /// Largest row or box violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let y = self.term_values(x);
        let rows = self.rows.iter().map(|r| {
            let lhs = r.x.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + r.y.iter().map(|&(k, c)| c * y[k]).sum::<f64>();
            match r.cmp {
                Cmp::Le => (lhs - r.rhs).max(0.0),
                Cmp::Ge => (r.rhs - lhs).max(0.0),
                Cmp::Eq => (lhs - r.rhs).abs(),
            }
        });
        let boxed = x.iter().enumerate().map(|(i, &v)| {
            (self.domain.lower()[i] - v).max(v - self.domain.upper()[i]).max(0.0)
        });
        rows.chain(boxed).fold(0.0, f64::max)
    }
}

type LinearParts = (Vec<(usize, f64)>, Vec<(usize, f64)>, f64);

fn split_linear(expr: &ExprNode, scale: f64, terms: &mut Vec<ExprNode>) -> LinearParts {
    let mut x: Vec<(usize, f64)> = Vec::new();
    let mut y: Vec<(usize, f64)> = Vec::new();
    let mut constant = 0.0;
    let mut visit = |node: &ExprNode, c: f64, x: &mut Vec<(usize, f64)>, y: &mut Vec<(usize, f64)>, constant: &mut f64| match &node.kind {
        NodeKind::Variable(i) => x.push((*i, c)),
        NodeKind::Constant(v) => *constant += c * v,
        _ => {
            let k = terms.iter().position(|t| t == node).unwrap_or_else(|| {
                terms.push(node.clone());
                terms.len() - 1
            });
            y.push((k, c));
        }
    };
    match &expr.kind {
        NodeKind::Sum { children, coeffs } => {
            for (child, &c) in children.iter().zip(coeffs) {
                visit(child, scale * c, &mut x, &mut y, &mut constant);
            }
        }
        _ => visit(expr, scale, &mut x, &mut y, &mut constant),
    }
    (x, y, constant)
}

/// Model data of one product node.
#[derive(Clone, Debug)]
pub struct ProductBlock {
    pub term: usize,
    /// Index into the term's [`Propagation::products`].
    pub product: usize,
    pub w: VarId,
    pub factors: [LinExpr; 2],
    /// Scheme of the envelope over Q; `None` when only McCormick rows apply.
    pub scheme: Option<Scheme>,
    /// `s[i][j]` for `j = 0..=n_i` over `scheme`.
    pub s: Vec<Vec<LinExpr>>,
    pub z: Vec<Vec<VarId>>,
    pub delta: Vec<Vec<VarId>>,
    /// Set when the envelope is left to the separation loop.
    pub separated: bool,
    pub ledgers: Vec<Ledger>,
}

/// A relaxation model with its variable directory.
#[derive(Clone, Debug)]
pub struct BuiltModel {
    pub variant: RelaxationVariant,
    pub model: ModelIR,
    pub x: Vec<VarId>,
    pub propagations: Vec<Propagation>,
    pub products: Vec<ProductBlock>,
    /// Model expression of each term value.
    pub terms: Vec<LinExpr>,
}

fn add_expr_row(model: &mut ModelIR, name: String, expr: &LinExpr, cmp: Cmp) {
    let e = expr.normalized();
    if e.terms.is_empty() {
        return;
    }
    model.add_row(name, e.terms, cmp, -e.constant);
}

/// Rows `value >= expr` for underestimators and `value <= expr` otherwise.
fn add_estimator_rows(model: &mut ModelIR, prefix: &str, value: &LinExpr, tuples: &[EstimatorTuple]) {
    for (k, t) in tuples.iter().enumerate() {
        let diff = value.clone().plus(-1.0, &t.expr);
        let cmp = if t.underestimator { Cmp::Ge } else { Cmp::Le };
        add_expr_row(model, format!("{prefix}_{k}"), &diff, cmp);
    }
}

fn piece_expr(piece: &AffinePiece<f64>, s: &[Vec<LinExpr>]) -> LinExpr {
    let mut e = LinExpr::constant(piece.constant);
    for (c, si) in piece.coeffs.iter().zip(s) {
        for (j, &k) in c.iter().enumerate().skip(1) {
            if k != 0.0 {
                e = e.plus(k, &si[j]);
            }
        }
    }
    e.normalized()
}

/// `s_ij = a_i0 + sum_{j' <= j} (a_ij' - a_i,j'-1) z_ij'`.
fn s_from_z_exprs(scheme: &Scheme, z: &[Vec<VarId>]) -> Vec<Vec<LinExpr>> {
    (0..scheme.dims())
        .map(|i| {
            let mut acc = LinExpr::constant(scheme.a(i, 0));
            let mut out = vec![acc.clone()];
            for j in 1..=scheme.n(i) {
                acc = acc.plus(scheme.a(i, j) - scheme.a(i, j - 1), &LinExpr::var(z[i][j - 1]));
                out.push(acc.clone());
            }
            out
        })
        .collect()
}

/// Breakpoint indices carrying binaries: the ends plus `beta` spread interior
/// indices (the lower median for one).
pub fn binary_indices(n: usize, beta: usize) -> Vec<usize> {
    let interior = n.saturating_sub(1);
    let k = beta.min(interior);
    let mut tau = vec![0];
    for t in 1..=k {
        tau.push(1 + ((t * (interior + 1)) / (k + 1)).saturating_sub(1).min(interior - 1));
    }
    if k == 1 {
        tau[1] = n / 2;
    }
    tau.push(n);
    tau.dedup();
    tau
}

/// `(f^L, m_1, .., m_beta, f^U)` with the `m` taken from the propagated
/// breakpoints at [`binary_indices`], or uniformly when there are too few.
pub fn median_breakpoints(bounds: &[f64], beta: usize) -> Vec<f64> {
    let n = bounds.len() - 1;
    let (lo, hi) = (bounds[0], bounds[n]);
    if beta == 0 {
        return vec![lo, hi];
    }
    if n >= beta + 1 {
        return binary_indices(n, beta).into_iter().map(|j| bounds[j]).collect();
    }
    (0..=beta + 1).map(|k| lo + (hi - lo) * k as f64 / (beta + 1) as f64).collect()
}

fn product_value(scheme: &Scheme) -> impl Fn(&[usize]) -> f64 + '_ {
    move |p: &[usize]| scheme.a(0, p[0]) * scheme.a(1, p[1])
}

struct Assembler<'a> {
    model: ModelIR,
    config: &'a VariantConfig,
}

impl Assembler<'_> {
    fn binaries(&mut self, scheme: &Scheme, z: &[Vec<VarId>], prefix: &str) -> Result<Vec<Vec<VarId>>, RelaxationError> {
        Ok(match self.config.formulation {
            BinaryFormulation::Incremental => add_incremental(&mut self.model, scheme, z, prefix),
            BinaryFormulation::Logarithmic => add_logarithmic(&mut self.model, scheme, z, prefix)?,
        })
    }

    /// `f_i = F(z_i)`.
    fn link_values(&mut self, scheme: &Scheme, z: &[Vec<VarId>], values: &[LinExpr], prefix: &str) {
        let s = s_from_z_exprs(scheme, z);
        for i in 0..scheme.dims() {
            let diff = values[i].clone().plus(-1.0, &s[i][scheme.n(i)]);
            add_expr_row(&mut self.model, format!("{prefix}f_{i}"), &diff, Cmp::Eq);
        }
    }

    fn envelope_pieces(&mut self, scheme: &Scheme, s: &[Vec<LinExpr>], w: VarId, prefix: &str) -> Result<(), RelaxationError> {
        let wv = LinExpr::var(w);
        for (k, p) in bilinear_convex_terms(scheme)?.iter().enumerate() {
            let diff = wv.clone().plus(-1.0, &piece_expr(p, s));
            add_expr_row(&mut self.model, format!("{prefix}cvx_{k}"), &diff, Cmp::Ge);
        }
        for (k, p) in bilinear_concave_terms(scheme)?.iter().enumerate() {
            let diff = wv.clone().plus(-1.0, &piece_expr(p, s));
            add_expr_row(&mut self.model, format!("{prefix}ccv_{k}"), &diff, Cmp::Le);
        }
        Ok(())
    }

    fn envelope_hull(&mut self, scheme: &Scheme, z: &[Vec<VarId>], w: VarId, prefix: &str) -> Result<(), RelaxationError> {
        let phi = product_value(scheme);
        add_vertex_hull(&mut self.model, scheme, HullLink::Z(z), &[(w, &phi)], prefix)?;
        Ok(())
    }

    /// `Z(s) = z` over the chain and returns `z`.
    fn chain_z(&mut self, scheme: &Scheme, s: &[Vec<LinExpr>], prefix: &str) -> Vec<Vec<VarId>> {
        let z = add_chain_vars(&mut self.model, scheme, prefix);
        for i in 0..scheme.dims() {
            for j in 1..=scheme.n(i) {
                let width = scheme.a(i, j) - scheme.a(i, j - 1);
                let diff = LinExpr::var(z[i][j - 1]).scaled(width).plus(-1.0, &s[i][j]).plus(1.0, &s[i][j - 1]);
                add_expr_row(&mut self.model, format!("{prefix}zs_{i}_{j}"), &diff, Cmp::Eq);
            }
        }
        z
    }

    /// Chain rows of Q written in `s`.
    fn q_rows(&mut self, scheme: &Scheme, s: &[Vec<LinExpr>], prefix: &str) {
        for i in 0..scheme.dims() {
            let n = scheme.n(i);
            for j in 1..n {
                let (lw, rw) = (scheme.a(i, j) - scheme.a(i, j - 1), scheme.a(i, j + 1) - scheme.a(i, j));
                let e = s[i][j]
                    .scaled(rw)
                    .plus(-rw, &s[i][j - 1])
                    .plus(-lw, &s[i][j + 1])
                    .plus(lw, &s[i][j]);
                add_expr_row(&mut self.model, format!("{prefix}q_{i}_{j}"), &e, Cmp::Ge);
            }
            let top = s[i][n].clone().plus(-1.0, &s[i][n - 1]);
            add_expr_row(&mut self.model, format!("{prefix}q_{i}_{n}"), &top, Cmp::Ge);
        }
    }

    fn links(&mut self, chains: &[FactorChain], s: &[Vec<LinExpr>], prefix: &str) {
        for (i, fc) in chains.iter().enumerate() {
            for (k, (j, u)) in fc.links.iter().enumerate() {
                if *j == 0 {
                    continue;
                }
                let diff = s[i][*j].clone().plus(-1.0, u);
                add_expr_row(&mut self.model, format!("{prefix}link_{i}_{k}"), &diff, Cmp::Ge);
            }
        }
    }
}

fn cell_ledger(prop: &Propagation, fc: &FactorChain, scheme: &Scheme, i: usize, model: &ModelIR) -> Result<Ledger, RelaxationError> {
    let single = Scheme::new(vec![scheme.breakpoints(i).to_vec()], vec![scheme.tau(i).to_vec()])?;
    let n = scheme.n(i);
    let mut bounds = vec![vec![0.0; scheme.cells_in(i)]; n + 1];
    for c in 1..=scheme.cells_in(i) {
        let (left, right) = scheme.cell(i, c);
        let mut running = scheme.a(i, 0);
        let mut per_group = vec![f64::NEG_INFINITY; n + 1];
        for (j, u) in &fc.links {
            let b = prop.restricted_bound(u, fc.child, left, right, model)?.min(scheme.a(i, *j));
            per_group[*j] = per_group[*j].max(b);
        }
        for j in 0..=n {
            running = running.max(per_group[j]);
            bounds[j][c - 1] = running;
        }
    }
    let ledger = LocalBoundLedger::from_cell_bounds(&single, &[bounds]);
    ledger.validate(&single, 1e-9)?;
    Ok(ledger)
}

/// Builds the relaxation of `problem` for `variant`.
pub fn build(problem: &FactorableProblem, variant: &RelaxationVariant) -> Result<BuiltModel, RelaxationError> {
    let cfg = &variant.config;
    cfg.validate()?;
    let tag = variant.tag;
    if tag == VariantTag::CrmipPlus && cfg.formulation == BinaryFormulation::Logarithmic {
        return Err(RelaxationError::Config("CRMIP+ needs incremental binaries".into()));
    }
    let mut asm = Assembler { model: ModelIR::new(ObjSense::Minimize), config: cfg };
    let x: Vec<VarId> = (0..problem.domain.len())
        .map(|i| asm.model.add_var(format!("x_{i}"), problem.domain.lower()[i], problem.domain.upper()[i]))
        .collect();
    let estimators = tag.uses_estimators() || (tag == VariantTag::Mip && cfg.mip_scheme == MipScheme::Propagated);
    let pcfg = PropagationConfig {
        cut_points: cfg.cut_points,
        max_breakpoints: cfg.max_breakpoints,
        product_estimators: estimators,
    };
    let mut propagations = Vec::new();
    for (k, tree) in problem.terms.iter().enumerate() {
        propagations.push(propagate(tree, &x, &mut asm.model, &pcfg, &format!("t{k}_"))?);
    }
    for (k, prop) in propagations.iter().enumerate() {
        for (id, node) in prop.nodes.iter().enumerate() {
            let prefix = format!("t{k}_n{id}");
            if let Some(def) = &node.definition {
                let diff = node.value.clone().plus(-1.0, def);
                add_expr_row(&mut asm.model, format!("{prefix}_sum"), &diff, Cmp::Eq);
            }
            add_estimator_rows(&mut asm.model, &format!("{prefix}_cut"), &node.value, &node.cuts);
        }
    }
    let mut products = Vec::new();
    for (k, prop) in propagations.iter().enumerate() {
        for (pi, info) in prop.products.iter().enumerate() {
            let prefix = format!("t{k}_p{pi}_");
            let w = info.w;
            let wv = LinExpr::var(w);
            let factors = [info.factors[0].value.clone(), info.factors[1].value.clone()];
            let mut block = ProductBlock {
                term: k,
                product: pi,
                w,
                factors: factors.clone(),
                scheme: None,
                s: Vec::new(),
                z: Vec::new(),
                delta: Vec::new(),
                separated: false,
                ledgers: Vec::new(),
            };
            add_estimator_rows(&mut asm.model, &format!("{prefix}mc"), &wv, &info.mccormick);
            if info.degenerate || tag == VariantTag::Mc {
                products.push(block);
                continue;
            }
            match tag {
                VariantTag::Mc => unreachable!(),
                VariantTag::Mip | VariantTag::Grid => {
                    let scheme = match (tag, cfg.mip_scheme) {
                        (VariantTag::Mip, MipScheme::Propagated) => {
                            let bp: Vec<Vec<f64>> = info.factors.iter().map(|f| f.breakpoints.clone()).collect();
                            let tau = bp.iter().map(|b| binary_indices(b.len() - 1, cfg.discretization_points)).collect();
                            Scheme::new(bp, tau)?
                        }
                        _ => {
                            let bp = info
                                .factors
                                .iter()
                                .map(|f| {
                                    let bounds = factor_breakpoints(&prop.nodes[f.child], cfg.max_breakpoints);
                                    median_breakpoints(&bounds, cfg.discretization_points)
                                })
                                .collect();
                            Scheme::fully_discretized(bp)?
                        }
                    };
                    let z = add_chain_vars(&mut asm.model, &scheme, &prefix);
                    asm.link_values(&scheme, &z, &factors, &prefix);
                    block.delta = asm.binaries(&scheme, &z, &prefix)?;
                    let s = s_from_z_exprs(&scheme, &z);
                    if tag == VariantTag::Mip && scheme.total_segments() <= crate::envelopes::EXHAUSTIVE_MOVES {
                        asm.envelope_pieces(&scheme, &s, w, &prefix)?;
                    } else {
                        asm.envelope_hull(&scheme, &z, w, &prefix)?;
                    }
                    block.s = s;
                    block.z = z;
                    block.scheme = Some(scheme);
                }
                VariantTag::Cr | VariantTag::Crmip | VariantTag::CrmipPlus => {
                    add_estimator_rows(&mut asm.model, &format!("{prefix}ineq"), &wv, &info.rows);
                    let s: Vec<Vec<LinExpr>> = info.factors.iter().map(|f| f.s.clone()).collect();
                    asm.links(&info.factors, &s, &prefix);
                    let bp: Vec<Vec<f64>> = info.factors.iter().map(|f| f.breakpoints.clone()).collect();
                    if tag == VariantTag::Cr {
                        let scheme = Scheme::undiscretized(bp)?;
                        match cfg.envelope {
                            EnvelopeMode::Separation => {
                                asm.q_rows(&scheme, &s, &prefix);
                                block.separated = true;
                            }
                            EnvelopeMode::Hull => {
                                let z = asm.chain_z(&scheme, &s, &prefix);
                                asm.binaries_none(&scheme, &z, &prefix);
                                asm.envelope_hull(&scheme, &z, w, &prefix)?;
                                block.z = z;
                            }
                        }
                        block.s = s;
                        block.scheme = Some(scheme);
                    } else {
                        let tau = bp.iter().map(|b| binary_indices(b.len() - 1, cfg.discretization_points)).collect();
                        let scheme = Scheme::new(bp, tau)?;
                        let z = asm.chain_z(&scheme, &s, &prefix);
                        block.delta = asm.binaries(&scheme, &z, &prefix)?;
                        asm.envelope_hull(&scheme, &z, w, &prefix)?;
                        if tag == VariantTag::CrmipPlus {
                            block.ledgers = lifted_block(&mut asm, prop, info, &scheme, &block.delta, w, &prefix)?;
                        }
                        block.s = s;
                        block.z = z;
                        block.scheme = Some(scheme);
                    }
                }
            }
            products.push(block);
        }
    }
    let terms: Vec<LinExpr> = propagations.iter().map(|p| p.nodes[p.root].value.clone()).collect();
    let combine = |xs: &[(usize, f64)], ys: &[(usize, f64)]| {
        let mut e = LinExpr::default();
        for &(i, c) in xs {
            e = e.plus(c, &LinExpr::var(x[i]));
        }
        for &(k, c) in ys {
            e = e.plus(c, &terms[k]);
        }
        e.normalized()
    };
    for (r, row) in problem.rows.iter().enumerate() {
        let e = combine(&row.x, &row.y).plus_constant(-row.rhs);
        add_expr_row(&mut asm.model, format!("row_{r}"), &e, row.cmp);
    }
    let obj = combine(&problem.objective_x, &problem.objective_y);
    asm.model.set_objective(ObjSense::Minimize, obj.terms.iter().copied());
    asm.model.objective_offset = obj.constant;
    Ok(BuiltModel { variant: variant.clone(), model: asm.model, x, propagations, products, terms })
}

impl Assembler<'_> {
    /// Chain rows without binaries.
    fn binaries_none(&mut self, scheme: &Scheme, z: &[Vec<VarId>], prefix: &str) {
        let none: Vec<Vec<VarId>> = vec![Vec::new(); scheme.dims()];
        add_incremental_rows(&mut self.model, scheme, z, &none, prefix);
    }
}

/// Second chain `z'` tied to the shared binaries with `s' = G(z', delta)`,
/// links `u <= s'` and the vertex hull of `f_1 f_2` over the chains
/// `(z'_1.., delta_1, ..)`. Returns the ledgers.
fn lifted_block(
    asm: &mut Assembler<'_>,
    prop: &Propagation,
    info: &crate::estimators::ProductInfo,
    scheme: &Scheme,
    delta: &[Vec<VarId>],
    w: VarId,
    prefix: &str,
) -> Result<Vec<Ledger>, RelaxationError> {
    let gprefix = format!("{prefix}g");
    let zg = add_chain_vars(&mut asm.model, scheme, &gprefix);
    add_incremental_rows(&mut asm.model, scheme, &zg, delta, &gprefix);
    let mut ledgers = Vec::new();
    let mut chains: Vec<Vec<VarId>> = Vec::new();
    let mut g_exprs: Vec<Vec<LinExpr>> = Vec::new();
    for (i, fc) in info.factors.iter().enumerate() {
        let ledger = match asm.config.ledger {
            LedgerKind::Trivial => {
                let single = Scheme::new(vec![scheme.breakpoints(i).to_vec()], vec![scheme.tau(i).to_vec()])?;
                LocalBoundLedger::trivial(&single)
            }
            LedgerKind::Cells => cell_ledger(prop, fc, scheme, i, &asm.model)?,
        };
        let single = Scheme::new(vec![scheme.breakpoints(i).to_vec()], vec![scheme.tau(i).to_vec()])?;
        let g: Vec<LinExpr> = (0..=scheme.n(i))
            .map(|j| {
                let a = ledger.g_affine(&single, 0, j);
                let mut e = LinExpr::constant(a.constant);
                for (jp, c) in a.z {
                    e = e.plus(c, &LinExpr::var(zg[i][jp - 1]));
                }
                for (k, c) in a.delta {
                    e = e.plus(c, &LinExpr::var(delta[i][k - 1]));
                }
                e.normalized()
            })
            .collect();
        let top = g[scheme.n(i)].clone().plus(-1.0, &fc.value);
        add_expr_row(&mut asm.model, format!("{gprefix}f_{i}"), &top, Cmp::Eq);
        for (k, (j, u)) in fc.links.iter().enumerate() {
            let diff = g[*j].clone().plus(-1.0, u);
            add_expr_row(&mut asm.model, format!("{gprefix}link_{i}_{k}"), &diff, Cmp::Ge);
        }
        let tau = scheme.tau(i);
        let mut chain = Vec::new();
        for j in 1..=scheme.n(i) {
            chain.push(zg[i][j - 1]);
            if let Some(t) = tau[1..tau.len() - 1].iter().position(|&tj| tj == j) {
                chain.push(delta[i][t]);
            }
        }
        chains.push(chain);
        g_exprs.push(g);
        ledgers.push(ledger);
    }
    let lifted = Scheme::undiscretized(chains.iter().map(|c| (0..=c.len()).map(|k| k as f64).collect()).collect())?;
    let top_value = |i: usize, count: usize| -> f64 {
        let mut values = vec![0.0; asm.model.num_vars()];
        for &v in &chains[i][..count] {
            values[v.0] = 1.0;
        }
        g_exprs[i][scheme.n(i)].evaluate(&values)
    };
    let tops: Vec<Vec<f64>> = (0..2).map(|i| (0..=chains[i].len()).map(|c| top_value(i, c)).collect()).collect();
    let phi = |p: &[usize]| tops[0][p[0]] * tops[1][p[1]];
    add_vertex_hull(&mut asm.model, &lifted, HullLink::Z(&chains), &[(w, &phi)], &format!("{gprefix}h"))?;
    Ok(ledgers)
}

/// A standalone discretized relaxation of `f_1 f_2` over a given scheme.
#[derive(Clone, Debug)]
pub struct BilinearBlock {
    pub model: ModelIR,
    pub f: [VarId; 2],
    pub w: VarId,
    pub z: Vec<Vec<VarId>>,
    pub delta: Vec<Vec<VarId>>,
}

/// The MIP rows (staircase pieces in `z`) or the GRID weights for `f_1 f_2`
/// over `scheme`, with the binaries of `formulation`.
pub fn bilinear_block(scheme: &Scheme, tag: VariantTag, formulation: BinaryFormulation) -> Result<BilinearBlock, RelaxationError> {
    let config = VariantConfig { formulation, ..Default::default() };
    let mut asm = Assembler { model: ModelIR::new(ObjSense::Maximize), config: &config };
    let f = [0, 1].map(|i| {
        let a = scheme.breakpoints(i);
        asm.model.add_var(format!("f_{i}"), a[0], a[a.len() - 1])
    });
    let corners = [scheme.a(0, 0), scheme.a(0, scheme.n(0))]
        .iter()
        .flat_map(|&p| [scheme.a(1, 0), scheme.a(1, scheme.n(1))].map(|q| p * q))
        .collect::<Vec<_>>();
    let (lo, hi) = corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let w = asm.model.add_var("w", lo, hi);
    let z = add_chain_vars(&mut asm.model, scheme, "");
    asm.link_values(scheme, &z, &[LinExpr::var(f[0]), LinExpr::var(f[1])], "");
    let delta = asm.binaries(scheme, &z, "")?;
    match tag {
        VariantTag::Grid => asm.envelope_hull(scheme, &z, w, "")?,
        _ => asm.envelope_pieces(scheme, &s_from_z_exprs(scheme, &z), w, "")?,
    }
    Ok(BilinearBlock { model: asm.model, f, w, z, delta })
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub node_limit: usize,
    pub backend: Backend,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { node_limit: 20_000, backend: Backend::Auto }
    }
}

#[derive(Clone, Debug)]
pub struct RelaxationOutcome {
    pub status: SolveStatus,
    /// Proven lower bound of the minimization.
    pub bound: Option<f64>,
    pub result: SolveResult,
    pub separation_rounds: usize,
    pub cuts: usize,
    pub seconds: f64,
}

/// One line of the JSON-lines relaxation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub instance: String,
    pub variant: VariantTag,
    pub bound: Option<f64>,
    pub status: SolveStatus,
    pub seconds: f64,
}

impl BuiltModel {
    /// Violated staircase pieces at `values` for every separated block.
    pub fn separation_cuts(&self, values: &[f64]) -> Vec<Constraint> {
        let mut cuts = Vec::new();
        for (b, block) in self.products.iter().enumerate() {
            let Some(scheme) = block.scheme.as_ref().filter(|_| block.separated) else {
                continue;
            };
            let s: Vec<Vec<f64>> = block.s.iter().map(|si| si.iter().map(|e| e.evaluate(values)).collect()).collect();
            let w = values[block.w.0];
            let phi = product_value(scheme);
            for side in [Side::Convex, Side::Concave] {
                let Ok(piece) = separate(&s, scheme, &phi, side) else {
                    continue;
                };
                let v = piece.evaluate(&s);
                let scale = 1.0_f64.max(v.abs());
                let (violated, cmp) = match side {
                    Side::Convex => (v > w + CUT_TOL * scale, Cmp::Ge),
                    Side::Concave => (v < w - CUT_TOL * scale, Cmp::Le),
                };
                if violated {
                    let e = LinExpr::var(block.w).plus(-1.0, &piece_expr(&piece, &block.s));
                    cuts.push(Constraint {
                        name: format!("sep_{b}_{}", cuts.len()),
                        coeffs: e.terms,
                        cmp,
                        rhs: -e.constant,
                    });
                }
            }
        }
        cuts
    }

    pub fn solve(&self, opts: &SolveOptions) -> RelaxationOutcome {
        solve_model(self, &self.model, opts)
    }

    /// A product block rooted at term `k`.
    pub fn root_block(&self, k: usize) -> Result<&ProductBlock, RelaxationError> {
        let prop = &self.propagations[k];
        match prop.nodes[prop.root].role {
            NodeRole::Product(p) => Ok(self.products.iter().find(|b| b.term == k && b.product == p).unwrap()),
            _ => Err(RelaxationError::NotAProduct(k)),
        }
    }
}

fn solve_model(built: &BuiltModel, model: &ModelIR, opts: &SolveOptions) -> RelaxationOutcome {
    let start = Instant::now();
    let has_binaries = model.binaries().next().is_some();
    let separated = built.products.iter().any(|b| b.separated);
    let (result, rounds, cuts) = if has_binaries {
        let r = branch_and_bound(model, &BranchOptions { node_limit: opts.node_limit, backend: opts.backend });
        (r, 0, 0)
    } else {
        let mut session = LpSession::new(model, opts.backend);
        let mut r = session.solve();
        let (mut rounds, mut cuts) = (0, 0);
        while separated && r.is_optimal() && rounds < built.variant.config.separation_rounds {
            let found = built.separation_cuts(&r.values);
            if found.is_empty() {
                break;
            }
            rounds += 1;
            cuts += found.len();
            for c in found {
                session.add_row(c);
            }
            r = session.solve();
        }
        (r, rounds, cuts)
    };
    let bound = match result.status {
        SolveStatus::Optimal | SolveStatus::NodeLimit => result.bound.or(result.objective),
        _ => None,
    };
    RelaxationOutcome {
        status: result.status,
        bound,
        result,
        separation_rounds: rounds,
        cuts,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Builds and solves in one call.
pub fn relax(problem: &FactorableProblem, variant: &RelaxationVariant, opts: &SolveOptions) -> Result<RelaxationOutcome, RelaxationError> {
    Ok(build(problem, variant)?.solve(opts))
}

/// Largest value of the term-0 product over the relaxation with `x` and the
/// two factor values fixed.
pub fn relaxation_value_at(
    problem: &FactorableProblem,
    variant: &RelaxationVariant,
    x: &[f64],
    factors: [f64; 2],
    opts: &SolveOptions,
) -> Result<f64, RelaxationError> {
    let built = build(problem, variant)?;
    let block = built.root_block(0)?;
    let mut model = built.model.clone();
    let mut fix = |v: VarId, value: f64| -> Result<(), RelaxationError> {
        let var = &mut model.variables[v.0];
        let slack = 1e-9 * value.abs().max(1.0);
        if value < var.lower - slack || value > var.upper + slack {
            return Err(RelaxationError::Infeasible);
        }
        var.lower = value;
        var.upper = value;
        Ok(())
    };
    for (i, &v) in built.x.iter().enumerate() {
        fix(v, x[i])?;
    }
    for (f, &value) in block.factors.iter().zip(&factors) {
        match f.terms.as_slice() {
            [(v, c)] if *c == 1.0 && f.constant == 0.0 => fix(*v, value)?,
            _ => {
                if (f.evaluate(&[]) - value).abs() > 1e-9 {
                    return Err(RelaxationError::Infeasible);
                }
            }
        }
    }
    model.set_objective(ObjSense::Maximize, [(block.w, 1.0)]);
    model.objective_offset = 0.0;
    let out = solve_model(&built, &model, opts);
    match out.status {
        SolveStatus::Optimal => Ok(out.result.objective.unwrap()),
        SolveStatus::Infeasible => Err(RelaxationError::Infeasible),
        st => Err(RelaxationError::Envelope(EnvelopeError::Oracle(st))),
    }
}

/// Which relaxation of the hierarchy a closed form describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hierarchy {
    /// Underestimators only.
    Composite,
    /// Cell bounds only.
    Discretized,
    /// Both.
    Combined,
}

/// Closed-form value of the term-0 product relaxation at fixed `(x, f)`:
/// the envelope over Q at the upper concave envelope of the estimator values.
/// The root factors must be estimated by functions of `x` alone.
pub fn closed_form_value(
    built: &BuiltModel,
    x: &[f64],
    factors: [f64; 2],
    which: Hierarchy,
) -> Result<f64, RelaxationError> {
    let block = built.root_block(0)?;
    let prop = &built.propagations[0];
    let info = &prop.products[block.product];
    let bp: Vec<Vec<f64>> = info.factors.iter().map(|f| f.breakpoints.clone()).collect();
    let tau = bp.iter().map(|b| binary_indices(b.len() - 1, built.variant.config.discretization_points)).collect();
    let scheme = Scheme::new(bp, tau)?;
    let mut values = vec![0.0; built.model.num_vars()];
    for (i, &v) in built.x.iter().enumerate() {
        values[v.0] = x[i];
    }
    let xset: Vec<VarId> = built.x.clone();
    let s: Vec<Vec<f64>> = info
        .factors
        .iter()
        .enumerate()
        .map(|(i, fc)| {
            let n = scheme.n(i);
            let a = scheme.breakpoints(i);
            let fbar = factors[i];
            let mut under = vec![f64::NEG_INFINITY; n + 1];
            under[0] = a[0];
            for (j, u) in &fc.links {
                debug_assert!(u.variables().all(|v| xset.contains(&v)));
                under[*j] = under[*j].max(u.evaluate(&values));
            }
            under[n] = fbar;
            let t = scheme.cell_of(i, fbar);
            let (lo_idx, hi_idx) = (scheme.tau(i)[t - 1], scheme.tau(i)[t]);
            let mut cell = vec![f64::NEG_INFINITY; n + 1];
            for (j, c) in cell.iter_mut().enumerate() {
                if j <= lo_idx {
                    *c = a[j];
                } else if j >= hi_idx {
                    *c = fbar;
                }
            }
            let u: Vec<f64> = match which {
                Hierarchy::Composite => under,
                Hierarchy::Discretized => {
                    cell[0] = a[0];
                    cell[n] = fbar;
                    cell
                }
                Hierarchy::Combined => under.iter().zip(&cell).map(|(p, q)| p.max(*q)).collect(),
            };
            concave_majorant(a, &u)
        })
        .collect();
    Ok(envelope_value(&s, &scheme, product_value(&scheme), Side::Concave)?)
}

/// Upper concave envelope at every `a_j` of the finite points `(a_j, u_j)`.
fn concave_majorant(a: &[f64], u: &[f64]) -> Vec<f64> {
    let keep: Vec<usize> = (0..a.len()).filter(|&j| u[j].is_finite()).collect();
    let ka: Vec<f64> = keep.iter().map(|&j| a[j]).collect();
    let ku: Vec<f64> = keep.iter().map(|&j| u[j]).collect();
    let hull = discrete_concave_envelope(&ka, &ku);
    (0..a.len())
        .map(|j| {
            let r = ka.partition_point(|&v| v < a[j]).min(ka.len() - 1);
            if ka[r] == a[j] || r == 0 {
                hull[r]
            } else {
                let l = r - 1;
                hull[l] + (hull[r] - hull[l]) * (a[j] - ka[l]) / (ka[r] - ka[l])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::enumerate_vertices;

    fn squares(vars: &[usize], lo: f64, hi: f64) -> FactorableProblem {
        let tree = ExprNode::left_deep_product(vars.iter().map(|&i| ExprNode::power(ExprNode::var(i), 2))).unwrap();
        let dim = vars.iter().max().unwrap() + 1;
        FactorableProblem::minimize(VariableBox::new(vec![lo; dim], vec![hi; dim]).unwrap(), tree)
    }

    fn bound(problem: &FactorableProblem, tag: VariantTag) -> f64 {
        relax(problem, &RelaxationVariant::new(tag), &SolveOptions::default()).unwrap().bound.unwrap()
    }

    #[test]
    fn binary_index_choice() {
        assert_eq!(binary_indices(4, 1), vec![0, 2, 4]);
        assert_eq!(binary_indices(3, 1), vec![0, 1, 3]);
        assert_eq!(binary_indices(1, 1), vec![0, 1]);
        assert_eq!(binary_indices(6, 0), vec![0, 6]);
        assert_eq!(binary_indices(6, 2), vec![0, 2, 4, 6]);
        assert_eq!(median_breakpoints(&[0.0, 7.0, 12.0, 15.0, 16.0], 1), vec![0.0, 12.0, 16.0]);
        assert_eq!(median_breakpoints(&[0.0, 4.0], 1), vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn mccormick_of_squares_is_exact_at_the_corner() {
        let p = squares(&[0, 1], 1.0, 2.0);
        assert!((bound(&p, VariantTag::Mc) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn bilinear_on_unit_box() {
        let tree = ExprNode::product(ExprNode::var(0), ExprNode::var(1));
        let p = FactorableProblem::new(
            VariableBox::new(vec![0.0; 2], vec![1.0; 2]).unwrap(),
            vec![tree],
            Vec::new(),
            vec![(0, -1.0)],
            Vec::new(),
        );
        assert!((bound(&p, VariantTag::Mc) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn three_squares_chain() {
        let p = squares(&[0, 1, 2], 1.0, 2.0);
        let mc = bound(&p, VariantTag::Mc);
        let cr = bound(&p, VariantTag::Cr);
        let crmip = bound(&p, VariantTag::Crmip);
        assert!(mc <= cr + 1e-7 && cr <= crmip + 1e-7 && crmip <= 1.0 + 1e-7, "{mc} {cr} {crmip}");
    }

    #[test]
    fn every_variant_builds_and_is_valid() {
        let p = squares(&[0, 1], 0.0, 3.0);
        for tag in VariantTag::ALL {
            let b = bound(&p, tag);
            assert!(b <= 1e-7, "{tag}: {b}");
        }
    }

    #[test]
    fn grid_has_square_weights() {
        let tree = ExprNode::product(ExprNode::var(0), ExprNode::var(1));
        let p = FactorableProblem::minimize(VariableBox::new(vec![0.0; 2], vec![4.0; 2]).unwrap(), tree);
        let built = build(&p, &RelaxationVariant::new(VariantTag::Grid)).unwrap();
        let weights = built.model.variables.iter().filter(|v| v.name.contains("_w_")).count();
        assert_eq!(weights, 9);
        assert_eq!(built.model.binaries().count(), 2);
    }

    #[test]
    fn mip_relaxation_is_ideal_on_the_bilinear_grid() {
        let tree = ExprNode::product(ExprNode::var(0), ExprNode::var(1));
        let p = FactorableProblem::minimize(VariableBox::new(vec![0.0; 2], vec![4.0; 2]).unwrap(), tree);
        let built = build(&p, &RelaxationVariant::new(VariantTag::Mip)).unwrap();
        assert_eq!(built.products[0].scheme.as_ref().unwrap().breakpoints(0), &[0.0, 2.0, 4.0]);
        let verts = enumerate_vertices(&built.model.relaxed()).unwrap();
        assert!(!verts.is_empty());
        for v in &verts {
            for d in built.model.binaries() {
                assert!(v[d.0].abs() < 1e-7 || (v[d.0] - 1.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn separation_tightens_cr() {
        let p = squares(&[0, 1], 1.0, 2.0);
        let built = build(&p, &RelaxationVariant::new(VariantTag::Cr)).unwrap();
        let out = built.solve(&SolveOptions::default());
        let mut no_sep = RelaxationVariant::new(VariantTag::Cr);
        no_sep.config.separation_rounds = 0;
        let loose = relax(&p, &no_sep, &SolveOptions::default()).unwrap();
        assert!(out.bound.unwrap() >= loose.bound.unwrap() - 1e-9);
    }

    #[test]
    fn crmip_plus_with_trivial_ledger_matches_crmip() {
        let p = squares(&[0, 1], 0.0, 3.0);
        let crmip = bound(&p, VariantTag::Crmip);
        let mut v = RelaxationVariant::new(VariantTag::CrmipPlus);
        v.config.ledger = LedgerKind::Trivial;
        let plus = relax(&p, &v, &SolveOptions::default()).unwrap().bound.unwrap();
        assert!((plus - crmip).abs() < 1e-8);
    }

    #[test]
    fn closed_form_hierarchy_on_squares() {
        let p = squares(&[0, 1], 1.0, 2.0);
        let mut cfg = VariantConfig { envelope: EnvelopeMode::Hull, mip_scheme: MipScheme::Propagated, ..Default::default() };
        cfg.cut_points = 3;
        let x = [1.3, 1.7];
        let f = [1.3f64.powi(2) + 0.05, 1.7f64.powi(2) + 0.1];
        let opts = SolveOptions::default();
        let mut vals = Vec::new();
        for (tag, which) in [
            (VariantTag::Cr, Hierarchy::Composite),
            (VariantTag::Mip, Hierarchy::Discretized),
            (VariantTag::Crmip, Hierarchy::Combined),
        ] {
            let v = RelaxationVariant::with_config(tag, cfg.clone());
            let lp = relaxation_value_at(&p, &v, &x, f, &opts).unwrap();
            let built = build(&p, &RelaxationVariant::with_config(VariantTag::Crmip, cfg.clone())).unwrap();
            let closed = closed_form_value(&built, &x, f, which).unwrap();
            assert!((lp - closed).abs() < 1e-7, "{tag}: {lp} vs {closed}");
            vals.push(lp);
        }
        assert!(vals[2] <= vals[0].min(vals[1]) + 1e-7);
    }
}
