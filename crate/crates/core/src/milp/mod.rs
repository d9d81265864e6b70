//! LP/MILP models, a dense bounded simplex, branch and bound, vertex
//! enumeration and LP-file exchange with external solvers.
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod bnb;
mod external;
mod lpfile;
mod session;
mod simplex;
mod vertices;

pub use bnb::{branch_and_bound, branch_from, BranchOptions};
pub use external::{external_solve, format_solution, parse_solution, ExternalError, SolverCommand};
pub use lpfile::{read_lp, write_lp, write_lp_file, LpReadError};
pub use session::{Backend, LpSession};
pub use simplex::{simplex_solve, simplex_solve_with, SimplexOptions};
pub use vertices::{enumerate_vertices, VertexError, MAX_VERTEX_DIMENSION};

/// Feasibility tolerance promised on reported optimal points.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Distance from an integer below which a binary counts as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

/// Index of a variable inside a [`ModelIR`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(VarId, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.cmp {
            Cmp::Le => (lhs - self.rhs).max(0.0),
            Cmp::Ge => (self.rhs - lhs).max(0.0),
            Cmp::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("binary variable `{0}` must have bounds [0, 1]")]
    BinaryBounds(String),
    #[error("variable `{0}` has lower bound above upper bound")]
    EmptyDomain(String),
    #[error("row `{row}` references variable {index} of {count}")]
    DanglingIndex { row: String, index: usize, count: usize },
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
}

/// An LP/MILP in row form: `min|max c.x + offset` subject to rows and bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelIR {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub sense: ObjSense,
    pub objective: Vec<(VarId, f64)>,
    pub objective_offset: f64,
}

impl ModelIR {
    pub fn new(sense: ObjSense) -> Self {
        ModelIR {
            variables: Vec::new(),
            constraints: Vec::new(),
            sense,
            objective: Vec::new(),
            objective_offset: 0.0,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind: VarKind::Continuous,
            lower,
            upper,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
        });
        VarId(self.variables.len() - 1)
    }

    /// Adds a row, merging repeated variables and dropping zero coefficients.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: impl IntoIterator<Item = (VarId, f64)>,
        cmp: Cmp,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs: merge_terms(coeffs),
            cmp,
            rhs,
        });
    }

    pub fn set_objective(&mut self, sense: ObjSense, coeffs: impl IntoIterator<Item = (VarId, f64)>) {
        self.sense = sense;
        self.objective = merge_terms(coeffs);
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
    }

    /// Copy with every binary treated as a continuous variable in [0, 1].
    pub fn relaxed(&self) -> ModelIR {
        let mut m = self.clone();
        for v in &mut m.variables {
            v.kind = VarKind::Continuous;
        }
        m
    }

    /// Largest row or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(x));
        let bounds = self
            .variables
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lower - xi).max(xi - v.upper).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Largest violation with each row divided by `max(1, |rhs|, max |coeff x|)`.
    pub fn max_scaled_violation(&self, x: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| {
            let scale = c.coeffs.iter().map(|(v, a)| (a * x[v.0]).abs()).fold(c.rhs.abs().max(1.0), f64::max);
            c.violation(x) / scale
        });
        let bounds = self
            .variables
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lower - xi).max(xi - v.upper).max(0.0) / xi.abs().max(1.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for v in &self.variables {
            if v.lower.is_nan() || v.upper.is_nan() {
                return Err(ModelError::NonFinite(v.name.clone()));
            }
            if v.lower > v.upper {
                return Err(ModelError::EmptyDomain(v.name.clone()));
            }
            if v.kind == VarKind::Binary && (v.lower != 0.0 || v.upper != 1.0) {
                return Err(ModelError::BinaryBounds(v.name.clone()));
            }
        }
        let count = self.variables.len();
        let check = |name: &str, coeffs: &[(VarId, f64)]| -> Result<(), ModelError> {
            for (v, c) in coeffs {
                if v.0 >= count {
                    return Err(ModelError::DanglingIndex {
                        row: name.to_string(),
                        index: v.0,
                        count,
                    });
                }
                if !c.is_finite() {
                    return Err(ModelError::NonFinite(name.to_string()));
                }
            }
            Ok(())
        };
        check("objective", &self.objective)?;
        if !self.objective_offset.is_finite() {
            return Err(ModelError::NonFinite("objective".into()));
        }
        for c in &self.constraints {
            check(&c.name, &c.coeffs)?;
            if !c.rhs.is_finite() {
                return Err(ModelError::NonFinite(c.name.clone()));
            }
        }
        Ok(())
    }
}

pub(crate) fn merge_terms(coeffs: impl IntoIterator<Item = (VarId, f64)>) -> Vec<(VarId, f64)> {
    let mut terms: Vec<(VarId, f64)> = coeffs.into_iter().collect();
    terms.sort_by_key(|t| t.0);
    let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
    for (v, c) in terms {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += c,
            _ => out.push((v, c)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NodeLimit,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::NodeLimit => "node-limit",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective of the returned point (the incumbent for MILPs).
    pub objective: Option<f64>,
    pub values: Vec<f64>,
    /// Proven bound on the optimum; equals `objective` when optimal.
    pub bound: Option<f64>,
    pub iterations: usize,
    pub nodes: usize,
}

impl SolveResult {
    pub fn without_point(status: SolveStatus) -> Self {
        SolveResult {
            status,
            objective: None,
            values: Vec::new(),
            bound: None,
            iterations: 0,
            nodes: 0,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}
