//! Re-solvable LP state shared by branch and bound and cut loops.
use highs::{Col, HighsModelStatus, Model, RowProblem, Sense};

use super::{simplex_solve, Cmp, Constraint, ModelIR, ObjSense, SolveResult, SolveStatus, VarId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Backend {
    /// The in-crate dense simplex; re-solves from scratch after each edit.
    Dense,
    /// HiGHS dual simplex, warm-started after bound changes and new rows.
    Sparse,
    /// Dense for small models, sparse otherwise.
    #[default]
    Auto,
}

const AUTO_DENSE_ROWS: usize = 120;

struct Sparse {
    model: Model,
    cols: Vec<Col>,
}

enum Engine {
    Dense,
    /// Built lazily on the first solve and after a clone.
    Sparse(Option<Sparse>),
}

/// An LP relaxation that can be tightened by changing bounds or adding rows.
pub struct LpSession {
    model: ModelIR,
    engine: Engine,
    cached: Option<SolveResult>,
}

impl Clone for LpSession {
    fn clone(&self) -> Self {
        LpSession {
            model: self.model.clone(),
            engine: match self.engine {
                Engine::Dense => Engine::Dense,
                Engine::Sparse(_) => Engine::Sparse(None),
            },
            cached: self.cached.clone(),
        }
    }
}

impl LpSession {
    pub fn new(model: &ModelIR, backend: Backend) -> Self {
        let model = model.relaxed();
        let dense = match backend {
            Backend::Dense => true,
            Backend::Sparse => false,
            Backend::Auto => model.constraints.len() <= AUTO_DENSE_ROWS,
        };
        LpSession {
            model,
            engine: if dense { Engine::Dense } else { Engine::Sparse(None) },
            cached: None,
        }
    }

    pub fn model(&self) -> &ModelIR {
        &self.model
    }

    pub fn bounds(&self, var: VarId) -> (f64, f64) {
        let v = &self.model.variables[var.0];
        (v.lower, v.upper)
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) {
        let v = &mut self.model.variables[var.0];
        if v.lower == lower && v.upper == upper {
            return;
        }
        v.lower = lower;
        v.upper = upper;
        self.cached = None;
        if lower > upper {
            self.cached = Some(SolveResult::without_point(SolveStatus::Infeasible));
            return;
        }
        if let Engine::Sparse(Some(sp)) = &mut self.engine {
            sp.model.change_column_bounds(sp.cols[var.0], lower..=upper);
        }
    }

    /// Fixes a variable to `value`; outside its current bounds the session
    /// becomes infeasible.
    pub fn fix(&mut self, var: VarId, value: f64) {
        let (lo, hi) = self.bounds(var);
        if value < lo || value > hi {
            self.set_bounds(var, 1.0, 0.0);
        } else {
            self.set_bounds(var, value, value);
        }
    }

    pub fn add_row(&mut self, row: Constraint) {
        self.cached = None;
        if let Engine::Sparse(Some(sp)) = &mut self.engine {
            let factors: Vec<(Col, f64)> = row.coeffs.iter().map(|(v, c)| (sp.cols[v.0], *c)).collect();
            match row.cmp {
                Cmp::Le => sp.model.add_row(..=row.rhs, factors),
                Cmp::Ge => sp.model.add_row(row.rhs.., factors),
                Cmp::Eq => sp.model.add_row(row.rhs..=row.rhs, factors),
            };
        }
        self.model.constraints.push(row);
    }

    pub fn solve(&mut self) -> SolveResult {
        if self.model.variables.iter().any(|v| v.lower > v.upper) {
            self.cached = Some(SolveResult::without_point(SolveStatus::Infeasible));
        }
        if let Some(r) = &self.cached {
            return r.clone();
        }
        let result = match &mut self.engine {
            Engine::Dense => simplex_solve(&self.model),
            Engine::Sparse(slot) => {
                let warm = slot.take();
                let was_warm = warm.is_some();
                let (mut r, mut sp) = solve_sparse(warm.unwrap_or_else(|| build_sparse(&self.model)), &self.model);
                if r.is_none() && was_warm {
                    (r, sp) = solve_sparse(build_sparse(&self.model), &self.model);
                }
                *slot = Some(sp);
                r.unwrap_or_else(|| simplex_solve(&self.model))
            }
        };
        self.cached = Some(result.clone());
        result
    }
}

fn build_sparse(model: &ModelIR) -> Sparse {
    let mut obj = vec![0.0; model.num_vars()];
    for (v, c) in &model.objective {
        obj[v.0] += c;
    }
    let mut p = RowProblem::default();
    let cols: Vec<Col> = model
        .variables
        .iter()
        .zip(&obj)
        .map(|(v, &c)| p.add_column(c, v.lower..=v.upper))
        .collect();
    for row in &model.constraints {
        let factors: Vec<(Col, f64)> = row.coeffs.iter().map(|(v, c)| (cols[v.0], *c)).collect();
        match row.cmp {
            Cmp::Le => p.add_row(..=row.rhs, factors),
            Cmp::Ge => p.add_row(row.rhs.., factors),
            Cmp::Eq => p.add_row(row.rhs..=row.rhs, factors),
        }
    }
    let sense = match model.sense {
        ObjSense::Minimize => Sense::Minimise,
        ObjSense::Maximize => Sense::Maximise,
    };
    let mut m = p.optimise(sense);
    m.make_quiet();
    m.set_option("presolve", "off");
    m.set_option("solver", "simplex");
    m.set_option("threads", 1);
    Sparse { model: m, cols }
}

/// `None` when HiGHS neither proves a status nor returns a point within
/// tolerance.
fn solve_sparse(sp: Sparse, model: &ModelIR) -> (Option<SolveResult>, Sparse) {
    let Sparse { model: m, cols } = sp;
    let solved = m.solve();
    let status = solved.status();
    let result = match status {
        HighsModelStatus::Optimal => {
            let sol = solved.get_solution();
            let values: Vec<f64> = sol
                .columns()
                .iter()
                .zip(&model.variables)
                .map(|(&x, v)| x.clamp(v.lower, v.upper))
                .collect();
            if model.max_scaled_violation(&values) > super::FEASIBILITY_TOL {
                None
            } else {
                let objective = model.objective_value(&values);
                Some(SolveResult {
                    status: SolveStatus::Optimal,
                    objective: Some(objective),
                    bound: Some(objective),
                    values,
                    iterations: solved.simplex_iteration_count().max(0) as usize,
                    nodes: 0,
                })
            }
        }
        HighsModelStatus::Infeasible => Some(SolveResult::without_point(SolveStatus::Infeasible)),
        HighsModelStatus::Unbounded => Some(SolveResult::without_point(SolveStatus::Unbounded)),
        _ => None,
    };
    (result, Sparse { model: solved.into(), cols })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelIR {
        let mut m = ModelIR::new(ObjSense::Maximize);
        let x = m.add_var("x", 0.0, 4.0);
        let y = m.add_var("y", 0.0, 4.0);
        m.add_row("a", [(x, 2.0), (y, 1.0)], Cmp::Le, 6.0);
        m.add_row("b", [(x, 1.0), (y, 3.0)], Cmp::Le, 9.0);
        m.set_objective(ObjSense::Maximize, [(x, 1.0), (y, 1.0)]);
        m
    }

    #[test]
    fn backends_agree_through_edits() {
        for backend in [Backend::Dense, Backend::Sparse] {
            let mut s = LpSession::new(&toy(), backend);
            assert!((s.solve().objective.unwrap() - 4.2).abs() < 1e-9);
            s.add_row(Constraint {
                name: "c".into(),
                coeffs: vec![(VarId(0), 1.0)],
                cmp: Cmp::Le,
                rhs: 1.0,
            });
            assert!((s.solve().objective.unwrap() - 3.6666666666666665).abs() < 1e-9);
            let mut child = s.clone();
            child.fix(VarId(1), 4.0);
            assert_eq!(child.solve().status, SolveStatus::Infeasible);
            s.fix(VarId(1), 2.0);
            assert!((s.solve().objective.unwrap() - 3.0).abs() < 1e-9);
        }
    }
}
