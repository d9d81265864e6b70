//! Best-bound branch and bound over binary variables.
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Backend, LpSession, ModelIR, ObjSense, SolveResult, SolveStatus, VarId, INTEGRALITY_TOL};

#[derive(Clone, Debug)]
pub struct BranchOptions {
    pub node_limit: usize,
    pub backend: Backend,
}

impl Default for BranchOptions {
    fn default() -> Self {
        BranchOptions {
            node_limit: 20_000,
            backend: Backend::Auto,
        }
    }
}

struct Node {
    /// Objective in maximization orientation.
    score: f64,
    fixes: Vec<(usize, f64)>,
    values: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.score == other.score
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Best bound first, deeper nodes first on ties.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then(self.fixes.len().cmp(&other.fixes.len()))
    }
}

/// Per-variable average objective loss per unit change, for each direction.
struct Pseudocosts {
    sum: Vec<[f64; 2]>,
    count: Vec<[u32; 2]>,
}

impl Pseudocosts {
    fn new(n: usize) -> Self {
        Pseudocosts { sum: vec![[0.0; 2]; n], count: vec![[0; 2]; n] }
    }

    fn record(&mut self, k: usize, dir: usize, loss: f64, change: f64) {
        if change > INTEGRALITY_TOL {
            self.sum[k][dir] += loss.max(0.0) / change;
            self.count[k][dir] += 1;
        }
    }

    fn estimate(&self, k: usize, dir: usize) -> f64 {
        let known: Vec<f64> = (0..self.sum.len())
            .filter(|&j| self.count[j][dir] > 0)
            .map(|j| self.sum[j][dir] / self.count[j][dir] as f64)
            .collect();
        if self.count[k][dir] > 0 {
            self.sum[k][dir] / self.count[k][dir] as f64
        } else if known.is_empty() {
            1.0
        } else {
            known.iter().sum::<f64>() / known.len() as f64
        }
    }

    /// Product score of the two estimated child losses.
    fn score(&self, k: usize, frac: f64) -> f64 {
        let down = self.estimate(k, 0) * frac;
        let up = self.estimate(k, 1) * (1.0 - frac);
        down.max(1e-6) * up.max(1e-6)
    }
}

pub fn branch_and_bound(model: &ModelIR, opts: &BranchOptions) -> SolveResult {
    let binaries: Vec<VarId> = model.binaries().collect();
    branch_from(LpSession::new(model, opts.backend), &binaries, model.sense, opts)
}

/// Branch and bound on one LP session whose binary bounds are reset to
/// each node's fixings before its children are solved.
pub fn branch_from(
    mut lp: LpSession,
    binaries: &[VarId],
    sense: ObjSense,
    opts: &BranchOptions,
) -> SolveResult {
    let orient = match sense {
        ObjSense::Maximize => 1.0,
        ObjSense::Minimize => -1.0,
    };
    let first = lp.solve();
    if first.status != SolveStatus::Optimal {
        return first;
    }
    let original: Vec<(f64, f64)> = binaries.iter().map(|&v| lp.bounds(v)).collect();
    let mut heap = BinaryHeap::new();
    let mut iterations = first.iterations;
    heap.push(Node {
        score: orient * first.objective.unwrap(),
        fixes: Vec::new(),
        values: first.values,
    });
    let mut costs = Pseudocosts::new(binaries.len());
    let mut incumbent: Option<SolveResult> = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut nodes = 0usize;
    let prune = |score: f64, best: f64| score <= best + 1e-9 * best.abs().max(1.0);
    while let Some(node) = heap.pop() {
        if prune(node.score, best_score) {
            heap.clear();
            break;
        }
        nodes += 1;
        if nodes > opts.node_limit {
            let bound = orient * node.score;
            let mut r = incumbent.unwrap_or_else(|| SolveResult::without_point(SolveStatus::NodeLimit));
            r.status = SolveStatus::NodeLimit;
            r.bound = Some(bound);
            r.nodes = nodes;
            r.iterations = iterations;
            return r;
        }
        let fractional: Vec<(usize, f64)> = binaries
            .iter()
            .enumerate()
            .map(|(k, &v)| (k, node.values[v.0] - node.values[v.0].floor()))
            .filter(|&(_, frac)| frac > INTEGRALITY_TOL && frac < 1.0 - INTEGRALITY_TOL)
            .collect();
        let Some(&(k, frac)) = fractional
            .iter()
            .max_by(|a, b| costs.score(a.0, a.1).total_cmp(&costs.score(b.0, b.1)).then(b.0.cmp(&a.0)))
        else {
            best_score = node.score;
            let mut values = node.values;
            for &v in binaries {
                values[v.0] = values[v.0].round();
            }
            let objective = orient * node.score;
            incumbent = Some(SolveResult {
                status: SolveStatus::Optimal,
                objective: Some(objective),
                bound: Some(objective),
                values,
                iterations: 0,
                nodes: 0,
            });
            continue;
        };
        let mut target = original.clone();
        for &(j, x) in &node.fixes {
            target[j] = (x, x);
        }
        for (j, &v) in binaries.iter().enumerate() {
            lp.set_bounds(v, target[j].0, target[j].1);
        }
        for (dir, value) in [(0usize, 0.0), (1, 1.0)] {
            lp.set_bounds(binaries[k], original[k].0, original[k].1);
            lp.fix(binaries[k], value);
            let res = lp.solve();
            iterations += res.iterations;
            if res.status != SolveStatus::Optimal {
                continue;
            }
            let score = orient * res.objective.unwrap();
            let change = if dir == 0 { frac } else { 1.0 - frac };
            costs.record(k, dir, node.score - score, change);
            if !prune(score, best_score) {
                let mut fixes = node.fixes.clone();
                fixes.push((k, value));
                heap.push(Node { score, fixes, values: res.values });
            }
        }
    }
    match incumbent {
        Some(mut r) => {
            r.status = SolveStatus::Optimal;
            r.bound = r.objective;
            r.nodes = nodes;
            r.iterations = iterations;
            r
        }
        None => {
            let mut r = SolveResult::without_point(SolveStatus::Infeasible);
            r.nodes = nodes;
            r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{simplex_solve, Cmp};

    #[test]
    fn knapsack_matches_enumeration() {
        let mut m = ModelIR::new(ObjSense::Maximize);
        let x = m.add_binary("x");
        let y = m.add_binary("y");
        let z = m.add_var("z", 0.0, 1.0);
        m.add_row("cap", [(x, 3.0), (y, 4.0), (z, 2.0)], Cmp::Le, 6.0);
        m.set_objective(ObjSense::Maximize, [(x, 5.0), (y, 6.0), (z, 1.5)]);
        let r = branch_and_bound(&m, &BranchOptions::default());
        let mut best = f64::NEG_INFINITY;
        for bx in [0.0, 1.0] {
            for by in [0.0, 1.0] {
                let mut fixed = m.clone();
                fixed.variables[0].lower = bx;
                fixed.variables[0].upper = bx;
                fixed.variables[1].lower = by;
                fixed.variables[1].upper = by;
                let s = simplex_solve(&fixed);
                if s.is_optimal() {
                    best = best.max(s.objective.unwrap());
                }
            }
        }
        assert!((r.objective.unwrap() - best).abs() < 1e-9);
        assert!(r.objective.unwrap() <= simplex_solve(&m).objective.unwrap() + 1e-9);
    }

    #[test]
    fn integral_root_needs_no_branching() {
        let mut m = ModelIR::new(ObjSense::Minimize);
        let x = m.add_binary("x");
        let y = m.add_var("y", 0.0, 10.0);
        m.add_row("r", [(y, 1.0), (x, -2.0)], Cmp::Ge, 1.0);
        m.set_objective(ObjSense::Minimize, [(y, 1.0), (x, 1.0)]);
        let r = branch_and_bound(&m, &BranchOptions::default());
        assert_eq!(r.nodes, 1);
        assert_eq!(r.objective, simplex_solve(&m).objective);
    }
}
