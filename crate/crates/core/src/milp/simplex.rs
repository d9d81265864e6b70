//! Dense bounded revised simplex with a two-phase start.
use super::{Cmp, ModelIR, ObjSense, SolveResult, SolveStatus, FEASIBILITY_TOL};

#[derive(Clone, Debug)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Dantzig pricing is replaced by Bland's rule after this many iterations.
    pub bland_after: usize,
    pub tolerance: f64,
    pub reinvert_every: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iterations: 200_000,
            bland_after: 5_000,
            tolerance: 1e-9,
            reinvert_every: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum At {
    Basic,
    Lower,
    Upper,
    Zero,
}

struct Tableau {
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    at: Vec<At>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn build(model: &ModelIR) -> Tableau {
        let n = model.num_vars();
        let m = model.constraints.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + 2 * m];
        let mut rhs = vec![0.0; m];
        let mut lo = Vec::with_capacity(n + 2 * m);
        let mut hi = Vec::with_capacity(n + 2 * m);
        for v in &model.variables {
            lo.push(v.lower);
            hi.push(v.upper);
        }
        for (i, row) in model.constraints.iter().enumerate() {
            let scale = row.coeffs.iter().fold(0.0f64, |a, (_, c)| a.max(c.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            for (v, c) in &row.coeffs {
                cols[v.0].push((i, c / scale));
            }
            rhs[i] = row.rhs / scale;
            cols[n + i].push((i, 1.0));
            let (l, h) = match row.cmp {
                Cmp::Le => (0.0, f64::INFINITY),
                Cmp::Ge => (f64::NEG_INFINITY, 0.0),
                Cmp::Eq => (0.0, 0.0),
            };
            lo.push(l);
            hi.push(h);
        }
        lo.extend(std::iter::repeat(0.0).take(m));
        hi.extend(std::iter::repeat(0.0).take(m));
        let total = n + 2 * m;
        let mut x = vec![0.0; total];
        let mut at = vec![At::Zero; total];
        for j in 0..n {
            if lo[j].is_finite() {
                x[j] = lo[j];
                at[j] = At::Lower;
            } else if hi[j].is_finite() {
                x[j] = hi[j];
                at[j] = At::Upper;
            }
        }
        let mut residual = rhs.clone();
        for j in 0..n {
            if x[j] != 0.0 {
                for &(r, a) in &cols[j] {
                    residual[r] -= a * x[j];
                }
            }
        }
        let mut basis = vec![0; m];
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            let s = n + i;
            let r = residual[i];
            if r >= lo[s] && r <= hi[s] {
                basis[i] = s;
                x[s] = r;
                at[s] = At::Basic;
                binv[i * m + i] = 1.0;
                at[n + m + i] = At::Lower;
            } else {
                let clip = r.clamp(lo[s], hi[s]);
                x[s] = clip;
                at[s] = if clip == lo[s] { At::Lower } else { At::Upper };
                let a = n + m + i;
                let sign = if r - clip >= 0.0 { 1.0 } else { -1.0 };
                cols[a].push((i, sign));
                hi[a] = f64::INFINITY;
                x[a] = (r - clip).abs();
                at[a] = At::Basic;
                basis[i] = a;
                binv[i * m + i] = sign;
            }
        }
        Tableau {
            m,
            cols,
            rhs,
            lo,
            hi,
            x,
            at,
            basis,
            binv,
            iterations: 0,
        }
    }

    fn reinvert(&mut self) -> bool {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            for &(r, a) in &self.cols[j] {
                b[r * m + k] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&i, &k| b[i * m + c].abs().total_cmp(&b[k * m + c].abs()))
                .unwrap();
            if b[p * m + c].abs() < 1e-13 {
                return false;
            }
            if p != c {
                for k in 0..m {
                    b.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let d = b[c * m + c];
            for k in 0..m {
                b[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for i in 0..m {
                if i != c {
                    let f = b[i * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            b[i * m + k] -= f * b[c * m + k];
                            inv[i * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        self.recompute_basics();
        true
    }

    fn recompute_basics(&mut self) {
        let m = self.m;
        let mut r = self.rhs.clone();
        for (j, col) in self.cols.iter().enumerate() {
            if self.at[j] != At::Basic && self.x[j] != 0.0 {
                for &(row, a) in col {
                    r[row] -= a * self.x[j];
                }
            }
        }
        for i in 0..m {
            let v: f64 = (0..m).map(|k| self.binv[i * m + k] * r[k]).sum();
            self.x[self.basis[i]] = v;
        }
    }

    fn run(&mut self, cost: &[f64], opts: &SimplexOptions) -> Outcome {
        let m = self.m;
        let tol = opts.tolerance;
        let mut since_reinvert = 0;
        let mut phase_iterations = 0usize;
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        loop {
            if self.iterations >= opts.max_iterations {
                return Outcome::IterationLimit;
            }
            if since_reinvert >= opts.reinvert_every {
                self.reinvert();
                since_reinvert = 0;
            }
            let bland = phase_iterations >= opts.bland_after;
            for k in 0..m {
                y[k] = 0.0;
            }
            for (i, &bj) in self.basis.iter().enumerate() {
                let cb = cost[bj];
                if cb != 0.0 {
                    let row = &self.binv[i * m..(i + 1) * m];
                    for k in 0..m {
                        y[k] += cb * row[k];
                    }
                }
            }
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.cols.len() {
                let state = self.at[j];
                if state == At::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let d = cost[j] - self.cols[j].iter().map(|&(r, a)| y[r] * a).sum::<f64>();
                let eligible = match state {
                    At::Lower => d < -tol,
                    At::Upper => d > tol,
                    At::Zero => d.abs() > tol,
                    At::Basic => false,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.map_or(true, |(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((q, dq)) = entering else {
                return Outcome::Optimal;
            };
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };
            for i in 0..m {
                alpha[i] = 0.0;
            }
            for &(r, a) in &self.cols[q] {
                for i in 0..m {
                    alpha[i] += self.binv[i * m + r] * a;
                }
            }
            let own = self.hi[q] - self.lo[q];
            let ratio = |i: usize, slack: f64| -> Option<f64> {
                let rate = -dir * alpha[i];
                if rate.abs() <= tol {
                    return None;
                }
                let b = self.basis[i];
                if rate < 0.0 && self.lo[b].is_finite() {
                    Some(((self.x[b] - self.lo[b] + slack) / -rate).max(0.0))
                } else if rate > 0.0 && self.hi[b].is_finite() {
                    Some(((self.hi[b] - self.x[b] + slack) / rate).max(0.0))
                } else {
                    None
                }
            };
            let relaxed_min = (0..m)
                .filter_map(|i| ratio(i, tol))
                .fold(f64::INFINITY, f64::min);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if let Some(t) = ratio(i, 0.0) {
                    if t <= relaxed_min {
                        let better = match leave {
                            None => true,
                            Some((k, _)) if bland => self.basis[i] < self.basis[k],
                            Some((k, _)) => alpha[i].abs() > alpha[k].abs(),
                        };
                        if better {
                            leave = Some((i, t));
                        }
                    }
                }
            }
            let step = match (leave, own.is_finite()) {
                (Some((i, t)), true) if t < own => Some((Some(i), t)),
                (_, true) => Some((None, own)),
                (Some((i, t)), false) => Some((Some(i), t)),
                (None, false) => None,
            };
            let Some((row, t)) = step else {
                return Outcome::Unbounded;
            };
            self.iterations += 1;
            phase_iterations += 1;
            since_reinvert += 1;
            self.x[q] += dir * t;
            for i in 0..m {
                if alpha[i] != 0.0 {
                    self.x[self.basis[i]] -= dir * t * alpha[i];
                }
            }
            match row {
                None => {
                    if dir > 0.0 {
                        self.at[q] = At::Upper;
                        self.x[q] = self.hi[q];
                    } else {
                        self.at[q] = At::Lower;
                        self.x[q] = self.lo[q];
                    }
                }
                Some(r) => {
                    let out = self.basis[r];
                    let rate = -dir * alpha[r];
                    if rate < 0.0 {
                        self.at[out] = At::Lower;
                        self.x[out] = self.lo[out];
                    } else {
                        self.at[out] = At::Upper;
                        self.x[out] = self.hi[out];
                    }
                    self.basis[r] = q;
                    self.at[q] = At::Basic;
                    let piv = alpha[r];
                    for k in 0..m {
                        self.binv[r * m + k] /= piv;
                    }
                    for i in 0..m {
                        if i != r && alpha[i] != 0.0 {
                            let f = alpha[i];
                            for k in 0..m {
                                self.binv[i * m + k] -= f * self.binv[r * m + k];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn simplex_solve(model: &ModelIR) -> SolveResult {
    simplex_solve_with(model, &SimplexOptions::default())
}

/// Solves the continuous relaxation of `model` (binaries relaxed to [0, 1]).
pub fn simplex_solve_with(model: &ModelIR, opts: &SimplexOptions) -> SolveResult {
    let n = model.num_vars();
    let m = model.constraints.len();
    if model.variables.iter().any(|v| v.lower > v.upper) {
        return SolveResult::without_point(SolveStatus::Infeasible);
    }
    let mut tab = Tableau::build(model);
    let total = n + 2 * m;
    let mut phase1 = vec![0.0; total];
    let mut needs_phase1 = false;
    for i in 0..m {
        if tab.hi[n + m + i] > 0.0 {
            phase1[n + m + i] = 1.0;
            needs_phase1 = true;
        }
    }
    if needs_phase1 {
        match tab.run(&phase1, opts) {
            Outcome::IterationLimit => return limit_result(&tab, model),
            Outcome::Unbounded => unreachable!("phase one objective is bounded below"),
            Outcome::Optimal => {}
        }
        tab.reinvert();
        let infeasibility: f64 = (0..m).map(|i| tab.x[n + m + i].max(0.0)).sum();
        let feasible = infeasibility <= FEASIBILITY_TOL * 1e-1
            || model.max_violation(&tab.x[..n]) <= FEASIBILITY_TOL * 1e-1;
        if !feasible {
            let mut r = SolveResult::without_point(SolveStatus::Infeasible);
            r.iterations = tab.iterations;
            return r;
        }
        for i in 0..m {
            tab.hi[n + m + i] = 0.0;
            if tab.at[n + m + i] != At::Basic {
                tab.at[n + m + i] = At::Lower;
                tab.x[n + m + i] = 0.0;
            }
        }
    }
    let sign = match model.sense {
        ObjSense::Minimize => 1.0,
        ObjSense::Maximize => -1.0,
    };
    let mut cost = vec![0.0; total];
    for (v, c) in &model.objective {
        cost[v.0] += sign * c;
    }
    let outcome = tab.run(&cost, opts);
    tab.reinvert();
    let status = match outcome {
        Outcome::Optimal => SolveStatus::Optimal,
        Outcome::Unbounded => SolveStatus::Unbounded,
        Outcome::IterationLimit => SolveStatus::IterationLimit,
    };
    let values: Vec<f64> = tab.x[..n]
        .iter()
        .zip(&model.variables)
        .map(|(&v, var)| v.clamp(var.lower, var.upper))
        .collect();
    let objective = model.objective_value(&values);
    SolveResult {
        status,
        objective: (status != SolveStatus::Unbounded).then_some(objective),
        bound: (status == SolveStatus::Optimal).then_some(objective),
        values,
        iterations: tab.iterations,
        nodes: 0,
    }
}

fn limit_result(tab: &Tableau, model: &ModelIR) -> SolveResult {
    let mut r = SolveResult::without_point(SolveStatus::IterationLimit);
    r.values = tab.x[..model.num_vars()].to_vec();
    r.iterations = tab.iterations;
    r
}
