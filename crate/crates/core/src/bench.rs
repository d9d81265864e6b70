//! Random polynomial instances, upper bounds, remaining-gap metrics and gap
//! CDF tables.
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprNode, VariableBox};
use crate::milp::{Cmp, SolveStatus};
use crate::relaxations::{relax, FactorableProblem, LinearRow, RelaxationError, RelaxationVariant, SolveOptions, VariantTag};

/// Environment variable that overrides the configured solver command.
pub const SOLVER_ENV: &str = "RELAXKIT_SOLVER";

/// Random streams, one per generated field.
const STREAM_EXPONENTS: u64 = 0;
const STREAM_D: u64 = 1;
const STREAM_B: u64 = 2;
const STREAM_A: u64 = 3;
const STREAM_BOX: u64 = 4;
const STREAM_POINT: u64 = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("instance sizes must be positive, got ({n}, {m}, {r})")]
    Size { n: usize, m: usize, r: usize },
    #[error(transparent)]
    Relaxation(#[from] RelaxationError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
}

/// `min c.x + d.y` s.t. `A x + B y <= b`, `x^L <= x <= x^U`, `y_j = x^alpha_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyInstance {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub seed: u64,
    pub cost_rule: CostRule,
    /// `exponents[j][i]`, the power of `x_i` in monomial `j`.
    pub exponents: Vec<Vec<u32>>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b_matrix: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// The point used to build `c` and `rhs`; feasible by construction.
    pub generating_point: Vec<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn sparse_nonnegative(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.3) {
        0.0
    } else {
        rng.gen_range(0.0..1.0)
    }
}

pub fn monomial_value(exponents: &[u32], x: &[f64]) -> f64 {
    exponents.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product()
}

pub fn monomial_gradient(exponents: &[u32], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            if exponents[i] == 0 {
                return 0.0;
            }
            let e = exponents[i] as i32;
            let mut g = e as f64 * x[i].powi(e - 1);
            for (k, (&ek, &xk)) in exponents.iter().zip(x).enumerate() {
                if k != i {
                    g *= xk.powi(ek as i32);
                }
            }
            g
        })
        .collect()
}

/// How the linear cost is derived from the generating point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CostRule {
    /// `c = -sum_j d_j grad m_j(x~)`: the objective is stationary at `x~`.
    #[default]
    Stationary,
    /// `c = +sum_j d_j grad m_j(x~)`. With `x >= 0` the objective is then
    /// nondecreasing, so `x = x^L` is optimal whenever it is feasible.
    Gradient,
}

pub fn generate_instance(n: usize, m: usize, r: usize, seed: u64) -> Result<PolyInstance, BenchError> {
    generate_instance_with(n, m, r, seed, CostRule::default())
}

pub fn generate_instance_with(n: usize, m: usize, r: usize, seed: u64, rule: CostRule) -> Result<PolyInstance, BenchError> {
    if n == 0 || m == 0 || r == 0 {
        return Err(BenchError::Size { n, m, r });
    }
    let mut rng = stream(seed, STREAM_EXPONENTS);
    let exponents: Vec<Vec<u32>> = (0..m)
        .map(|_| {
            let count = if rng.gen_bool(0.5) { 2 } else { 3 };
            let mut row = vec![0; n];
            for i in sample(&mut rng, n, count.min(n)) {
                row[i] = if rng.gen_bool(0.5) { 2 } else { 3 };
            }
            row
        })
        .collect();
    let mut rng = stream(seed, STREAM_D);
    let d: Vec<f64> = (0..m).map(|_| sparse_nonnegative(&mut rng)).collect();
    let mut rng = stream(seed, STREAM_B);
    let b_matrix: Vec<Vec<f64>> = (0..r).map(|_| (0..m).map(|_| sparse_nonnegative(&mut rng)).collect()).collect();
    let mut rng = stream(seed, STREAM_A);
    let a: Vec<Vec<f64>> = (0..r).map(|_| (0..n).map(|_| rng.gen_range(-10.0..=10.0)).collect()).collect();
    let mut rng = stream(seed, STREAM_BOX);
    let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=2) as f64).collect();
    let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(3..=4) as f64).collect();
    let mut rng = stream(seed, STREAM_POINT);
    let point: Vec<f64> = (0..n).map(|i| rng.gen_range(lower[i]..=upper[i])).collect();
    let y: Vec<f64> = exponents.iter().map(|e| monomial_value(e, &point)).collect();
    let sign = match rule {
        CostRule::Stationary => -1.0,
        CostRule::Gradient => 1.0,
    };
    let mut c = vec![0.0; n];
    for (e, &dj) in exponents.iter().zip(&d) {
        for (ci, g) in c.iter_mut().zip(monomial_gradient(e, &point)) {
            *ci += sign * g * dj;
        }
    }
    let rhs = (0..r)
        .map(|k| {
            a[k].iter().zip(&point).map(|(p, q)| p * q).sum::<f64>() + b_matrix[k].iter().zip(&y).map(|(p, q)| p * q).sum::<f64>()
        })
        .collect();
    Ok(PolyInstance {
        n,
        m,
        r,
        seed,
        cost_rule: rule,
        exponents,
        c,
        d,
        a,
        b_matrix,
        rhs,
        lower,
        upper,
        generating_point: point,
    })
}

impl PolyInstance {
    pub fn id(&self) -> String {
        let tag = match self.cost_rule {
            CostRule::Stationary => "",
            CostRule::Gradient => "_grad",
        };
        format!("n{}_m{}_r{}_s{}{tag}", self.n, self.m, self.r, self.seed)
    }

    /// Product tree of power leaves for monomial `j`.
    pub fn monomial_tree(&self, j: usize) -> ExprNode {
        let leaves = self.exponents[j]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| ExprNode::power(ExprNode::var(i), e));
        ExprNode::left_deep_product(leaves).unwrap_or_else(|| ExprNode::constant(1.0))
    }

    pub fn to_problem(&self) -> FactorableProblem {
        let dense = |v: &[f64]| v.iter().copied().enumerate().filter(|p| p.1 != 0.0).collect::<Vec<_>>();
        let rows = (0..self.r)
            .map(|k| LinearRow {
                x: dense(&self.a[k]),
                y: dense(&self.b_matrix[k]),
                cmp: Cmp::Le,
                rhs: self.rhs[k],
            })
            .collect();
        FactorableProblem::new(
            VariableBox::new(self.lower.clone(), self.upper.clone()).expect("generated box is ordered"),
            (0..self.m).map(|j| self.monomial_tree(j)).collect(),
            dense(&self.c),
            dense(&self.d),
            rows,
        )
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.c.iter().zip(x).map(|(p, q)| p * q).sum();
        lin + self.exponents.iter().zip(&self.d).map(|(e, dj)| dj * monomial_value(e, x)).sum::<f64>()
    }

    /// Largest violation of the rows and the box at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = self.exponents.iter().map(|e| monomial_value(e, x)).collect();
        let rows = (0..self.r).map(|k| {
            let lhs = self.a[k].iter().zip(x).map(|(p, q)| p * q).sum::<f64>()
                + self.b_matrix[k].iter().zip(&y).map(|(p, q)| p * q).sum::<f64>();
            (lhs - self.rhs[k]).max(0.0)
        });
        let boxed = x.iter().enumerate().map(|(i, &v)| (self.lower[i] - v).max(v - self.upper[i]).max(0.0));
        rows.chain(boxed).fold(0.0, f64::max)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), BenchError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub at_generating_point: f64,
    pub value: f64,
    pub point: Vec<f64>,
}

/// Rows may be violated by at most this much at an accepted descent step.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Objective at the generating point, then projected coordinate descent
/// with halving steps that keeps every row satisfied.
pub fn upper_bound(instance: &PolyInstance, descent_steps: usize) -> UpperBound {
    let mut x = instance.generating_point.clone();
    let start = instance.objective(&x);
    let mut best = start;
    let mut step = 0.5;
    let mut iterations = 0;
    while step > 1e-7 && iterations < descent_steps {
        iterations += 1;
        let mut improved = false;
        for i in 0..instance.n {
            for dir in [-1.0, 1.0] {
                let mut y = x.clone();
                y[i] = (y[i] + dir * step).clamp(instance.lower[i], instance.upper[i]);
                if y[i] == x[i] {
                    continue;
                }
                let v = instance.objective(&y);
                if v < best && instance.max_violation(&y) <= FEASIBILITY_TOL {
                    best = v;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    UpperBound { at_generating_point: start, value: best, point: x }
}

/// `(u - v_i) / (u - min v)`; `None` when the denominator vanishes.
pub fn remaining_gap(upper: f64, bounds: &[f64]) -> Option<Vec<f64>> {
    let weakest = bounds.iter().copied().fold(f64::INFINITY, f64::min);
    let denom = upper - weakest;
    if !(denom > 1e-12 * upper.abs().max(1.0)) {
        return None;
    }
    Some(bounds.iter().map(|v| (upper - v) / denom).collect())
}

/// Fraction of ratios at most `alpha` for every `alpha` in the grid.
pub fn gap_cdf(ratios: &[f64], grid: &[f64]) -> Vec<f64> {
    if ratios.is_empty() {
        return vec![0.0; grid.len()];
    }
    grid.iter()
        .map(|&alpha| ratios.iter().filter(|&&r| r <= alpha + 1e-12).count() as f64 / ratios.len() as f64)
        .collect()
}

/// `k + 1` evenly spaced values of `[0, 1]`.
pub fn alpha_grid(k: usize) -> Vec<f64> {
    (0..=k).map(|t| t as f64 / k as f64).collect()
}

/// Bounds of one instance under every variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub instance: String,
    pub upper: f64,
    pub bounds: BTreeMap<String, Option<f64>>,
    pub statuses: BTreeMap<String, SolveStatus>,
    pub seconds: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub variants: Vec<String>,
    pub results: Vec<InstanceResult>,
}

impl GapReport {
    /// Remaining gap per instance (rows) and variant (columns); instances
    /// with a missing bound or a vanishing gap are `None`.
    pub fn ratios(&self) -> Vec<Option<Vec<f64>>> {
        self.results
            .iter()
            .map(|res| {
                let bounds: Option<Vec<f64>> = self.variants.iter().map(|v| res.bounds.get(v).copied().flatten()).collect();
                remaining_gap(res.upper, &bounds?)
            })
            .collect()
    }

    pub fn excluded(&self) -> usize {
        self.ratios().iter().filter(|r| r.is_none()).count()
    }

    /// CDF samples per variant over the included instances.
    pub fn cdf(&self, grid: &[f64]) -> Vec<Vec<f64>> {
        let kept: Vec<Vec<f64>> = self.ratios().into_iter().flatten().collect();
        (0..self.variants.len())
            .map(|k| gap_cdf(&kept.iter().map(|r| r[k]).collect::<Vec<_>>(), grid))
            .collect()
    }

    /// `poi` column and one lowercase column per variant, then a comment
    /// footer with the excluded count.
    pub fn to_csv(&self, grid: &[f64]) -> String {
        let cdf = self.cdf(grid);
        let mut out = String::from("poi");
        for v in &self.variants {
            out.push(',');
            out.push_str(&v.to_ascii_lowercase());
        }
        out.push('\n');
        for (g, &alpha) in grid.iter().enumerate() {
            let _ = write!(out, "{alpha}");
            for col in &cdf {
                let _ = write!(out, ",{}", col[g]);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# excluded instances: {}", self.excluded());
        out
    }
}

/// Solves every variant on every instance; instances run on up to
/// `workers` threads and results keep the input order.
pub fn run_benchmark(
    instances: &[PolyInstance],
    variants: &[RelaxationVariant],
    opts: &SolveOptions,
    descent_steps: usize,
    workers: usize,
) -> Result<GapReport, BenchError> {
    let one = |inst: &PolyInstance| -> Result<InstanceResult, BenchError> {
        let problem = inst.to_problem();
        let ub = upper_bound(inst, descent_steps);
        let mut res = InstanceResult {
            instance: inst.id(),
            upper: ub.value,
            bounds: BTreeMap::new(),
            statuses: BTreeMap::new(),
            seconds: BTreeMap::new(),
        };
        for v in variants {
            let out = relax(&problem, v, opts)?;
            let key = v.tag.to_string();
            res.bounds.insert(key.clone(), out.bound);
            res.statuses.insert(key.clone(), out.status);
            res.seconds.insert(key, out.seconds);
        }
        Ok(res)
    };
    let workers = workers.max(1).min(instances.len().max(1));
    let chunk = instances.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<InstanceResult>, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = instances
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(one).collect::<Result<Vec<_>, _>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    Ok(GapReport {
        variants: variants.iter().map(|v| v.tag.to_string()).collect(),
        results: all,
    })
}

/// Settings read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// External MILP command with `{input}` and `{output}` placeholders.
    pub solver: Option<String>,
    pub node_limit: usize,
    pub descent_steps: usize,
    pub workers: usize,
    pub variant: crate::relaxations::VariantConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            solver: None,
            node_limit: SolveOptions::default().node_limit,
            descent_steps: 200,
            workers: 1,
            variant: Default::default(),
        }
    }
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The solver command, preferring the environment override.
    pub fn solver_command(&self) -> Option<String> {
        std::env::var(SOLVER_ENV).ok().filter(|s| !s.trim().is_empty()).or_else(|| self.solver.clone())
    }
}

pub fn parse_variants(list: &str, config: &crate::relaxations::VariantConfig) -> Result<Vec<RelaxationVariant>, BenchError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let tag: VariantTag = s.trim().parse()?;
            Ok(RelaxationVariant::with_config(tag, config.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_structure() {
        let inst = generate_instance(15, 30, 10, 7).unwrap();
        for row in &inst.exponents {
            let nz: Vec<u32> = row.iter().copied().filter(|&e| e > 0).collect();
            assert!(nz.len() == 2 || nz.len() == 3);
            assert!(nz.iter().all(|&e| e == 2 || e == 3));
        }
        assert!(inst.d.iter().all(|&v| v >= 0.0));
        assert!(inst.b_matrix.iter().flatten().all(|&v| v >= 0.0));
        assert!(inst.lower.iter().all(|&v| [0.0, 1.0, 2.0].contains(&v)));
        assert!(inst.upper.iter().all(|&v| [3.0, 4.0].contains(&v)));
        assert!(inst.max_violation(&inst.generating_point) <= 1e-9);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = serde_json::to_string(&generate_instance(5, 10, 4, 3).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_instance(5, 10, 4, 3).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_instance(5, 10, 4, 4).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn objective_matches_tree_evaluation() {
        let inst = generate_instance(5, 10, 4, 11).unwrap();
        let p = inst.to_problem();
        let x = &inst.generating_point;
        assert!((p.objective_at(x) - inst.objective(x)).abs() < 1e-9 * inst.objective(x).abs().max(1.0));
        assert!(p.max_violation(x) <= 1e-6);
        let ub = upper_bound(&inst, 100);
        assert_eq!(ub.at_generating_point, inst.objective(x));
        assert!(ub.value <= ub.at_generating_point);
        assert!(inst.max_violation(&ub.point) <= FEASIBILITY_TOL);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(remaining_gap(10.0, &[2.0, 6.0, 8.0]).unwrap(), vec![1.0, 0.5, 0.25]);
        assert_eq!(remaining_gap(10.0, &[10.0, 10.0]), None);
        let r = remaining_gap(7.0, &[3.0, 7.0]).unwrap();
        assert_eq!(r, vec![1.0, 0.0]);
    }

    #[test]
    fn cdf_examples() {
        let grid = alpha_grid(10);
        assert!(gap_cdf(&[0.0; 4], &grid).iter().all(|&m| m == 1.0));
        let uniform: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        let mu = gap_cdf(&uniform, &grid);
        assert_eq!(mu[5], 0.5);
        assert!(mu.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*mu.last().unwrap(), 1.0);
    }

    #[test]
    fn config_and_env_override() {
        let cfg = BenchConfig::parse("solver = \"cbc {input} {output}\"\nnode_limit = 50\n[variant]\ncut_points = 3\n").unwrap();
        assert_eq!(cfg.node_limit, 50);
        assert_eq!(cfg.variant.cut_points, 3);
        assert_eq!(cfg.variant.separation_rounds, 50);
        if std::env::var(SOLVER_ENV).is_err() {
            assert_eq!(cfg.solver_command().as_deref(), Some("cbc {input} {output}"));
        }
    }
}
