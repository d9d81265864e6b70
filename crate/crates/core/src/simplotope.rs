//! Discretization schemes, the simplotopes Q and Δ, the Z transform and the
//! incremental and logarithmic MIP formulations of the cell faces.
use thiserror::Error;

use crate::milp::{Cmp, ModelIR, ObjSense, VarId};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum SchemeError {
    #[error("scheme has no dimensions")]
    Empty,
    #[error("dimension {dim} needs at least two breakpoints")]
    TooFewBreakpoints { dim: usize },
    #[error("dimension {dim}: breakpoint {index} does not increase strictly")]
    NotIncreasing { dim: usize, index: usize },
    #[error("dimension {dim}: discretized indices must increase from 0 to n")]
    BadIndices { dim: usize },
    #[error("logarithmic formulation needs every breakpoint discretized")]
    NotFullyDiscretized,
}

/// Per-dimension breakpoints `a_i0 < ... < a_in` and the increasing index
/// subsequence `tau_i` (from 0 to n) of breakpoints that carry binaries.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizationScheme<T> {
    breakpoints: Vec<Vec<T>>,
    tau: Vec<Vec<usize>>,
}

impl<T: Scalar> DiscretizationScheme<T> {
    pub fn new(breakpoints: Vec<Vec<T>>, tau: Vec<Vec<usize>>) -> Result<Self, SchemeError> {
        if breakpoints.is_empty() {
            return Err(SchemeError::Empty);
        }
        if tau.len() != breakpoints.len() {
            return Err(SchemeError::BadIndices { dim: tau.len().min(breakpoints.len()) });
        }
        for (dim, (a, t)) in breakpoints.iter().zip(&tau).enumerate() {
            if a.len() < 2 {
                return Err(SchemeError::TooFewBreakpoints { dim });
            }
            if let Some(index) = (1..a.len()).find(|&j| !(a[j] > a[j - 1])) {
                return Err(SchemeError::NotIncreasing { dim, index });
            }
            let n = a.len() - 1;
            let ok = t.len() >= 2
                && t[0] == 0
                && *t.last().unwrap() == n
                && t.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(SchemeError::BadIndices { dim });
            }
        }
        Ok(DiscretizationScheme { breakpoints, tau })
    }

    /// Scheme with no interior discretization (a single cell per dimension).
    pub fn undiscretized(breakpoints: Vec<Vec<T>>) -> Result<Self, SchemeError> {
        let tau = breakpoints.iter().map(|a| vec![0, a.len().saturating_sub(1)]).collect();
        Self::new(breakpoints, tau)
    }

    /// Scheme where every breakpoint is discretized.
    pub fn fully_discretized(breakpoints: Vec<Vec<T>>) -> Result<Self, SchemeError> {
        let tau = breakpoints.iter().map(|a| (0..a.len()).collect()).collect();
        Self::new(breakpoints, tau)
    }

    pub fn dims(&self) -> usize {
        self.breakpoints.len()
    }

    /// Number of segments `n_i` of dimension `i`.
    pub fn n(&self, i: usize) -> usize {
        self.breakpoints[i].len() - 1
    }

    /// Number of cells `l_i` of dimension `i`.
    pub fn cells_in(&self, i: usize) -> usize {
        self.tau[i].len() - 1
    }

    pub fn breakpoints(&self, i: usize) -> &[T] {
        &self.breakpoints[i]
    }

    pub fn a(&self, i: usize, j: usize) -> T {
        self.breakpoints[i][j]
    }

    pub fn tau(&self, i: usize) -> &[usize] {
        &self.tau[i]
    }

    /// Interval `[a_{tau(t-1)}, a_{tau(t)}]` of cell `t` (1-based).
    pub fn cell(&self, i: usize, t: usize) -> (T, T) {
        (self.a(i, self.tau[i][t - 1]), self.a(i, self.tau[i][t]))
    }

    /// Smallest cell whose interval contains `value` (values outside the
    /// range are assigned to the nearest end cell).
    pub fn cell_of(&self, i: usize, value: T) -> usize {
        (1..=self.cells_in(i))
            .find(|&t| value <= self.cell(i, t).1)
            .unwrap_or(self.cells_in(i))
    }

    /// Total number of chain coordinates `z_ij`, `j >= 1`.
    pub fn total_segments(&self) -> usize {
        (0..self.dims()).map(|i| self.n(i)).sum()
    }

    pub fn map_scalar<U: Scalar>(&self, f: impl Fn(T) -> U) -> DiscretizationScheme<U> {
        DiscretizationScheme {
            breakpoints: self
                .breakpoints
                .iter()
                .map(|a| a.iter().map(|&v| f(v)).collect())
                .collect(),
            tau: self.tau.clone(),
        }
    }
}

/// Vertices `v_ij = (a_0, ..., a_{j-1}, a_j, ..., a_j)` of the simplex Q_i.
pub fn q_vertices<T: Scalar>(scheme: &DiscretizationScheme<T>, i: usize) -> Vec<Vec<T>> {
    let a = scheme.breakpoints(i);
    (0..a.len())
        .map(|j| (0..a.len()).map(|k| a[k.min(j)]).collect())
        .collect()
}

/// `z_ij = (s_ij - s_{i,j-1}) / (a_ij - a_{i,j-1})`, with `z_i0 = 1`.
pub fn z_from_s<T: Scalar>(scheme: &DiscretizationScheme<T>, i: usize, s: &[T]) -> Vec<T> {
    let a = scheme.breakpoints(i);
    std::iter::once(T::one())
        .chain((1..a.len()).map(|j| (s[j] - s[j - 1]) / (a[j] - a[j - 1])))
        .collect()
}

/// Inverse of [`z_from_s`]: `s_ij = a_i0 + sum_{j' <= j} (a_ij' - a_i,j'-1) z_ij'`.
pub fn s_from_z<T: Scalar>(scheme: &DiscretizationScheme<T>, i: usize, z: &[T]) -> Vec<T> {
    let a = scheme.breakpoints(i);
    let mut acc = a[0] * z[0];
    std::iter::once(acc)
        .chain((1..a.len()).map(|j| {
            acc = acc + (a[j] - a[j - 1]) * z[j];
            acc
        }))
        .collect()
}

/// `F_i(z) = a_i0 + sum_j (a_ij - a_i,j-1) z_ij`, the last coordinate of s.
pub fn inner_value<T: Scalar>(scheme: &DiscretizationScheme<T>, i: usize, z: &[T]) -> T {
    *s_from_z(scheme, i, z).last().unwrap()
}

/// True when `1 = z_0 >= z_1 >= ... >= z_n >= 0` holds within `tol`.
pub fn in_chain<T: Scalar>(z: &[T], tol: T) -> bool {
    (z[0] - T::one()).abs() <= tol
        && z.windows(2).all(|w| w[1] <= w[0] + tol)
        && *z.last().unwrap() >= -tol
}

/// Euclidean projection of `z` onto the chain polytope (pool adjacent
/// violators on the free coordinates, then clipping to [0, 1]).
pub fn project_to_chain<T: Scalar>(z: &[T]) -> Vec<T> {
    let mut blocks: Vec<(T, usize)> = Vec::new();
    for &v in &z[1..] {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.pop();
            let merged = (a * T::from_count(na) + b * T::from_count(nb)) / T::from_count(na + nb);
            *blocks.last_mut().unwrap() = (merged, na + nb);
        }
    }
    std::iter::once(T::one())
        .chain(blocks.into_iter().flat_map(|(v, n)| {
            let c = v.max_of(T::zero()).min_of(T::one());
            std::iter::repeat(c).take(n)
        }))
        .collect()
}

/// One cell per dimension; a face of Δ fixing the chain outside the cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimplotopeFace {
    /// 1-based cell index per dimension.
    pub cells: Vec<usize>,
}

impl SimplotopeFace {
    /// Fixed chain values per dimension and position: `Some(1)` for
    /// `j <= tau(t-1)`, `Some(0)` for `j > tau(t)`, free otherwise.
    pub fn fixings<T: Scalar>(&self, scheme: &DiscretizationScheme<T>) -> Vec<Vec<Option<T>>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let (lo, hi) = (scheme.tau(i)[t - 1], scheme.tau(i)[t]);
                (0..=scheme.n(i))
                    .map(|j| {
                        if j <= lo {
                            Some(T::one())
                        } else if j > hi {
                            Some(T::zero())
                        } else {
                            None
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Incremental binaries selecting this face: `delta_ik = 1` iff `k < t_i`.
    pub fn delta_pattern<T: Scalar>(&self, scheme: &DiscretizationScheme<T>) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, &t)| (1..scheme.cells_in(i)).map(|k| if k < t { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    /// All faces, last dimension varying fastest.
    pub fn all<T: Scalar>(scheme: &DiscretizationScheme<T>) -> Vec<SimplotopeFace> {
        let mut out = vec![Vec::new()];
        for i in 0..scheme.dims() {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<usize>| {
                    (1..=scheme.cells_in(i)).map(move |t| {
                        let mut p = prefix.clone();
                        p.push(t);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(|cells| SimplotopeFace { cells }).collect()
    }
}

/// Variables of a materialized formulation. `z[i][j-1]` is `z_ij` for
/// `j = 1..=n_i`; `z_i0 = 1` is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct FormulationBlock {
    pub model: ModelIR,
    pub f: Vec<VarId>,
    pub z: Vec<Vec<VarId>>,
    pub delta: Vec<Vec<VarId>>,
}

/// Adds `z_ij in [0, 1]` for every dimension.
pub fn add_chain_vars(model: &mut ModelIR, scheme: &DiscretizationScheme<f64>, prefix: &str) -> Vec<Vec<VarId>> {
    (0..scheme.dims())
        .map(|i| {
            (1..=scheme.n(i))
                .map(|j| model.add_var(format!("{prefix}z_{i}_{j}"), 0.0, 1.0))
                .collect()
        })
        .collect()
}

/// Chain rows `z_i,j >= z_i,j+1` and `z_i1 <= 1`, skipping the links that the
/// incremental binaries replace when `with_binaries` is set.
fn add_chain_rows(
    model: &mut ModelIR,
    scheme: &DiscretizationScheme<f64>,
    z: &[Vec<VarId>],
    prefix: &str,
    with_binaries: bool,
) {
    for i in 0..scheme.dims() {
        let cut_points: &[usize] = if with_binaries {
            &scheme.tau(i)[1..scheme.cells_in(i)]
        } else {
            &[]
        };
        for j in 1..scheme.n(i) {
            if !cut_points.contains(&j) {
                model.add_row(
                    format!("{prefix}chain_{i}_{j}"),
                    [(z[i][j - 1], 1.0), (z[i][j], -1.0)],
                    Cmp::Ge,
                    0.0,
                );
            }
        }
    }
}

/// Adds incremental binaries and rows `z_{tau(t)} >= delta_t >= z_{tau(t)+1}`
/// together with the remaining chain rows over existing `z` variables.
pub fn add_incremental(
    model: &mut ModelIR,
    scheme: &DiscretizationScheme<f64>,
    z: &[Vec<VarId>],
    prefix: &str,
) -> Vec<Vec<VarId>> {
    let delta: Vec<Vec<VarId>> = (0..scheme.dims())
        .map(|i| {
            (1..scheme.cells_in(i))
                .map(|t| model.add_binary(format!("{prefix}delta_{i}_{t}")))
                .collect()
        })
        .collect();
    add_incremental_rows(model, scheme, z, &delta, prefix);
    delta
}

/// The rows of [`add_incremental`] over existing binaries `delta[i][t - 1]`.
pub fn add_incremental_rows(
    model: &mut ModelIR,
    scheme: &DiscretizationScheme<f64>,
    z: &[Vec<VarId>],
    delta: &[Vec<VarId>],
    prefix: &str,
) {
    add_chain_rows(model, scheme, z, prefix, true);
    for i in 0..scheme.dims() {
        for t in 1..scheme.cells_in(i) {
            let d = delta[i][t - 1];
            let j = scheme.tau(i)[t];
            model.add_row(format!("{prefix}inc_hi_{i}_{t}"), [(z[i][j - 1], 1.0), (d, -1.0)], Cmp::Ge, 0.0);
            model.add_row(format!("{prefix}inc_lo_{i}_{t}"), [(d, 1.0), (z[i][j], -1.0)], Cmp::Ge, 0.0);
        }
    }
}

/// Adds `f_i = a_i0 + sum_j (a_ij - a_i,j-1) z_ij`.
pub fn add_linking_rows(
    model: &mut ModelIR,
    scheme: &DiscretizationScheme<f64>,
    z: &[Vec<VarId>],
    f: &[VarId],
    prefix: &str,
) {
    for i in 0..scheme.dims() {
        let a = scheme.breakpoints(i);
        let terms = std::iter::once((f[i], 1.0)).chain((1..a.len()).map(|j| (z[i][j - 1], -(a[j] - a[j - 1]))));
        model.add_row(format!("{prefix}link_{i}"), terms, Cmp::Eq, a[0]);
    }
}

fn fresh_block(scheme: &DiscretizationScheme<f64>) -> (ModelIR, Vec<VarId>, Vec<Vec<VarId>>) {
    let mut model = ModelIR::new(ObjSense::Minimize);
    let f = (0..scheme.dims())
        .map(|i| {
            let a = scheme.breakpoints(i);
            model.add_var(format!("f_{i}"), a[0], a[a.len() - 1])
        })
        .collect();
    let z = add_chain_vars(&mut model, scheme, "");
    (model, f, z)
}

/// The incremental MIP formulation of the cell faces of Δ with `f = F(z)`.
pub fn incremental_formulation(scheme: &DiscretizationScheme<f64>) -> FormulationBlock {
    let (mut model, f, z) = fresh_block(scheme);
    let delta = add_incremental(&mut model, scheme, &z, "");
    add_linking_rows(&mut model, scheme, &z, &f, "");
    FormulationBlock { model, f, z, delta }
}

/// Reflected binary Gray code of `bits` bits, first `count` codes.
pub fn gray_codes(bits: usize, count: usize) -> Vec<Vec<bool>> {
    (0..count)
        .map(|t| {
            let g = t ^ (t >> 1);
            (0..bits).map(|b| (g >> (bits - 1 - b)) & 1 == 1).collect()
        })
        .collect()
}

pub fn log_bits(n: usize) -> usize {
    let mut bits = 0;
    while (1usize << bits) < n {
        bits += 1;
    }
    bits
}

/// Adds the logarithmic binaries over existing `z` variables: with
/// `lambda_j = z_j - z_{j+1}`, `sum_{j in L_b} lambda_j <= delta_b` and
/// `sum_{j in R_b} lambda_j <= 1 - delta_b` for every code bit `b`.
pub fn add_logarithmic(
    model: &mut ModelIR,
    scheme: &DiscretizationScheme<f64>,
    z: &[Vec<VarId>],
    prefix: &str,
) -> Result<Vec<Vec<VarId>>, SchemeError> {
    for i in 0..scheme.dims() {
        if scheme.cells_in(i) != scheme.n(i) {
            return Err(SchemeError::NotFullyDiscretized);
        }
    }
    add_chain_rows(model, scheme, z, prefix, false);
    let mut all = Vec::new();
    for i in 0..scheme.dims() {
        let n = scheme.n(i);
        let bits = log_bits(n);
        let codes = gray_codes(bits, n);
        // lambda_j as terms over z, with z_0 = 1 moved to the constant.
        let lambda = |j: usize| -> (Vec<(VarId, f64)>, f64) {
            let mut terms = Vec::new();
            let mut constant = 0.0;
            if j == 0 {
                constant += 1.0;
            } else {
                terms.push((z[i][j - 1], 1.0));
            }
            if j < n {
                terms.push((z[i][j], -1.0));
            }
            (terms, constant)
        };
        let mut deltas = Vec::new();
        for b in 0..bits {
            let d = model.add_binary(format!("{prefix}logd_{i}_{b}"));
            let side = |want: bool| -> Vec<usize> {
                (0..=n)
                    .filter(|&j| {
                        let left = codes[j.saturating_sub(1).min(n - 1)][b];
                        let right = codes[j.min(n - 1)][b];
                        left == want && right == want
                    })
                    .collect()
            };
            for (want, tag) in [(true, "L"), (false, "R")] {
                let mut terms = Vec::new();
                let mut constant = 0.0;
                for j in side(want) {
                    let (t, c) = lambda(j);
                    terms.extend(t);
                    constant += c;
                }
                if want {
                    terms.push((d, -1.0));
                    model.add_row(format!("{prefix}log{tag}_{i}_{b}"), terms, Cmp::Le, -constant);
                } else {
                    terms.push((d, 1.0));
                    model.add_row(format!("{prefix}log{tag}_{i}_{b}"), terms, Cmp::Le, 1.0 - constant);
                }
            }
            deltas.push(d);
        }
        all.push(deltas);
    }
    Ok(all)
}

/// The logarithmic formulation; requires every breakpoint discretized.
pub fn log_formulation(scheme: &DiscretizationScheme<f64>) -> Result<FormulationBlock, SchemeError> {
    let (mut model, f, z) = fresh_block(scheme);
    let delta = add_logarithmic(&mut model, scheme, &z, "")?;
    add_linking_rows(&mut model, scheme, &z, &f, "");
    Ok(FormulationBlock { model, f, z, delta })
}

/// Value form of the switch transform: an overestimator value `u` with
/// bound `a` of a function whose value is `top` becomes `a - u + top`.
pub fn switch_transform<T: Scalar>(u: T, a: T, underestimator: bool, top: T) -> T {
    if underestimator {
        u
    } else {
        a - u + top
    }
}
