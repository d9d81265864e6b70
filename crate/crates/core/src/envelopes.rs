//! Envelopes of outer functions over the simplotope Q: staircase pieces,
//! sort-based separation, explicit bilinear envelopes, vertex-grid (RLT)
//! hulls, a brute-force hull oracle and the discrete concave envelope.
use thiserror::Error;

use crate::milp::{simplex_solve, Cmp, ModelIR, ObjSense, SolveStatus, VarId};
use crate::simplotope::{in_chain, project_to_chain, q_vertices, z_from_s, DiscretizationScheme};
use crate::Scalar;

/// Largest number of moves for which staircases are enumerated.
pub const MAX_STAIRCASE_MOVES: usize = 12;
/// Largest vertex grid handled by the hull constructions.
pub const MAX_GRID_POINTS: usize = 4096;
/// Up to this many moves, envelope values are taken over all staircases.
pub const EXHAUSTIVE_MOVES: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("{moves} staircase moves exceed the limit {MAX_STAIRCASE_MOVES}")]
    TooManyMoves { moves: usize },
    #[error("vertex grid of {points} points exceeds the limit {MAX_GRID_POINTS}")]
    GridTooLarge { points: usize },
    #[error("point is outside Q (dimension {dim})")]
    OutsideQ { dim: usize },
    #[error("staircase interpolation system is singular")]
    Singular,
    #[error("construction needs exactly two dimensions, got {0}")]
    NeedsTwoDims(usize),
    #[error("oracle LP ended with status {0}")]
    Oracle(SolveStatus),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Upper (concave) envelope.
    Concave,
    /// Lower (convex) envelope.
    Convex,
}

/// A monotone lattice path through the vertex grid, stored as the dimension
/// moved at each step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Staircase {
    pub moves: Vec<usize>,
}

impl Staircase {
    /// Grid points `p^0 = 0, ..., p^T = (n_1, ..., n_d)`.
    pub fn points(&self, dims: usize) -> Vec<Vec<usize>> {
        let mut p = vec![0; dims];
        let mut out = vec![p.clone()];
        for &i in &self.moves {
            p[i] += 1;
            out.push(p.clone());
        }
        out
    }
}

/// All staircases with `n` moves in each of `d` dimensions, lexicographic.
pub fn enumerate_staircases(d: usize, n: usize) -> Result<Vec<Staircase>, EnvelopeError> {
    enumerate_staircases_for(&vec![n; d])
}

/// All staircases with `counts[i]` moves along dimension `i`.
pub fn enumerate_staircases_for(counts: &[usize]) -> Result<Vec<Staircase>, EnvelopeError> {
    let moves: usize = counts.iter().sum();
    if moves > MAX_STAIRCASE_MOVES {
        return Err(EnvelopeError::TooManyMoves { moves });
    }
    fn rec(left: &mut [usize], path: &mut Vec<usize>, out: &mut Vec<Staircase>) {
        if left.iter().all(|&c| c == 0) {
            out.push(Staircase { moves: path.clone() });
            return;
        }
        for i in 0..left.len() {
            if left[i] > 0 {
                left[i] -= 1;
                path.push(i);
                rec(left, path, out);
                path.pop();
                left[i] += 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut counts.to_vec(), &mut Vec::new(), &mut out);
    Ok(out)
}

/// `constant + sum_ij coeffs[i][j] * s_ij`. The `j = 0` coefficients are kept
/// at zero because `s_i0 = a_i0` on Q.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePiece<T> {
    pub constant: T,
    pub coeffs: Vec<Vec<T>>,
}

impl<T: Scalar> AffinePiece<T> {
    pub fn zero(scheme: &DiscretizationScheme<T>) -> Self {
        AffinePiece {
            constant: T::zero(),
            coeffs: (0..scheme.dims()).map(|i| vec![T::zero(); scheme.n(i) + 1]).collect(),
        }
    }

    pub fn evaluate(&self, s: &[Vec<T>]) -> T {
        self.coeffs
            .iter()
            .zip(s)
            .flat_map(|(c, si)| c.iter().zip(si).skip(1).map(|(&a, &b)| a * b))
            .fold(self.constant, |acc, v| acc + v)
    }

    pub fn negated(&self) -> Self {
        AffinePiece {
            constant: -self.constant,
            coeffs: self.coeffs.iter().map(|c| c.iter().map(|&v| -v).collect()).collect(),
        }
    }

    pub fn max_abs_difference(&self, other: &Self) -> T {
        self.coeffs
            .iter()
            .flatten()
            .zip(other.coeffs.iter().flatten())
            .map(|(&a, &b)| (a - b).abs())
            .fold((self.constant - other.constant).abs(), |a, b| a.max_of(b))
    }
}

/// `constant + sum_{i, j >= 1} coeffs[i][j] * z_ij` over chain coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainPiece<T> {
    pub constant: T,
    pub coeffs: Vec<Vec<T>>,
}

impl<T: Scalar> ChainPiece<T> {
    pub fn evaluate(&self, z: &[Vec<T>]) -> T {
        self.coeffs
            .iter()
            .zip(z)
            .flat_map(|(c, zi)| c.iter().zip(zi).skip(1).map(|(&a, &b)| a * b))
            .fold(self.constant, |acc, v| acc + v)
    }

    /// The same affine function written over s via the Z transform.
    pub fn to_s(&self, scheme: &DiscretizationScheme<T>) -> AffinePiece<T> {
        let mut piece = AffinePiece::zero(scheme);
        piece.constant = self.constant;
        for i in 0..scheme.dims() {
            let a = scheme.breakpoints(i);
            for j in 1..a.len() {
                let w = self.coeffs[i][j] / (a[j] - a[j - 1]);
                piece.coeffs[i][j] = piece.coeffs[i][j] + w;
                if j == 1 {
                    piece.constant = piece.constant - w * a[0];
                } else {
                    piece.coeffs[i][j - 1] = piece.coeffs[i][j - 1] - w;
                }
            }
        }
        piece
    }

    /// Coefficients after the change of variables `lambda_j = z_j - z_{j+1}`:
    /// entry `[i][k]` multiplies `lambda_ik`, `k >= 1`.
    pub fn lambda_coefficients(&self) -> Vec<Vec<T>> {
        self.coeffs
            .iter()
            .map(|c| {
                let mut acc = T::zero();
                std::iter::once(T::zero())
                    .chain(c.iter().skip(1).map(|&v| {
                        acc = acc + v;
                        acc
                    }))
                    .collect()
            })
            .collect()
    }
}

/// Interpolating piece of `phi` over the staircase simplex, in z coordinates.
pub fn staircase_chain_piece<T: Scalar>(
    stair: &Staircase,
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
) -> ChainPiece<T> {
    let points = stair.points(scheme.dims());
    let mut coeffs: Vec<Vec<T>> = (0..scheme.dims()).map(|i| vec![T::zero(); scheme.n(i) + 1]).collect();
    let mut prev = phi(&points[0]);
    let constant = prev;
    for (t, &i) in stair.moves.iter().enumerate() {
        let next = phi(&points[t + 1]);
        let j = points[t + 1][i];
        coeffs[i][j] = coeffs[i][j] + next - prev;
        prev = next;
    }
    ChainPiece { constant, coeffs }
}

/// Affine function over s agreeing with `phi` at the staircase vertices.
pub fn interpolate_staircase<T: Scalar>(
    stair: &Staircase,
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
) -> Result<AffinePiece<T>, EnvelopeError> {
    let piece = staircase_chain_piece(stair, scheme, phi).to_s(scheme);
    if piece.coeffs.iter().flatten().all(|c| c.to_f64_lossy().is_finite()) {
        Ok(piece)
    } else {
        Err(EnvelopeError::Singular)
    }
}

/// s coordinates of the Q vertex at grid point `p`.
pub fn vertex_point<T: Scalar>(scheme: &DiscretizationScheme<T>, p: &[usize]) -> Vec<Vec<T>> {
    (0..scheme.dims()).map(|i| q_vertices(scheme, i)[p[i]].clone()).collect()
}

/// The same interpolant obtained by solving the vertex system directly.
pub fn interpolate_by_elimination<T: Scalar>(
    stair: &Staircase,
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
) -> Result<AffinePiece<T>, EnvelopeError> {
    let index: Vec<(usize, usize)> = (0..scheme.dims())
        .flat_map(|i| (1..=scheme.n(i)).map(move |j| (i, j)))
        .collect();
    let size = index.len() + 1;
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(size);
    let mut rhs = Vec::with_capacity(size);
    for p in stair.points(scheme.dims()) {
        let v = vertex_point(scheme, &p);
        let mut row = vec![T::one()];
        row.extend(index.iter().map(|&(i, j)| v[i][j]));
        rows.push(row);
        rhs.push(phi(&p));
    }
    for c in 0..size {
        let p = (c..size)
            .max_by(|&a, &b| {
                rows[a][c]
                    .abs()
                    .partial_cmp(&rows[b][c].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if rows[p][c].is_zero() {
            return Err(EnvelopeError::Singular);
        }
        rows.swap(p, c);
        rhs.swap(p, c);
        for r in 0..size {
            if r != c && !rows[r][c].is_zero() {
                let f = rows[r][c] / rows[c][c];
                for k in c..size {
                    let sub = f * rows[c][k];
                    rows[r][k] = rows[r][k] - sub;
                }
                let sub = f * rhs[c];
                rhs[r] = rhs[r] - sub;
            }
        }
    }
    let mut piece = AffinePiece::zero(scheme);
    piece.constant = rhs[0] / rows[0][0];
    for (k, &(i, j)) in index.iter().enumerate() {
        piece.coeffs[i][j] = rhs[k + 1] / rows[k + 1][k + 1];
    }
    Ok(piece)
}

fn chain_coordinates<T: Scalar>(scheme: &DiscretizationScheme<T>, s: &[Vec<T>]) -> Result<Vec<Vec<T>>, EnvelopeError> {
    let tol = T::from_f64_lossy(1e-9);
    (0..scheme.dims())
        .map(|i| {
            let z = z_from_s(scheme, i, &s[i]);
            if in_chain(&z, tol) {
                Ok(project_to_chain(&z))
            } else {
                Err(EnvelopeError::OutsideQ { dim: i })
            }
        })
        .collect()
}

/// Staircase following the chain coordinates in nonincreasing order, ties
/// broken by dimension and then position.
pub fn staircase_through<T: Scalar>(z: &[Vec<T>]) -> Staircase {
    let mut items: Vec<(T, usize, usize)> = z
        .iter()
        .enumerate()
        .flat_map(|(i, zi)| zi.iter().enumerate().skip(1).map(move |(j, &v)| (v, i, j)))
        .collect();
    items.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    Staircase {
        moves: items.into_iter().map(|(_, i, _)| i).collect(),
    }
}

/// Facet of the concave envelope of a supermodular `phi` tight at `s`.
pub fn separate_supermodular<T: Scalar>(
    s: &[Vec<T>],
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
) -> Result<AffinePiece<T>, EnvelopeError> {
    let z = chain_coordinates(scheme, s)?;
    interpolate_staircase(&staircase_through(&z), scheme, phi)
}

/// Convex-side piece for two dimensions: the second dimension is reversed
/// (`z'_j = 1 - z_{n+1-j}`), which turns `-phi` into a supermodular function.
fn reflected_convex_piece<T: Scalar>(
    stair: &Staircase,
    scheme: &DiscretizationScheme<T>,
    phi: &impl Fn(&[usize]) -> T,
) -> AffinePiece<T> {
    let n2 = scheme.n(1);
    let psi = |p: &[usize]| -phi(&[p[0], n2 - p[1]]);
    let h = staircase_chain_piece(stair, scheme, psi);
    let mut coeffs = vec![vec![T::zero(); scheme.n(0) + 1], vec![T::zero(); n2 + 1]];
    let mut constant = -h.constant;
    for j in 1..=scheme.n(0) {
        coeffs[0][j] = -h.coeffs[0][j];
    }
    for k in 1..=n2 {
        coeffs[1][n2 + 1 - k] = h.coeffs[1][k];
        constant = constant - h.coeffs[1][k];
    }
    ChainPiece { constant, coeffs }.to_s(scheme)
}

/// Facet of the convex envelope tight at `s`, for two-dimensional `phi`
/// that is supermodular (the bilinear case included).
pub fn separate_convex_two_dim<T: Scalar>(
    s: &[Vec<T>],
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
) -> Result<AffinePiece<T>, EnvelopeError> {
    if scheme.dims() != 2 {
        return Err(EnvelopeError::NeedsTwoDims(scheme.dims()));
    }
    let mut z = chain_coordinates(scheme, s)?;
    let n2 = scheme.n(1);
    let reflected: Vec<T> = (0..=n2)
        .map(|k| if k == 0 { T::one() } else { T::one() - z[1][n2 + 1 - k] })
        .collect();
    z[1] = reflected;
    Ok(reflected_convex_piece(&staircase_through(&z), scheme, &phi))
}

/// Separation on either side; the convex side needs two dimensions.
pub fn separate<T: Scalar>(
    s: &[Vec<T>],
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
    side: Side,
) -> Result<AffinePiece<T>, EnvelopeError> {
    match side {
        Side::Concave => separate_supermodular(s, scheme, phi),
        Side::Convex => separate_convex_two_dim(s, scheme, phi),
    }
}

/// Every concave-side staircase piece of a supermodular `phi`.
pub fn concave_pieces<T: Scalar>(
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
) -> Result<Vec<AffinePiece<T>>, EnvelopeError> {
    let counts: Vec<usize> = (0..scheme.dims()).map(|i| scheme.n(i)).collect();
    enumerate_staircases_for(&counts)?
        .iter()
        .map(|st| interpolate_staircase(st, scheme, &phi))
        .collect()
}

/// Every convex-side piece for two-dimensional supermodular `phi`.
pub fn convex_pieces<T: Scalar>(
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
) -> Result<Vec<AffinePiece<T>>, EnvelopeError> {
    if scheme.dims() != 2 {
        return Err(EnvelopeError::NeedsTwoDims(scheme.dims()));
    }
    Ok(enumerate_staircases_for(&[scheme.n(0), scheme.n(1)])?
        .iter()
        .map(|st| reflected_convex_piece(st, scheme, &phi))
        .collect())
}

/// Envelope value at `s`: over all staircases when small, by separation
/// otherwise.
pub fn envelope_value<T: Scalar>(
    s: &[Vec<T>],
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
    side: Side,
) -> Result<T, EnvelopeError> {
    if scheme.total_segments() <= EXHAUSTIVE_MOVES {
        chain_coordinates(scheme, s)?;
        let pieces = match side {
            Side::Concave => concave_pieces(scheme, &phi)?,
            Side::Convex => convex_pieces(scheme, &phi)?,
        };
        let vals = pieces.iter().map(|p| p.evaluate(s));
        Ok(match side {
            Side::Concave => vals.fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.min_of(v)))),
            Side::Convex => vals.fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max_of(v)))),
        }
        .expect("at least one staircase"))
    } else {
        Ok(separate(s, scheme, phi, side)?.evaluate(s))
    }
}

fn bilinear_scheme_check<T: Scalar>(scheme: &DiscretizationScheme<T>) -> Result<(), EnvelopeError> {
    if scheme.dims() == 2 {
        Ok(())
    } else {
        Err(EnvelopeError::NeedsTwoDims(scheme.dims()))
    }
}

/// `piece += w * (s_ij - s_ij')`, folding `s_i0 = a_i0` into the constant.
fn add_difference<T: Scalar>(piece: &mut AffinePiece<T>, scheme: &DiscretizationScheme<T>, i: usize, w: T, j: usize, j_prev: usize) {
    for (idx, sign) in [(j, w), (j_prev, -w)] {
        if idx == 0 {
            piece.constant = piece.constant + sign * scheme.a(i, 0);
        } else {
            piece.coeffs[i][idx] = piece.coeffs[i][idx] + sign;
        }
    }
}

/// Overestimating pieces of `s_1n s_2n` over Q whose minimum is the concave
/// envelope, one per staircase.
pub fn bilinear_concave_terms<T: Scalar>(scheme: &DiscretizationScheme<T>) -> Result<Vec<AffinePiece<T>>, EnvelopeError> {
    bilinear_scheme_check(scheme)?;
    let stairs = enumerate_staircases_for(&[scheme.n(0), scheme.n(1)])?;
    Ok(stairs
        .iter()
        .map(|st| {
            let pts = st.points(2);
            let mut piece = AffinePiece::zero(scheme);
            piece.constant = scheme.a(0, 0) * scheme.a(1, 0);
            for (t, &dir) in st.moves.iter().enumerate() {
                let (p, q) = (&pts[t + 1], &pts[t]);
                if dir == 0 {
                    add_difference(&mut piece, scheme, 0, scheme.a(1, p[1]), p[0], q[0]);
                } else {
                    add_difference(&mut piece, scheme, 1, scheme.a(0, p[0]), p[1], q[1]);
                }
            }
            piece
        })
        .collect())
}

/// Underestimating pieces of `s_1n s_2n` over Q whose maximum is the convex
/// envelope, one per staircase (second dimension read in reverse).
pub fn bilinear_convex_terms<T: Scalar>(scheme: &DiscretizationScheme<T>) -> Result<Vec<AffinePiece<T>>, EnvelopeError> {
    bilinear_scheme_check(scheme)?;
    let n = scheme.n(1);
    let stairs = enumerate_staircases_for(&[scheme.n(0), n])?;
    Ok(stairs
        .iter()
        .map(|st| {
            let pts = st.points(2);
            let mut piece = AffinePiece::zero(scheme);
            piece.constant = scheme.a(0, 0) * scheme.a(1, n);
            for (t, &dir) in st.moves.iter().enumerate() {
                let (p, q) = (&pts[t + 1], &pts[t]);
                if dir == 0 {
                    add_difference(&mut piece, scheme, 0, scheme.a(1, n - p[1]), p[0], q[0]);
                } else {
                    let w = scheme.a(0, p[0]);
                    piece.constant = piece.constant + w * (scheme.a(1, n - p[1]) - scheme.a(1, n - q[1]));
                    add_difference(&mut piece, scheme, 1, w, n - q[1], n - p[1]);
                }
            }
            piece
        })
        .collect())
}

/// All grid points `p` with `p_i in 0..=n_i`, last dimension fastest.
pub fn grid_points<T: Scalar>(scheme: &DiscretizationScheme<T>) -> Result<Vec<Vec<usize>>, EnvelopeError> {
    let points: usize = (0..scheme.dims()).map(|i| scheme.n(i) + 1).product();
    if points > MAX_GRID_POINTS {
        return Err(EnvelopeError::GridTooLarge { points });
    }
    let mut out = vec![Vec::new()];
    for i in 0..scheme.dims() {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..=scheme.n(i)).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    Ok(out)
}

/// Pairwise lattice check `phi(p v q) + phi(p ^ q) >= phi(p) + phi(q) - tol`.
pub fn is_supermodular<T: Scalar>(
    scheme: &DiscretizationScheme<T>,
    phi: impl Fn(&[usize]) -> T,
    tol: T,
) -> Result<bool, EnvelopeError> {
    let pts = grid_points(scheme)?;
    for (k, p) in pts.iter().enumerate() {
        for q in &pts[k + 1..] {
            let join: Vec<usize> = p.iter().zip(q).map(|(a, b)| *a.max(b)).collect();
            let meet: Vec<usize> = p.iter().zip(q).map(|(a, b)| *a.min(b)).collect();
            if phi(&join) + phi(&meet) < phi(p) + phi(q) - tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Exact envelope value at `s` by the LP over convex weights of the Q
/// vertices in their raw coordinates.
pub fn hull_oracle_value(
    s: &[Vec<f64>],
    scheme: &DiscretizationScheme<f64>,
    phi: impl Fn(&[usize]) -> f64,
    side: Side,
) -> Result<f64, EnvelopeError> {
    let pts = grid_points(scheme)?;
    let sense = match side {
        Side::Concave => ObjSense::Maximize,
        Side::Convex => ObjSense::Minimize,
    };
    let mut model = ModelIR::new(sense);
    let weights: Vec<VarId> = (0..pts.len()).map(|k| model.add_var(format!("l{k}"), 0.0, f64::INFINITY)).collect();
    let coords: Vec<Vec<Vec<f64>>> = pts.iter().map(|p| vertex_point(scheme, p)).collect();
    model.add_row("convex", weights.iter().map(|&w| (w, 1.0)), Cmp::Eq, 1.0);
    for i in 0..scheme.dims() {
        for j in 1..=scheme.n(i) {
            model.add_row(
                format!("s_{i}_{j}"),
                weights.iter().zip(&coords).map(|(&w, c)| (w, c[i][j])),
                Cmp::Eq,
                s[i][j],
            );
        }
    }
    model.set_objective(sense, weights.iter().zip(&pts).map(|(&w, p)| (w, phi(p))));
    let r = simplex_solve(&model);
    match r.status {
        SolveStatus::Optimal => Ok(r.objective.unwrap()),
        SolveStatus::Infeasible => Err(EnvelopeError::OutsideQ { dim: 0 }),
        st => Err(EnvelopeError::Oracle(st)),
    }
}

/// A multilinear monomial `coeff * prod_{i in dims} f_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultilinearTerm {
    pub dims: Vec<usize>,
    pub coeff: f64,
}

/// Value of `sum_k terms[k]` at the breakpoints selected by grid point `p`.
pub fn multilinear_value(scheme: &DiscretizationScheme<f64>, terms: &[MultilinearTerm], p: &[usize]) -> f64 {
    terms
        .iter()
        .map(|t| t.coeff * t.dims.iter().map(|&i| scheme.a(i, p[i])).product::<f64>())
        .sum()
}

/// How the weight variables of a vertex-grid hull tie back to the model.
pub enum HullLink<'a> {
    /// `s_ij = sum_j' v_ij'[j] * (weight of p_i = j')` over `s[i][j]`, `j >= 1`.
    S(&'a [Vec<VarId>]),
    /// `z_ij = sum_{p: p_i >= j} w_p` over `z[i][j - 1]`.
    Z(&'a [Vec<VarId>]),
}

/// Adds grid weights `w_p >= 0`, `sum w = 1`, the link rows and one row
/// `out_k = sum_p values_k(p) w_p` per output. Returns the weights.
pub fn add_vertex_hull(
    model: &mut ModelIR,
    scheme: &DiscretizationScheme<f64>,
    link: HullLink<'_>,
    outputs: &[(VarId, &dyn Fn(&[usize]) -> f64)],
    prefix: &str,
) -> Result<Vec<VarId>, EnvelopeError> {
    let pts = grid_points(scheme)?;
    let w: Vec<VarId> = pts
        .iter()
        .map(|p| {
            let tag: Vec<String> = p.iter().map(|j| j.to_string()).collect();
            model.add_var(format!("{prefix}w_{}", tag.join("_")), 0.0, f64::INFINITY)
        })
        .collect();
    model.add_row(format!("{prefix}wsum"), w.iter().map(|&v| (v, 1.0)), Cmp::Eq, 1.0);
    for i in 0..scheme.dims() {
        let verts = q_vertices(scheme, i);
        for j in 1..=scheme.n(i) {
            let (target, terms): (VarId, Vec<(VarId, f64)>) = match &link {
                HullLink::S(s) => (
                    s[i][j],
                    w.iter().zip(&pts).map(|(&v, p)| (v, verts[p[i]][j])).collect(),
                ),
                HullLink::Z(z) => (
                    z[i][j - 1],
                    w.iter().zip(&pts).filter(|(_, p)| p[i] >= j).map(|(&v, _)| (v, 1.0)).collect(),
                ),
            };
            model.add_row(
                format!("{prefix}wlink_{i}_{j}"),
                std::iter::once((target, -1.0)).chain(terms),
                Cmp::Eq,
                0.0,
            );
        }
    }
    for (k, (out, values)) in outputs.iter().enumerate() {
        model.add_row(
            format!("{prefix}wval_{k}"),
            std::iter::once((*out, -1.0)).chain(w.iter().zip(&pts).map(|(&v, p)| (v, values(p)))),
            Cmp::Eq,
            0.0,
        );
    }
    Ok(w)
}

/// A standalone hull block for one or more multilinear functions.
#[derive(Clone, Debug)]
pub struct RltBlock {
    pub model: ModelIR,
    /// `s[i][j]` for `j = 0..=n_i` (`s_i0` fixed at `a_i0`).
    pub s: Vec<Vec<VarId>>,
    pub phi: Vec<VarId>,
    pub w: Vec<VarId>,
}

/// Vertex-grid hull of the graph of a vector of multilinear functions of the
/// inner functions over Q, with shared s variables.
pub fn rlt_multilinear_hull(
    scheme: &DiscretizationScheme<f64>,
    functions: &[Vec<MultilinearTerm>],
) -> Result<RltBlock, EnvelopeError> {
    let mut model = ModelIR::new(ObjSense::Maximize);
    let s: Vec<Vec<VarId>> = (0..scheme.dims())
        .map(|i| {
            (0..=scheme.n(i))
                .map(|j| {
                    let (lo, hi) = if j == 0 {
                        (scheme.a(i, 0), scheme.a(i, 0))
                    } else {
                        (scheme.a(i, 0), scheme.a(i, j))
                    };
                    model.add_var(format!("s_{i}_{j}"), lo, hi)
                })
                .collect()
        })
        .collect();
    let phi: Vec<VarId> = (0..functions.len())
        .map(|k| model.add_var(format!("phi_{k}"), f64::NEG_INFINITY, f64::INFINITY))
        .collect();
    let closures: Vec<Box<dyn Fn(&[usize]) -> f64 + '_>> = functions
        .iter()
        .map(|terms| Box::new(move |p: &[usize]| multilinear_value(scheme, terms, p)) as Box<dyn Fn(&[usize]) -> f64>)
        .collect();
    let outputs: Vec<(VarId, &dyn Fn(&[usize]) -> f64)> =
        phi.iter().copied().zip(closures.iter().map(|c| c.as_ref())).collect();
    let w = add_vertex_hull(&mut model, scheme, HullLink::S(&s), &outputs, "")?;
    Ok(RltBlock { model, s, phi, w })
}

/// Values at `a_j` of the upper concave envelope of the points `(a_j, u_j)`.
pub fn discrete_concave_envelope<T: Scalar>(a: &[T], u: &[T]) -> Vec<T> {
    let mut hull: Vec<usize> = Vec::new();
    for k in 0..a.len() {
        while hull.len() >= 2 {
            let (p, q) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // Drop q when it lies on or below the chord from p to k.
            let cross = (a[q] - a[p]) * (u[k] - u[p]) - (u[q] - u[p]) * (a[k] - a[p]);
            if cross >= T::zero() {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    let mut out = Vec::with_capacity(a.len());
    let mut seg = 0;
    for k in 0..a.len() {
        while seg + 1 < hull.len() && hull[seg + 1] < k {
            seg += 1;
        }
        let (p, q) = (hull[seg], hull[(seg + 1).min(hull.len() - 1)]);
        if p == k || p == q {
            out.push(u[p]);
        } else if q == k {
            out.push(u[q]);
        } else {
            out.push(u[p] + (u[q] - u[p]) * (a[k] - a[p]) / (a[q] - a[p]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Exact;

    fn product(scheme: &DiscretizationScheme<f64>) -> impl Fn(&[usize]) -> f64 + '_ {
        move |p: &[usize]| (0..scheme.dims()).map(|i| scheme.a(i, p[i])).product()
    }

    fn scheme2(a: &[f64]) -> DiscretizationScheme<f64> {
        DiscretizationScheme::undiscretized(vec![a.to_vec(), a.to_vec()]).unwrap()
    }

    #[test]
    fn staircase_counts() {
        assert_eq!(enumerate_staircases(2, 1).unwrap().len(), 2);
        assert_eq!(enumerate_staircases(2, 2).unwrap().len(), 6);
        assert_eq!(enumerate_staircases(3, 1).unwrap().len(), 6);
        assert_eq!(enumerate_staircases(2, 3).unwrap().len(), 20);
        assert_eq!(enumerate_staircases(2, 7), Err(EnvelopeError::TooManyMoves { moves: 14 }));
        let first = &enumerate_staircases(2, 1).unwrap()[0];
        assert_eq!(first.moves, vec![0, 1]);
    }

    #[test]
    fn unit_box_piece_is_mccormick() {
        let s = scheme2(&[0.0, 1.0]);
        let st = Staircase { moves: vec![0, 1] };
        let piece = interpolate_staircase(&st, &s, product(&s)).unwrap();
        assert_eq!(piece.constant, 0.0);
        assert_eq!(piece.coeffs, vec![vec![0.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn constant_function_gives_constant_pieces() {
        let s = DiscretizationScheme::undiscretized(vec![vec![0.0, 1.0, 3.0], vec![-1.0, 2.0]]).unwrap();
        for p in concave_pieces(&s, |_| 2.5f64).unwrap() {
            assert!((p.constant - 2.5).abs() < 1e-12);
            assert!(p.coeffs.iter().flatten().all(|c| c.abs() < 1e-12));
        }
    }

    #[test]
    fn closed_form_matches_elimination_exactly() {
        let a: Vec<Exact> = [0, 3, 4].iter().map(|&v| Exact::from(v)).collect();
        let b: Vec<Exact> = [1, 2, 5].iter().map(|&v| Exact::from(v)).collect();
        let s = DiscretizationScheme::undiscretized(vec![a, b]).unwrap();
        let phi = |p: &[usize]| s.a(0, p[0]) * s.a(1, p[1]) + s.a(0, p[0]);
        for st in enumerate_staircases(2, 2).unwrap() {
            assert_eq!(
                interpolate_staircase(&st, &s, phi).unwrap(),
                interpolate_by_elimination(&st, &s, phi).unwrap()
            );
        }
    }

    #[test]
    fn example_lambda_lists() {
        let s = scheme2(&[0.0, 3.0, 4.0]);
        let phi = product(&s);
        let mut concave: Vec<Vec<f64>> = enumerate_staircases(2, 2)
            .unwrap()
            .iter()
            .map(|st| {
                let l = staircase_chain_piece(st, &s, &phi).lambda_coefficients();
                vec![l[0][1], l[0][2], l[1][1], l[1][2]]
            })
            .collect();
        concave.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected = vec![
            vec![0.0, 0.0, 12.0, 16.0],
            vec![0.0, 3.0, 9.0, 13.0],
            vec![0.0, 4.0, 9.0, 12.0],
            vec![12.0, 16.0, 0.0, 0.0],
            vec![9.0, 13.0, 0.0, 3.0],
            vec![9.0, 12.0, 0.0, 4.0],
        ];
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(concave, expected);

        // Convex side in the form constant + sum coef * lambda_ik.
        let origin = vertex_point(&s, &[0, 0]);
        let mut convex: Vec<Vec<f64>> = convex_pieces(&s, &phi)
            .unwrap()
            .iter()
            .map(|piece| {
                let base = piece.evaluate(&origin);
                let mut row: Vec<f64> = [[1, 0], [2, 0], [0, 1], [0, 2]]
                    .iter()
                    .map(|p| piece.evaluate(&vertex_point(&s, p)) - base)
                    .collect();
                row.push(base);
                row.iter().map(|v| (v * 1e9).round() / 1e9).collect()
            })
            .collect();
        convex.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected = vec![
            vec![12.0, 16.0, 12.0, 16.0, -16.0],
            vec![9.0, 9.0, 9.0, 9.0, -9.0],
            vec![12.0, 12.0, 9.0, 12.0, -12.0],
            vec![9.0, 12.0, 12.0, 12.0, -12.0],
            vec![12.0, 15.0, 12.0, 15.0, -15.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(convex, expected);
    }

    #[test]
    fn bilinear_formulas_at_n1_are_mccormick() {
        let s = DiscretizationScheme::undiscretized(vec![vec![1.0, 3.0], vec![-2.0, 4.0]]).unwrap();
        let conc = bilinear_concave_terms(&s).unwrap();
        assert_eq!(conc.len(), 2);
        // f2L f1 + f1U f2 - f1U f2L and f2U f1 + f1L f2 - f1L f2U.
        assert_eq!(conc[0].coeffs, vec![vec![0.0, -2.0], vec![0.0, 3.0]]);
        assert_eq!(conc[0].constant, 6.0);
        assert_eq!(conc[1].coeffs, vec![vec![0.0, 4.0], vec![0.0, 1.0]]);
        assert_eq!(conc[1].constant, -4.0);
        let conv = bilinear_convex_terms(&s).unwrap();
        assert_eq!(conv[0].coeffs, vec![vec![0.0, 4.0], vec![0.0, 3.0]]);
        assert_eq!(conv[0].constant, -12.0);
        assert_eq!(conv[1].coeffs, vec![vec![0.0, -2.0], vec![0.0, 1.0]]);
        assert_eq!(conv[1].constant, 2.0);
    }

    #[test]
    fn bilinear_formulas_match_generic_pieces() {
        let s = DiscretizationScheme::undiscretized(vec![vec![-1.0, 0.5, 2.0, 2.5], vec![0.0, 1.0, 4.0]]).unwrap();
        let phi = product(&s);
        let generic = concave_pieces(&s, &phi).unwrap();
        for (a, b) in bilinear_concave_terms(&s).unwrap().iter().zip(&generic) {
            assert!(a.max_abs_difference(b) < 1e-12);
        }
        let generic = convex_pieces(&s, &phi).unwrap();
        for (a, b) in bilinear_convex_terms(&s).unwrap().iter().zip(&generic) {
            assert!(a.max_abs_difference(b) < 1e-12);
        }
    }

    #[test]
    fn separation_on_the_unit_box() {
        let s = scheme2(&[0.0, 1.0]);
        let point = vec![vec![0.0, 0.8], vec![0.0, 0.3]];
        let piece = separate_supermodular(&point, &s, product(&s)).unwrap();
        assert_eq!(staircase_through(&[vec![1.0, 0.8], vec![1.0, 0.3]]).moves, vec![0, 1]);
        assert_eq!(piece.coeffs, vec![vec![0.0, 0.0], vec![0.0, 1.0]]);
        let best = concave_pieces(&s, product(&s))
            .unwrap()
            .iter()
            .map(|p| p.evaluate(&point))
            .fold(f64::INFINITY, f64::min);
        assert!((piece.evaluate(&point) - best).abs() < 1e-15);
    }

    #[test]
    fn separation_rejects_points_outside_q() {
        let s = scheme2(&[0.0, 1.0, 2.0]);
        let bad = vec![vec![0.0, 0.2, 1.5], vec![0.0, 1.0, 2.0]];
        assert_eq!(
            separate_supermodular(&bad, &s, product(&s)).unwrap_err(),
            EnvelopeError::OutsideQ { dim: 0 }
        );
    }

    #[test]
    fn oracle_at_vertices_and_midpoints() {
        let s = scheme2(&[0.0, 3.0, 4.0]);
        let phi = product(&s);
        for p in grid_points(&s).unwrap() {
            let v = vertex_point(&s, &p);
            for side in [Side::Concave, Side::Convex] {
                assert!((hull_oracle_value(&v, &s, &phi, side).unwrap() - phi(&p)).abs() < 1e-9);
            }
        }
        let mid = vec![vec![0.0, 3.0, 3.5], vec![0.0, 3.0, 3.5]];
        let oracle = hull_oracle_value(&mid, &s, &phi, Side::Concave).unwrap();
        let stair = envelope_value(&mid, &s, &phi, Side::Concave).unwrap();
        assert!((oracle - stair).abs() < 1e-9);
    }

    #[test]
    fn rlt_one_dimension_interpolates() {
        let s = DiscretizationScheme::undiscretized(vec![vec![1.0, 2.0]]).unwrap();
        let mut block = rlt_multilinear_hull(&s, &[vec![MultilinearTerm { dims: vec![0], coeff: 3.0 }]]).unwrap();
        block.model.variables[block.s[0][1].0].lower = 1.25;
        block.model.variables[block.s[0][1].0].upper = 1.25;
        block.model.set_objective(ObjSense::Maximize, [(block.phi[0], 1.0)]);
        let r = simplex_solve(&block.model);
        assert!((r.objective.unwrap() - 3.75).abs() < 1e-9);
        assert!((r.values[block.w[1].0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn discrete_envelope_examples() {
        assert_eq!(discrete_concave_envelope(&[0.0, 3.0, 4.0], &[0.0, 2.0, 3.5]), vec![0.0, 2.625, 3.5]);
        assert_eq!(discrete_concave_envelope(&[0.0, 3.0, 4.0], &[0.0, 3.0, 3.5]), vec![0.0, 3.0, 3.5]);
        let a = [1.0, 2.0, 3.0, 4.0];
        let u: Vec<f64> = a.iter().map(|&v: &f64| v.min(2.5)).collect();
        assert_eq!(discrete_concave_envelope(&a, &u), u);
    }

    #[test]
    fn supermodularity_checker() {
        let s = scheme2(&[0.0, 1.0, 2.0]);
        assert!(is_supermodular(&s, product(&s), 1e-12).unwrap());
        let neg = |p: &[usize]| -(p[0] as f64) * (p[1] as f64);
        assert!(!is_supermodular(&s, neg, 1e-12).unwrap());
    }
}
