//! Vertex enumeration of small polytopes by active-set selection.
use thiserror::Error;

use super::{simplex_solve, Cmp, ModelIR, ObjSense, SolveStatus, VarId};

pub const MAX_VERTEX_DIMENSION: usize = 14;
const TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum VertexError {
    #[error("polytope has dimension {0}, above the enumeration limit {MAX_VERTEX_DIMENSION}")]
    DimensionTooLarge(usize),
}

/// Reduced row echelon form of `[a | b]`; returns pivot columns.
fn rref(a: &mut [Vec<f64>], b: &mut [f64], cols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == a.len() {
            break;
        }
        let p = (r..a.len())
            .max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs()))
            .unwrap();
        if a[p][c].abs() <= TOL {
            continue;
        }
        a.swap(p, r);
        b.swap(p, r);
        let d = a[r][c];
        for v in a[r].iter_mut() {
            *v /= d;
        }
        b[r] /= d;
        for i in 0..a.len() {
            if i != r && a[i][c] != 0.0 {
                let f = a[i][c];
                for k in 0..cols {
                    a[i][k] -= f * a[r][k];
                }
                b[i] -= f * b[r];
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// Solves a square system by elimination; `None` when singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let piv = rref(&mut a, &mut b, n);
    (piv.len() == n).then_some(b)
}

/// All vertices of the continuous relaxation of `model`, deduplicated and
/// sorted lexicographically.
pub fn enumerate_vertices(model: &ModelIR) -> Result<Vec<Vec<f64>>, VertexError> {
    let n = model.num_vars();
    let mut eq_a: Vec<Vec<f64>> = Vec::new();
    let mut eq_b: Vec<f64> = Vec::new();
    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    let dense = |coeffs: &[(VarId, f64)]| {
        let mut row = vec![0.0; n];
        for (v, c) in coeffs {
            row[v.0] += c;
        }
        row
    };
    for row in &model.constraints {
        let r = dense(&row.coeffs);
        match row.cmp {
            Cmp::Eq => {
                eq_a.push(r);
                eq_b.push(row.rhs);
            }
            Cmp::Le => ineq.push((r, row.rhs)),
            Cmp::Ge => ineq.push((r.iter().map(|v| -v).collect(), -row.rhs)),
        }
    }
    for (j, v) in model.variables.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        if v.lower == v.upper {
            eq_a.push(e);
            eq_b.push(v.lower);
            continue;
        }
        if v.upper.is_finite() {
            ineq.push((e.clone(), v.upper));
        }
        if v.lower.is_finite() {
            ineq.push((e.iter().map(|x| -x).collect(), -v.lower));
        }
    }
    let pivots = rref(&mut eq_a, &mut eq_b, n);
    if eq_a
        .iter()
        .zip(&eq_b)
        .skip(pivots.len())
        .any(|(_, &b)| b.abs() > TOL)
    {
        return Ok(Vec::new());
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let k = free.len();
    if k > MAX_VERTEX_DIMENSION {
        return Err(VertexError::DimensionTooLarge(k));
    }
    // x = x0 + N y with y the free coordinates.
    let mut x0 = vec![0.0; n];
    let mut basis = vec![vec![0.0; k]; n];
    for (r, &p) in pivots.iter().enumerate() {
        x0[p] = eq_b[r];
        for (t, &f) in free.iter().enumerate() {
            basis[p][t] = -eq_a[r][f];
        }
    }
    for (t, &f) in free.iter().enumerate() {
        basis[f][t] = 1.0;
    }
    let mut reduced: Vec<(Vec<f64>, f64)> = Vec::new();
    for (g, h) in &ineq {
        let gy: Vec<f64> = (0..k).map(|t| (0..n).map(|j| g[j] * basis[j][t]).sum()).collect();
        let h0 = h - g.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>();
        let scale = gy.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale <= TOL {
            if h0 < -TOL {
                return Ok(Vec::new());
            }
            continue;
        }
        let row: Vec<f64> = gy.iter().map(|v| v / scale).collect();
        let rhs = h0 / scale;
        if let Some(existing) = reduced
            .iter_mut()
            .find(|(r, _)| r.iter().zip(&row).all(|(a, b)| (a - b).abs() <= TOL))
        {
            existing.1 = existing.1.min(rhs);
        } else {
            reduced.push((row, rhs));
        }
    }
    let reduced = drop_redundant(reduced, k);
    let mut found: Vec<Vec<f64>> = Vec::new();
    if k == 0 {
        if reduced.iter().all(|(_, h)| *h >= -TOL) {
            found.push(x0);
        }
        return Ok(found);
    }
    let mut chosen = Vec::with_capacity(k);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(k);
    select(&reduced, k, 0, &mut chosen, &mut ortho, &mut |sel| {
        let a: Vec<Vec<f64>> = sel.iter().map(|&i| reduced[i].0.clone()).collect();
        let b: Vec<f64> = sel.iter().map(|&i| reduced[i].1).collect();
        let Some(y) = solve_square(a, b) else { return };
        let feasible = reduced
            .iter()
            .all(|(g, h)| g.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() <= h + TOL);
        if !feasible {
            return;
        }
        let x: Vec<f64> = (0..n)
            .map(|j| x0[j] + (0..k).map(|t| basis[j][t] * y[t]).sum::<f64>())
            .collect();
        if !found
            .iter()
            .any(|v| v.iter().zip(&x).all(|(a, b)| (a - b).abs() <= TOL))
        {
            found.push(x);
        }
    });
    found.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(found)
}

fn select(
    rows: &[(Vec<f64>, f64)],
    k: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    ortho: &mut Vec<Vec<f64>>,
    visit: &mut impl FnMut(&[usize]),
) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    let need = k - chosen.len();
    for i in start..rows.len() {
        if rows.len() - i < need {
            return;
        }
        let mut r = rows[i].0.clone();
        for q in ortho.iter() {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            for (x, y) in r.iter_mut().zip(q) {
                *x -= dot * y;
            }
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-7 {
            continue;
        }
        r.iter_mut().for_each(|v| *v /= norm);
        chosen.push(i);
        ortho.push(r);
        select(rows, k, i + 1, chosen, ortho, visit);
        chosen.pop();
        ortho.pop();
    }
}

/// Removes inequalities implied by the others, using one LP per row.
fn drop_redundant(rows: Vec<(Vec<f64>, f64)>, k: usize) -> Vec<(Vec<f64>, f64)> {
    if rows.len() <= k + 1 {
        return rows;
    }
    let mut keep: Vec<bool> = vec![true; rows.len()];
    for i in 0..rows.len() {
        let mut m = ModelIR::new(ObjSense::Maximize);
        let ys: Vec<VarId> = (0..k)
            .map(|t| m.add_var(format!("y{t}"), f64::NEG_INFINITY, f64::INFINITY))
            .collect();
        for (j, (g, h)) in rows.iter().enumerate() {
            if j != i && keep[j] {
                m.add_row("", ys.iter().copied().zip(g.iter().copied()), Cmp::Le, *h);
            }
        }
        // Keep the row bounded so the test LP cannot run away.
        m.add_row("", ys.iter().copied().zip(rows[i].0.iter().copied()), Cmp::Le, rows[i].1 + 1.0);
        m.set_objective(ObjSense::Maximize, ys.iter().copied().zip(rows[i].0.iter().copied()));
        let r = simplex_solve(&m);
        if r.status == SolveStatus::Optimal && r.objective.unwrap() <= rows[i].1 + TOL {
            keep[i] = false;
        }
    }
    rows.into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_polytope() {
        let mut m = ModelIR::new(ObjSense::Minimize);
        let z0 = m.add_var("z0", 1.0, 1.0);
        let z1 = m.add_var("z1", 0.0, 1.0);
        let z2 = m.add_var("z2", 0.0, 1.0);
        m.add_row("a", [(z0, 1.0), (z1, -1.0)], Cmp::Ge, 0.0);
        m.add_row("b", [(z1, 1.0), (z2, -1.0)], Cmp::Ge, 0.0);
        let v = enumerate_vertices(&m).unwrap();
        assert_eq!(
            v,
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 1.0]]
        );
    }

    #[test]
    fn unit_square() {
        let mut m = ModelIR::new(ObjSense::Minimize);
        m.add_var("x", 0.0, 1.0);
        m.add_var("y", 0.0, 1.0);
        assert_eq!(enumerate_vertices(&m).unwrap().len(), 4);
    }

    #[test]
    fn dimension_guard() {
        let mut m = ModelIR::new(ObjSense::Minimize);
        for i in 0..15 {
            m.add_var(format!("x{i}"), 0.0, 1.0);
        }
        assert_eq!(enumerate_vertices(&m), Err(VertexError::DimensionTooLarge(15)));
    }
}
