use proptest::prelude::*;

use relaxkit::bench::{generate_instance, upper_bound};
use relaxkit::envelopes::discrete_concave_envelope;
use relaxkit::estimators::{g_map, NodeRole, product_inequalities, propagate, LinExpr, ProductOperand, PropagationConfig};
use relaxkit::expr::{ExprNode, VariableBox};
use relaxkit::milp::{read_lp, simplex_solve, write_lp, ModelIR, ObjSense, VarId};
use relaxkit::relaxations::{relax, RelaxationVariant, SolveOptions, VariantTag};
use relaxkit::simplotope::{in_chain, project_to_chain, s_from_z, z_from_s};
use relaxkit::{Ledger, Scheme};

fn ordered(lo: f64, hi: f64) -> impl Strategy<Value = (f64, f64)> {
    (lo..hi, 0.1f64..(hi - lo)).prop_map(|(a, w)| (a, a + w))
}

/// One dimension with random steps between breakpoints and a random subset
/// of interior breakpoints carrying binaries.
fn scheme_strategy(max_n: usize) -> impl Strategy<Value = Scheme> {
    (1..=max_n)
        .prop_flat_map(|n| {
            (
                -3.0f64..3.0,
                proptest::collection::vec(0.05f64..2.0, n),
                proptest::collection::vec(any::<bool>(), n.saturating_sub(1)),
            )
        })
        .prop_map(|(lo, steps, pick)| {
            let mut a = vec![lo];
            for s in &steps {
                a.push(a.last().unwrap() + s);
            }
            let n = steps.len();
            let mut tau = vec![0];
            tau.extend((1..n).filter(|&j| pick[j - 1]));
            tau.push(n);
            Scheme::new(vec![a], vec![tau]).unwrap()
        })
}

fn operand(value: VarId, s: VarId, lower: f64, upper: f64, a: f64) -> ProductOperand {
    ProductOperand { value: LinExpr::var(value), s: LinExpr::var(s), lower, upper, a }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn twelve_product_rows_are_valid(
        (l1, u1) in ordered(-3.0, 3.0),
        (l2, u2) in ordered(-3.0, 3.0),
        t in proptest::collection::vec(0.0f64..=1.0, 6),
    ) {
        let mix = |l: f64, u: f64, k: f64| l + k * (u - l);
        let (f1, f2) = (mix(l1, u1, t[0]), mix(l2, u2, t[1]));
        let (a1, a2) = (mix(l1, u1, t[2]), mix(l2, u2, t[3]));
        // Any underestimator value below min(f, a) is admissible.
        let s1 = f1.min(a1) - t[4] * (u1 - l1);
        let s2 = f2.min(a2) - t[5] * (u2 - l2);
        let vars = [VarId(0), VarId(1), VarId(2), VarId(3)];
        let rows = product_inequalities(
            &operand(vars[0], vars[1], l1, u1, a1),
            &operand(vars[2], vars[3], l2, u2, a2),
        ).unwrap();
        let values = [f1, s1, f2, s2];
        let w = f1 * f2;
        for (k, e) in rows.lower.iter().enumerate() {
            prop_assert!(e.evaluate(&values) <= w + 1e-9, "lower row {}: {} > {}", k + 1, e.evaluate(&values), w);
        }
        for (k, e) in rows.upper.iter().enumerate() {
            prop_assert!(e.evaluate(&values) >= w - 1e-9, "upper row {}: {} < {}", k + 1, e.evaluate(&values), w);
        }
    }

    #[test]
    fn estimators_are_valid_and_sorted(
        e1 in 1u32..5, e2 in 1u32..4,
        (l1, u1) in ordered(0.0, 3.0),
        (l2, u2) in ordered(0.0, 3.0),
        cuts in 2usize..6,
        t in proptest::collection::vec(0.0f64..=1.0, 2),
    ) {
        let mut tree = ExprNode::product(
            ExprNode::power(ExprNode::var(0), e1),
            ExprNode::power(ExprNode::var(1), e2),
        );
        let domain = VariableBox::new(vec![l1, l2], vec![u1, u2]).unwrap();
        tree.propagate_bounds(&domain);
        let mut m = ModelIR::new(ObjSense::Minimize);
        let x = vec![m.add_var("x0", l1, u1), m.add_var("x1", l2, u2)];
        let cfg = PropagationConfig { cut_points: cuts, ..Default::default() };
        let p = propagate(&tree, &x, &mut m, &cfg, "").unwrap();
        let point = [l1 + t[0] * (u1 - l1), l2 + t[1] * (u2 - l2)];
        let mut values = vec![0.0; m.num_vars()];
        values[x[0].0] = point[0];
        values[x[1].0] = point[1];
        let mut truth = vec![0.0; p.nodes.len()];
        for (k, node) in p.nodes.iter().enumerate() {
            truth[k] = match node.role {
                NodeRole::Variable(i) => point[i],
                NodeRole::Power(e) => truth[node.children[0]].powi(e as i32),
                NodeRole::Product(_) => truth[node.children[0]] * truth[node.children[1]],
                _ => node.value.evaluate(&values),
            };
            if let [(v, _)] = node.value.terms.as_slice() {
                values[v.0] = truth[k];
            }
        }
        for prod in &p.products {
            for chain in &prod.factors {
                let f = truth[chain.child];
                for j in 1..chain.n() {
                    if let Some(v) = chain.s_var(j) {
                        values[v.0] = f.min(chain.breakpoints[j]);
                    }
                }
            }
        }
        for node in &p.nodes {
            let truth = node.value.evaluate(&values);
            prop_assert!(node.rlx.windows(2).all(|w| w[0].bound <= w[1].bound));
            for tup in node.rlx.iter().chain(&node.cuts) {
                let v = tup.expr.evaluate(&values);
                if tup.underestimator {
                    prop_assert!(v <= truth + 1e-7 * truth.abs().max(1.0), "{v} > {truth}");
                    prop_assert!(v <= tup.bound + 1e-7 * tup.bound.abs().max(1.0));
                } else {
                    prop_assert!(v >= truth - 1e-7 * truth.abs().max(1.0), "{v} < {truth}");
                    prop_assert!(v >= tup.bound - 1e-7 * tup.bound.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn g_map_is_monotone_on_cells(
        scheme in scheme_strategy(5),
        raw in proptest::collection::vec(0.0f64..=1.0, 36),
        cell_pick in 0.0f64..1.0,
        zfrac in proptest::collection::vec(0.0f64..=1.0, 6),
    ) {
        let n = scheme.n(0);
        let l = scheme.cells_in(0);
        let (lo, hi) = (scheme.a(0, 0), scheme.a(0, n));
        // Prefix maxima over j, as the bounds of max_{j' <= j} u_j'.
        let mut cell_bound = vec![vec![vec![lo; l]]];
        for j in 1..=n {
            let prev = cell_bound[0][j - 1].clone();
            let row = (0..l).map(|c| prev[c].max(lo + raw[(j * l + c) % raw.len()] * (hi - lo))).collect();
            cell_bound[0].push(row);
        }
        let ledger = Ledger::from_cell_bounds(&scheme, &cell_bound);
        prop_assert!(ledger.validate(&scheme, 1e-9).is_ok());
        prop_assert!(ledger.check_cells(&scheme, 1e-9));
        let c = 1 + ((cell_pick * l as f64) as usize).min(l - 1);
        let tau = scheme.tau(0);
        let mut frac: Vec<f64> = zfrac[..tau[c] - tau[c - 1]].to_vec();
        frac.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let z: Vec<f64> = (0..=n)
            .map(|j| if j <= tau[c - 1] { 1.0 } else if j <= tau[c] { frac[j - tau[c - 1] - 1] } else { 0.0 })
            .collect();
        let delta: Vec<f64> = (1..l).map(|k| if k < c { 1.0 } else { 0.0 }).collect();
        let s = g_map(&scheme, &ledger, std::slice::from_ref(&z), std::slice::from_ref(&delta)).unwrap();
        prop_assert!(s[0].windows(2).all(|w| w[0] <= w[1] + 1e-9), "{:?}", s[0]);
        for j in 0..=n {
            let g = ledger.g_affine(&scheme, 0, j);
            prop_assert!(g.z.iter().all(|&(_, coef)| coef >= -1e-9));
        }
        let trivial = g_map(&scheme, &Ledger::trivial(&scheme), std::slice::from_ref(&z), &[delta]).unwrap();
        let direct = s_from_z(&scheme, 0, &z);
        prop_assert!(trivial[0].iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn chain_transform_round_trips(scheme in scheme_strategy(6), w in proptest::collection::vec(0.0f64..=1.0, 7)) {
        let n = scheme.n(0);
        let mut z: Vec<f64> = w[..n].to_vec();
        z.sort_by(|a, b| b.partial_cmp(a).unwrap());
        z.insert(0, 1.0);
        let back = z_from_s(&scheme, 0, &s_from_z(&scheme, 0, &z));
        prop_assert!(back.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-9));
        let projected = project_to_chain(&w[..=n]);
        prop_assert!(in_chain(&projected, 1e-12));
    }

    #[test]
    fn concave_envelope_majorizes(u in proptest::collection::vec(-5.0f64..5.0, 2..9), steps in proptest::collection::vec(0.1f64..2.0, 8)) {
        let mut a = vec![0.0];
        for s in &steps[..u.len() - 1] {
            a.push(a.last().unwrap() + s);
        }
        let hull = discrete_concave_envelope(&a, &u);
        prop_assert!(hull.iter().zip(&u).all(|(h, v)| *h >= v - 1e-9));
        prop_assert!((hull[0] - u[0]).abs() < 1e-9 && (hull[u.len() - 1] - u[u.len() - 1]).abs() < 1e-9);
        for k in 1..a.len() - 1 {
            let left = (hull[k] - hull[k - 1]) / (a[k] - a[k - 1]);
            let right = (hull[k + 1] - hull[k]) / (a[k + 1] - a[k]);
            prop_assert!(right <= left + 1e-7);
        }
    }

    #[test]
    fn lp_files_round_trip(c in proptest::collection::vec(-3.0f64..3.0, 3), b in proptest::collection::vec(0.5f64..4.0, 2)) {
        let mut m = ModelIR::new(ObjSense::Maximize);
        let v: Vec<VarId> = (0..3).map(|i| m.add_var(format!("x{i}"), 0.0, 5.0)).collect();
        m.add_row("r0", [(v[0], 1.0), (v[1], 2.0)], relaxkit::milp::Cmp::Le, b[0]);
        m.add_row("r1", [(v[1], 1.0), (v[2], -1.0)], relaxkit::milp::Cmp::Ge, -b[1]);
        m.set_objective(ObjSense::Maximize, v.iter().zip(&c).map(|(&x, &k)| (x, k)));
        let back = read_lp(&write_lp(&m)).unwrap();
        let (p, q) = (simplex_solve(&m), simplex_solve(&back));
        prop_assert_eq!(p.status, q.status);
        prop_assert!((p.objective.unwrap() - q.objective.unwrap()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn relaxation_bounds_are_valid(seed in 0u64..10_000, t in proptest::collection::vec(0.0f64..=1.0, 3 * 40)) {
        let inst = generate_instance(3, 4, 2, seed).unwrap();
        let problem = inst.to_problem();
        let up = upper_bound(&inst, 50).value;
        let feasible: Vec<Vec<f64>> = t
            .chunks(3)
            .map(|w| (0..3).map(|i| inst.lower[i] + w[i] * (inst.upper[i] - inst.lower[i])).collect())
            .filter(|x: &Vec<f64>| inst.max_violation(x) <= 0.0)
            .collect();
        let best = feasible.iter().map(|x| inst.objective(x)).fold(up, f64::min);
        for tag in [VariantTag::Mc, VariantTag::Cr, VariantTag::Crmip] {
            let v = relax(&problem, &RelaxationVariant::new(tag), &SolveOptions::default()).unwrap().bound.unwrap();
            prop_assert!(v <= best + 1e-6 * best.abs().max(1.0), "{tag}: {v} > {best}");
        }
    }
}
