//! Splitting preconditions across `N` and eliminating one program copy by substitution.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::ast::{Bound, Expr, Formula, Name, Rel};
use crate::logic::ranges::{simplify_in, RangeCtx};
use crate::logic::simplify::simplify;
use crate::logic::wp::{avoid_capture, rewrite_reads};

/// `phi(N) <=> phi'(N) && delta(N)` where `phi'` constrains only what a run
/// at `N - 1` can see: each conjunct `forall i in [0, N) :: rho` becomes
/// `forall i in [0, N - 1) :: rho` plus the slab `i = N - 1`. Other conjuncts
/// are kept whole in `phi'`.
pub fn formula_diff(phi: &Formula) -> (Formula, Formula) {
    let mut keep = Vec::new();
    let mut delta = Vec::new();
    for c in phi.conjuncts() {
        match &c {
            Formula::Forall(bs, body)
                if bs.iter().all(|b| b.lo == Expr::Int(0) && b.hi == Expr::N) =>
            {
                let truncated: Vec<Bound> = bs
                    .iter()
                    .map(|b| Bound {
                        var: b.var.clone(),
                        lo: Expr::Int(0),
                        hi: Expr::n_minus(1),
                    })
                    .collect();
                keep.push(Formula::Forall(truncated, body.clone()));
                // Slab k: coordinate k is N - 1, earlier ones below it, later ones anywhere.
                for k in 0..bs.len() {
                    let mut rest = Vec::new();
                    for (m, b) in bs.iter().enumerate() {
                        if m < k {
                            rest.push(Bound {
                                var: b.var.clone(),
                                lo: Expr::Int(0),
                                hi: Expr::n_minus(1),
                            });
                        } else if m > k {
                            rest.push(b.clone());
                        }
                    }
                    let slab = body.subst_var(&bs[k].var, &Expr::n_minus(1));
                    delta.push(simplify(&Formula::forall(rest, slab)));
                }
            }
            _ => keep.push(c.clone()),
        }
    }
    (Formula::and(keep), simplify(&Formula::and(delta)))
}

/// A defining equation used for elimination.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Equation {
    /// `var == value`.
    Scalar { var: Name, value: Expr },
    /// `forall vars in region :: guard ==> array[vars] == value`.
    Array {
        array: Name,
        vars: Vec<Name>,
        region: Vec<(Expr, Expr)>,
        guard: Formula,
        value: Expr,
    },
    /// `array[index] == value`.
    Cell {
        array: Name,
        index: Vec<Expr>,
        value: Expr,
    },
}

/// Eliminates the symbols in `elim` from `f` by substituting the equations.
/// Returns the rewritten formula and the symbols that could not be removed.
pub fn eliminate(
    f: &Formula,
    eqs: &[Equation],
    elim: &BTreeSet<Name>,
    n_min: i128,
) -> (Formula, BTreeSet<Name>) {
    let mut scalars = BTreeMap::new();
    for e in eqs {
        if let Equation::Scalar { var, value } = e {
            if elim.contains(var) {
                scalars.insert(var.clone(), value.clone());
            }
        }
    }
    let mut g = f.subst_vars(&scalars);
    let mut arrays: BTreeSet<Name> = BTreeSet::new();
    let mut present = BTreeMap::new();
    g.arrays(&mut present);
    arrays.extend(present.keys().filter(|a| elim.contains(*a)).cloned());
    for a in arrays {
        let relevant: Vec<&Equation> = eqs
            .iter()
            .filter(|e| matches!(e, Equation::Array { array, .. } | Equation::Cell { array, .. } if *array == a))
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let mut avoid = BTreeSet::new();
        for e in &relevant {
            if let Equation::Array { value, guard, .. } = e {
                value.names(&mut avoid);
                guard.free_names(&mut avoid);
            }
            if let Equation::Cell { value, index, .. } = e {
                value.names(&mut avoid);
                index.iter().for_each(|i| i.names(&mut avoid));
            }
        }
        g = avoid_capture(&g, &avoid);
        let mut ctx = RangeCtx::new(n_min);
        g = rewrite_reads(&g, &a, &mut ctx, &mut |t, ctx| {
            for e in &relevant {
                match e {
                    Equation::Array {
                        vars,
                        region,
                        guard,
                        value,
                        ..
                    } => {
                        let inside = t
                            .iter()
                            .zip(region)
                            .all(|(ti, (lo, hi))| ctx.within(ti, lo, hi));
                        if !inside {
                            continue;
                        }
                        let map: BTreeMap<Name, Expr> =
                            vars.iter().cloned().zip(t.iter().cloned()).collect();
                        if simplify_in(&guard.subst_vars(&map), ctx) != Formula::Bool(true) {
                            continue;
                        }
                        return value.subst_vars(&map);
                    }
                    Equation::Cell { index, value, .. } => {
                        if t.iter()
                            .zip(index)
                            .all(|(ti, ii)| ctx.decide(Rel::Eq, ti, ii) == Some(true))
                        {
                            return value.clone();
                        }
                    }
                    Equation::Scalar { .. } => {}
                }
            }
            Expr::Read(a.clone(), t.to_vec())
        });
    }
    let g = simplify_in(&g, &RangeCtx::new(n_min));
    let mut left = BTreeSet::new();
    g.free_names(&mut left);
    let residual = left.intersection(elim).cloned().collect();
    (g, residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_formula;

    #[test]
    fn diff_splits_last_index() {
        let phi = parse_formula("forall i in [0, N) :: A[i] == 1").unwrap();
        let (p, d) = formula_diff(&phi);
        assert_eq!(p.to_string(), "(forall i in [0, N - 1) :: A[i] == 1)");
        assert_eq!(d.to_string(), "A[N - 1] == 1");
        let (p, d) = formula_diff(&parse_formula("x > 0").unwrap());
        assert_eq!(p.to_string(), "x > 0");
        assert_eq!(d, Formula::Bool(true));
    }

    #[test]
    fn diff_two_dimensions_covers_both_slabs() {
        let phi = parse_formula("forall i in [0, N), j in [0, N) :: A[i][j] == 0").unwrap();
        let (_, d) = formula_diff(&phi);
        assert_eq!(d.conjuncts().len(), 2);
    }

    #[test]
    fn eliminates_running_example() {
        // b[j] == j + (N-1)^3 over the smaller run, b'[t] - b[t] = 3N^2 - 3N + 1.
        let psi = parse_formula("forall j in [0, N - 1) :: b[j] == j + (N-1)*(N-1)*(N-1)").unwrap();
        let eqs = vec![Equation::Array {
            array: "b".into(),
            vars: vec!["t".into()],
            region: vec![(Expr::Int(0), Expr::n_minus(1))],
            guard: Formula::Bool(true),
            value: crate::frontend::parse_expr("b'[t] - (3*N*N - 3*N + 1)").unwrap(),
        }];
        let elim: BTreeSet<Name> = ["b".to_string()].into();
        let (g, left) = eliminate(&psi, &eqs, &elim, 2);
        assert!(left.is_empty());
        assert_eq!(
            g,
            simplify(&parse_formula("forall j in [0, N - 1) :: b'[j] == j + N*N*N").unwrap())
        );
    }
}
