//! Formula normalization: constant folding, polynomial comparisons, NNF negation.

use crate::ast::{Bound, Expr, Formula, Rel};
use crate::poly::{mono_degree, simplify_expr, Atom, IntPoly, Monomial};

pub fn simplify(f: &Formula) -> Formula {
    match f {
        Formula::Bool(_) => f.clone(),
        Formula::Cmp(r, a, b) => compare(*r, &IntPoly::from_expr(a), &IntPoly::from_expr(b)),
        Formula::Not(g) => negate(&simplify(g)),
        Formula::And(v) => {
            let mut out: Vec<Formula> = Vec::new();
            for g in v {
                match simplify(g) {
                    Formula::Bool(true) => {}
                    Formula::Bool(false) => return Formula::Bool(false),
                    Formula::And(inner) => {
                        for x in inner {
                            if !out.contains(&x) {
                                out.push(x)
                            }
                        }
                    }
                    x => {
                        if out.contains(&negate(&x)) {
                            return Formula::Bool(false);
                        }
                        if !out.contains(&x) {
                            out.push(x)
                        }
                    }
                }
            }
            Formula::and(out)
        }
        Formula::Or(v) => {
            let mut out: Vec<Formula> = Vec::new();
            for g in v {
                match simplify(g) {
                    Formula::Bool(false) => {}
                    Formula::Bool(true) => return Formula::Bool(true),
                    Formula::Or(inner) => {
                        for x in inner {
                            if !out.contains(&x) {
                                out.push(x)
                            }
                        }
                    }
                    x => {
                        if out.contains(&negate(&x)) {
                            return Formula::Bool(true);
                        }
                        if !out.contains(&x) {
                            out.push(x)
                        }
                    }
                }
            }
            Formula::or(out)
        }
        Formula::Implies(a, b) => {
            let a = simplify(a);
            let b = simplify(b);
            match (&a, &b) {
                (Formula::Bool(false), _) | (_, Formula::Bool(true)) => Formula::Bool(true),
                (Formula::Bool(true), _) => b,
                (_, Formula::Bool(false)) => negate(&a),
                _ if a == b => Formula::Bool(true),
                _ => Formula::Implies(Box::new(a), Box::new(b)),
            }
        }
        Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
            let is_all = matches!(f, Formula::Forall(..));
            let bs: Vec<Bound> = bs
                .iter()
                .map(|b| Bound {
                    var: b.var.clone(),
                    lo: simplify_expr(&b.lo),
                    hi: simplify_expr(&b.hi),
                })
                .collect();
            let mut empties = Vec::new();
            for b in &bs {
                match compare(
                    Rel::Lt,
                    &IntPoly::from_expr(&b.lo),
                    &IntPoly::from_expr(&b.hi),
                ) {
                    Formula::Bool(false) => return Formula::Bool(is_all),
                    Formula::Bool(true) => {}
                    c => empties.push(negate(&c)),
                }
            }
            let body = simplify(g);
            match (is_all, &body) {
                (true, Formula::Bool(true)) => Formula::Bool(true),
                (false, Formula::Bool(false)) => Formula::Bool(false),
                (true, Formula::Bool(false)) => Formula::or(empties),
                (false, Formula::Bool(true)) => negate(&Formula::or(empties)),
                _ => {
                    // Drop binders the body does not mention when their range is known non-empty.
                    let mut names = std::collections::BTreeSet::new();
                    body.all_names(&mut names);
                    let kept: Vec<Bound> = bs
                        .iter()
                        .filter(|b| {
                            names.contains(&b.var)
                                || compare(
                                    Rel::Lt,
                                    &IntPoly::from_expr(&b.lo),
                                    &IntPoly::from_expr(&b.hi),
                                ) != Formula::Bool(true)
                        })
                        .cloned()
                        .collect();
                    if is_all {
                        Formula::forall(kept, body)
                    } else {
                        Formula::exists(kept, body)
                    }
                }
            }
        }
    }
}

/// Negation pushed through connectives and quantifiers.
pub fn negate(f: &Formula) -> Formula {
    match f {
        Formula::Bool(b) => Formula::Bool(!b),
        Formula::Cmp(r, a, b) => Formula::Cmp(r.negate(), a.clone(), b.clone()),
        Formula::Not(g) => (**g).clone(),
        Formula::And(v) => Formula::or(v.iter().map(negate).collect()),
        Formula::Or(v) => Formula::and(v.iter().map(negate).collect()),
        Formula::Implies(a, b) => Formula::and(vec![(**a).clone(), negate(b)]),
        Formula::Forall(bs, g) => Formula::Exists(bs.clone(), Box::new(negate(g))),
        Formula::Exists(bs, g) => Formula::Forall(bs.clone(), Box::new(negate(g))),
    }
}

/// Canonical comparison `a r b`, folded when constant.
pub fn compare(r: Rel, a: &IntPoly, b: &IntPoly) -> Formula {
    let mut d = a - b;
    let mut r = match r {
        Rel::Gt => {
            d = -&d;
            Rel::Lt
        }
        Rel::Ge => {
            d = -&d;
            Rel::Le
        }
        r => r,
    };
    if let Some(c) = d.as_constant() {
        return Formula::Bool(r.holds(c, 0));
    }
    let g = d.content();
    if g > 1 {
        // Exact for every relation: d r 0 iff d/g r 0 with g > 0.
        d = d.map_coeffs(|c| c / g);
    }
    // Pivot: a degree-one program atom, reads first, unit coefficient preferred.
    let pivot = choose_pivot(&d);
    if d.terms[&pivot] < 0 {
        d = -&d;
        r = r.flip();
    }
    let c = d.terms[&pivot];
    let mut lhs = IntPoly::zero();
    lhs.add_term(pivot.clone(), c);
    let rhs = &lhs - &d;
    Formula::Cmp(r, lhs.to_expr(), rhs.to_expr())
}

fn choose_pivot(d: &IntPoly) -> Monomial {
    let score = |m: &Monomial, c: i128| -> (u8, u8, u8) {
        let class = match m.as_slice() {
            [(Atom::Opaque(_), 1)] => 0,
            [(Atom::Var(_), 1)] => 1,
            [(Atom::N, 1)] => 3,
            _ if m.iter().all(|(a, _)| *a == Atom::N) => 4,
            _ => 2,
        };
        (
            class,
            if c.abs() == 1 { 0 } else { 1 },
            (mono_degree(m) as u8).min(255),
        )
    };
    d.terms
        .iter()
        .filter(|(m, _)| !m.is_empty())
        .min_by_key(|(m, c)| (score(m, **c), (*m).clone()))
        .map(|(m, _)| m.clone())
        .expect("non-constant polynomial has a non-constant monomial")
}

/// Simplifies every expression inside a formula without changing its shape otherwise.
pub fn simplify_exprs(f: &Formula) -> Formula {
    f.map_exprs(&mut |e| match e {
        Expr::Bin(..) | Expr::Neg(_) => simplify_expr(&e),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_formula;

    fn s(x: &str) -> String {
        simplify(&parse_formula(x).unwrap()).to_string()
    }

    #[test]
    fn folds_constants() {
        assert_eq!(s("1 < 2 && x == x"), "true");
        assert_eq!(s("N - N > 0"), "false");
        assert_eq!(s("forall i in [0, 0) :: a[i] == 1"), "true");
        assert_eq!(s("exists i in [3, 1) :: a[i] == 1"), "false");
    }

    #[test]
    fn isolates_reads_and_scalars() {
        assert_eq!(s("b[j] - j - N*N*N == 0"), "b[j] == j + N * N * N");
        assert_eq!(s("x - N*N*N + N*N = 0"), "x == N * N * N - N * N");
        assert_eq!(s("i >= N"), "i >= N");
        assert_eq!(s("2*x + 4 < 6*N"), "x < 3 * N - 2");
    }

    #[test]
    fn forall_false_means_empty_range() {
        assert_eq!(s("forall i in [0, N) :: 1 == 2"), "N <= 0");
    }

    #[test]
    fn negation_is_nnf() {
        let f = parse_formula("!(forall i in [0, N) :: a[i] > 0 && x == 1)").unwrap();
        let n = negate(&parse_formula("forall i in [0, N) :: a[i] > 0 && x == 1").unwrap());
        assert_eq!(simplify(&f), simplify(&n));
        assert!(matches!(n, Formula::Exists(..)));
    }
}
