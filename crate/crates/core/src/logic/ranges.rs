//! Interval reasoning over bounded variables with bounds linear in `N`.
//!
//! Every bounded variable `v in [lo, hi)` is assumed to range over a non-empty
//! interval; facts derived for empty ranges are vacuous anyway.

use crate::ast::{Bound, Expr, Formula, Name, Rel};
use crate::logic::simplify::simplify;
use crate::poly::{Atom, IntPoly};

/// `a * N + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lin {
    pub a: i128,
    pub b: i128,
}

impl Lin {
    fn add(self, o: Lin) -> Lin {
        Lin {
            a: self.a + o.a,
            b: self.b + o.b,
        }
    }

    fn scale(self, k: i128) -> Lin {
        Lin {
            a: self.a * k,
            b: self.b * k,
        }
    }

    /// Non-negative for every `N >= n_min`.
    fn nonneg(self, n_min: i128) -> bool {
        self.a >= 0 && self.a * n_min + self.b >= 0
    }
}

#[derive(Clone, Debug, Default)]
pub struct RangeCtx {
    pub n_min: i128,
    bounds: Vec<Bound>,
}

impl RangeCtx {
    pub fn new(n_min: i128) -> RangeCtx {
        RangeCtx {
            n_min,
            bounds: Vec::new(),
        }
    }

    pub fn with(&self, bs: &[Bound]) -> RangeCtx {
        let mut c = self.clone();
        c.bounds.extend(bs.iter().cloned());
        c
    }

    pub fn push(&mut self, var: &str, lo: Expr, hi: Expr) {
        self.bounds.push(Bound {
            var: var.to_string(),
            lo,
            hi,
        });
    }

    pub fn pop(&mut self) {
        self.bounds.pop();
    }

    pub fn is_bound(&self, x: &str) -> bool {
        self.bounds.iter().any(|b| b.var == x)
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    /// Lower and upper bound of `e`, valid for all `N >= n_min`.
    pub fn range(&self, e: &Expr) -> Option<(Lin, Lin)> {
        self.range_poly(&IntPoly::from_expr(e), self.bounds.len())
    }

    fn range_poly(&self, p: &IntPoly, depth: usize) -> Option<(Lin, Lin)> {
        let mut lo = Lin { a: 0, b: 0 };
        let mut hi = Lin { a: 0, b: 0 };
        for (m, &c) in &p.terms {
            match m.as_slice() {
                [] => {
                    lo.b += c;
                    hi.b += c;
                }
                [(Atom::N, 1)] => {
                    lo.a += c;
                    hi.a += c;
                }
                [(Atom::Var(x), 1)] => {
                    let k = self.bounds[..depth].iter().rposition(|b| &b.var == x)?;
                    let b = &self.bounds[k];
                    let (l, _) = self.range_poly(&IntPoly::from_expr(&b.lo), k)?;
                    let (_, h) = self.range_poly(&IntPoly::from_expr(&b.hi), k)?;
                    let h = h.add(Lin { a: 0, b: -1 });
                    if c > 0 {
                        lo = lo.add(l.scale(c));
                        hi = hi.add(h.scale(c));
                    } else {
                        lo = lo.add(h.scale(c));
                        hi = hi.add(l.scale(c));
                    }
                }
                _ => return None,
            }
        }
        Some((lo, hi))
    }

    /// Decides `a r b` when the ranges settle it.
    pub fn decide(&self, r: Rel, a: &Expr, b: &Expr) -> Option<bool> {
        let d = &IntPoly::from_expr(a) - &IntPoly::from_expr(b);
        if let Some(c) = d.as_constant() {
            return Some(r.holds(c, 0));
        }
        let (lo, hi) = self.range_poly(&d, self.bounds.len())?;
        let n = self.n_min;
        let neg = |l: Lin| l.scale(-1);
        // always_lt: hi <= -1, i.e. -1 - hi >= 0.
        let always_lt = neg(hi).add(Lin { a: 0, b: -1 }).nonneg(n);
        let always_gt = lo.add(Lin { a: 0, b: -1 }).nonneg(n);
        let always_le = neg(hi).nonneg(n);
        let always_ge = lo.nonneg(n);
        match r {
            Rel::Lt if always_lt => Some(true),
            Rel::Lt if always_ge => Some(false),
            Rel::Le if always_le => Some(true),
            Rel::Le if always_gt => Some(false),
            Rel::Gt if always_gt => Some(true),
            Rel::Gt if always_le => Some(false),
            Rel::Ge if always_ge => Some(true),
            Rel::Ge if always_lt => Some(false),
            Rel::Eq if always_lt || always_gt => Some(false),
            Rel::Ne if always_lt || always_gt => Some(true),
            _ => None,
        }
    }

    /// True when `e` lies in `[lo, hi)` for every valuation.
    pub fn within(&self, e: &Expr, lo: &Expr, hi: &Expr) -> bool {
        self.decide(Rel::Ge, e, lo) == Some(true) && self.decide(Rel::Lt, e, hi) == Some(true)
    }
}

/// Folds comparisons and conditionals that the ranges decide, descending under binders.
pub fn simplify_in(f: &Formula, ctx: &RangeCtx) -> Formula {
    simplify(&fold(f, &mut ctx.clone()))
}

fn fold(f: &Formula, ctx: &mut RangeCtx) -> Formula {
    match f {
        Formula::Bool(_) => f.clone(),
        Formula::Cmp(r, a, b) => {
            let a = fold_expr(a, ctx);
            let b = fold_expr(b, ctx);
            match ctx.decide(*r, &a, &b) {
                Some(v) => Formula::Bool(v),
                None => Formula::Cmp(*r, a, b),
            }
        }
        Formula::Not(g) => Formula::Not(Box::new(fold(g, ctx))),
        Formula::And(v) => Formula::And(v.iter().map(|g| fold(g, ctx)).collect()),
        Formula::Or(v) => Formula::Or(v.iter().map(|g| fold(g, ctx)).collect()),
        Formula::Implies(a, b) => Formula::Implies(Box::new(fold(a, ctx)), Box::new(fold(b, ctx))),
        Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
            let clash = bs.iter().any(|b| ctx.is_bound(&b.var));
            let bs: Vec<Bound> = bs
                .iter()
                .map(|b| Bound {
                    var: b.var.clone(),
                    lo: fold_expr(&b.lo, ctx),
                    hi: fold_expr(&b.hi, ctx),
                })
                .collect();
            let body = if clash {
                (**g).clone()
            } else {
                let mut inner = ctx.with(&bs);
                fold(g, &mut inner)
            };
            if matches!(f, Formula::Forall(..)) {
                Formula::Forall(bs, Box::new(body))
            } else {
                Formula::Exists(bs, Box::new(body))
            }
        }
    }
}

pub fn fold_expr(e: &Expr, ctx: &mut RangeCtx) -> Expr {
    match e {
        Expr::Ite(c, a, b) => {
            let c = simplify(&fold(c, ctx));
            match c {
                Formula::Bool(true) => fold_expr(a, ctx),
                Formula::Bool(false) => fold_expr(b, ctx),
                c => Expr::ite(c, fold_expr(a, ctx), fold_expr(b, ctx)),
            }
        }
        Expr::Read(a, idx) => {
            Expr::Read(a.clone(), idx.iter().map(|i| fold_expr(i, ctx)).collect())
        }
        Expr::Bin(op, a, b) => Expr::bin(*op, fold_expr(a, ctx), fold_expr(b, ctx)),
        Expr::Neg(a) => Expr::Neg(Box::new(fold_expr(a, ctx))),
        _ => e.clone(),
    }
}

/// Names of the bounded variables, innermost last.
pub fn bound_names(ctx: &RangeCtx) -> Vec<Name> {
    ctx.bounds.iter().map(|b| b.var.clone()).collect()
}

/// Splits each top-level `forall` whose body compares a bound variable for
/// equality with a term free of bound variables: the range `[lo, hi)` of
/// that variable becomes `[lo, t)`, the point `t` and `[t + 1, hi)`. Parts
/// the ranges decide are folded away.
pub fn split_at_points(f: &Formula, n_min: i128) -> Formula {
    let ctx = RangeCtx::new(n_min);
    let mut work: Vec<(Formula, usize)> = f.conjuncts().into_iter().map(|c| (c, 0)).collect();
    let mut out = Vec::new();
    while let Some((c, splits)) = work.pop() {
        let Formula::Forall(bs, body) = &c else {
            out.push(c);
            continue;
        };
        let found = if splits < 4 { point_of(bs, body) } else { None };
        let Some((k, t)) = found else {
            out.push(c);
            continue;
        };
        let b = &bs[k];
        let with = |lo: Expr, hi: Expr| {
            let mut v = bs.clone();
            v[k] = Bound {
                var: b.var.clone(),
                lo,
                hi,
            };
            v
        };
        let t1 = crate::poly::simplify_expr(&Expr::add(t.clone(), Expr::Int(1)));
        let mut rest = bs.clone();
        rest.remove(k);
        let inside = Formula::and(vec![
            Formula::Cmp(Rel::Le, b.lo.clone(), t.clone()),
            Formula::Cmp(Rel::Lt, t.clone(), b.hi.clone()),
        ]);
        let point = Formula::implies(inside, Formula::forall(rest, body.subst_var(&b.var, &t)));
        for part in [
            Formula::Forall(with(b.lo.clone(), t.clone()), body.clone()),
            point,
            Formula::Forall(with(t1, b.hi.clone()), body.clone()),
        ] {
            let part = simplify_in(&drop_empty(&part, &ctx), &ctx);
            for q in part.conjuncts() {
                work.push((q, splits + 1));
            }
        }
    }
    out.reverse();
    Formula::and(out)
}

fn drop_empty(f: &Formula, ctx: &RangeCtx) -> Formula {
    match f {
        Formula::Forall(bs, _)
            if bs
                .iter()
                .any(|b| ctx.decide(Rel::Le, &b.hi, &b.lo) == Some(true)) =>
        {
            Formula::Bool(true)
        }
        _ => f.clone(),
    }
}

/// A bound variable index and a term it is compared with for equality.
fn point_of(bs: &[Bound], body: &Formula) -> Option<(usize, Expr)> {
    let bound: Vec<&Name> = bs.iter().map(|b| &b.var).collect();
    let mut found = None;
    let mut look = |a: &Expr, b: &Expr| {
        if found.is_some() {
            return;
        }
        for (x, t) in [(a, b), (b, a)] {
            if let Expr::Var(v) = x {
                if let Some(k) = bound.iter().position(|w| *w == v) {
                    if !bound.iter().any(|w| t.mentions(w)) {
                        found = Some((k, t.clone()));
                        return;
                    }
                }
            }
        }
    };
    visit_eqs(body, &mut look);
    found
}

fn visit_eqs(f: &Formula, g: &mut dyn FnMut(&Expr, &Expr)) {
    match f {
        Formula::Cmp(r, a, b) => {
            if matches!(r, Rel::Eq | Rel::Ne) {
                g(a, b);
            }
            visit_eqs_expr(a, g);
            visit_eqs_expr(b, g);
        }
        Formula::Not(x) => visit_eqs(x, g),
        Formula::And(v) | Formula::Or(v) => v.iter().for_each(|x| visit_eqs(x, g)),
        Formula::Implies(a, b) => {
            visit_eqs(a, g);
            visit_eqs(b, g);
        }
        // Nested binders may shadow names; leave them alone.
        Formula::Forall(..) | Formula::Exists(..) | Formula::Bool(_) => {}
    }
}

fn visit_eqs_expr(e: &Expr, g: &mut dyn FnMut(&Expr, &Expr)) {
    match e {
        Expr::Ite(c, a, b) => {
            visit_eqs(c, g);
            visit_eqs_expr(a, g);
            visit_eqs_expr(b, g);
        }
        Expr::Bin(_, a, b) => {
            visit_eqs_expr(a, g);
            visit_eqs_expr(b, g);
        }
        Expr::Neg(a) => visit_eqs_expr(a, g),
        Expr::Read(_, idx) => idx.iter().for_each(|i| visit_eqs_expr(i, g)),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_expr, parse_formula};

    #[test]
    fn counter_below_truncated_bound_differs_from_last_index() {
        let mut ctx = RangeCtx::new(2);
        ctx.push("j", Expr::Int(0), parse_expr("N - 1").unwrap());
        assert_eq!(
            ctx.decide(Rel::Eq, &Expr::var("j"), &parse_expr("N - 1").unwrap()),
            Some(false)
        );
        assert_eq!(ctx.decide(Rel::Lt, &Expr::var("j"), &Expr::N), Some(true));
        assert_eq!(ctx.decide(Rel::Eq, &Expr::var("j"), &Expr::Int(0)), None);
        assert!(ctx.within(
            &parse_expr("N - 2").unwrap(),
            &Expr::Int(0),
            &parse_expr("N - 1").unwrap()
        ));
    }

    #[test]
    fn nested_bounds() {
        let mut ctx = RangeCtx::new(1);
        ctx.push("i", Expr::Int(0), Expr::N);
        ctx.push("k", Expr::Int(0), Expr::var("i"));
        assert_eq!(
            ctx.decide(Rel::Lt, &Expr::var("k"), &parse_expr("N - 1").unwrap()),
            Some(true)
        );
    }

    #[test]
    fn folds_ite_under_quantifier() {
        let f = parse_formula("forall j in [0, N - 1) :: ite(j == N - 1, 5, b[j]) == j").unwrap();
        let g = simplify_in(&f, &RangeCtx::new(2));
        assert_eq!(g.to_string(), "(forall j in [0, N - 1) :: b[j] == j)");
    }
}
