//! Weakest preconditions of loop-free code.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ast::{fresh_name, Bound, Expr, Fill, Formula, Name, Rel, Stmt};
use crate::logic::ranges::{simplify_in, RangeCtx};
use crate::logic::simplify::simplify;
use crate::poly::{Atom, IntPoly};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WpError {
    #[error("weakest precondition needs loop-free code")]
    LoopInCode,
    #[error("more than {0} undecided array index comparisons")]
    Blowup(usize),
}

/// Undecided store/read index comparisons tolerated before giving up.
pub const SPLIT_LIMIT: usize = 64;

pub struct Wp {
    ctx: RangeCtx,
    splits: usize,
}

/// `wp(s, post)` with `N >= n_min` available for index reasoning.
pub fn wp(s: &Stmt, post: &Formula, n_min: i128) -> Result<Formula, WpError> {
    let mut w = Wp {
        ctx: RangeCtx::new(n_min),
        splits: 0,
    };
    let f = w.stmt(s, post)?;
    Ok(simplify_in(&f, &w.ctx))
}

impl Wp {
    fn stmt(&mut self, s: &Stmt, post: &Formula) -> Result<Formula, WpError> {
        Ok(match s {
            Stmt::Seq(v) => {
                let mut f = post.clone();
                for x in v.iter().rev() {
                    f = self.stmt(x, &f)?;
                }
                f
            }
            Stmt::Assign(x, e) => simplify_in(&post.subst_var(x, e), &self.ctx),
            Stmt::Store(a, idx, e) => {
                let post = avoid_capture(post, &names_of(idx.iter().chain(std::iter::once(e))));
                let mut ctx = self.ctx.clone();
                let mut splits = 0;
                let f = rewrite_reads(&post, a, &mut ctx, &mut |t, ctx| {
                    let mut conds = Vec::new();
                    for (ti, ii) in t.iter().zip(idx) {
                        match ctx.decide(Rel::Eq, ti, ii) {
                            Some(true) => {}
                            Some(false) => return Expr::Read(a.clone(), t.to_vec()),
                            None => conds.push(Formula::eq(ti.clone(), ii.clone())),
                        }
                    }
                    if conds.is_empty() {
                        e.clone()
                    } else {
                        splits += 1;
                        Expr::ite(
                            Formula::and(conds),
                            e.clone(),
                            Expr::Read(a.clone(), t.to_vec()),
                        )
                    }
                });
                self.splits += splits;
                if self.splits > SPLIT_LIMIT {
                    return Err(WpError::Blowup(SPLIT_LIMIT));
                }
                simplify_in(&f, &self.ctx)
            }
            Stmt::ArrayCopy(d, src) => {
                let mut m = BTreeMap::new();
                m.insert(d.clone(), src.clone());
                post.rename(&m)
            }
            Stmt::If(c, a, b) => {
                let wa = self.stmt(a, post)?;
                let wb = self.stmt(b, post)?;
                if wa == wb {
                    wa
                } else {
                    simplify(&Formula::and(vec![
                        Formula::implies(c.clone(), wa),
                        Formula::implies(crate::logic::simplify::negate(c), wb),
                    ]))
                }
            }
            Stmt::Fill(fl) => {
                let post = avoid_capture(post, &fill_names(fl));
                let mut ctx = self.ctx.clone();
                let mut failed = false;
                let f = rewrite_reads(
                    &post,
                    &fl.array,
                    &mut ctx,
                    &mut |t, _| match fill_read(fl, t) {
                        Some(e) => e,
                        None => {
                            failed = true;
                            Expr::Read(fl.array.clone(), t.to_vec())
                        }
                    },
                );
                if failed {
                    return Err(WpError::Blowup(0));
                }
                simplify_in(&f, &self.ctx)
            }
            Stmt::For(_) => return Err(WpError::LoopInCode),
        })
    }
}

fn names_of<'a>(es: impl Iterator<Item = &'a Expr>) -> BTreeSet<Name> {
    let mut s = BTreeSet::new();
    for e in es {
        e.names(&mut s);
    }
    s
}

fn fill_names(fl: &Fill) -> BTreeSet<Name> {
    let mut s = names_of(fl.index.iter().chain([&fl.lo, &fl.hi, &fl.rhs]));
    s.insert(fl.counter.clone());
    s
}

/// The value of `array[t]` after the fill, in terms of the state before it.
pub fn fill_read(fl: &Fill, t: &[Expr]) -> Option<Expr> {
    let c = Atom::Var(fl.counter.clone());
    let k = fl.index.iter().position(|i| {
        let p = IntPoly::from_expr(i);
        matches!(p.split_linear(&c), Some((coef, _)) if coef.as_constant() == Some(1))
    })?;
    let (_, rest) = IntPoly::from_expr(&fl.index[k]).split_linear(&c)?;
    // counter = t_k - rest
    let solved = (&IntPoly::from_expr(&t[k]) - &rest).to_expr();
    let mut conds = vec![
        Formula::Cmp(Rel::Le, fl.lo.clone(), solved.clone()),
        Formula::Cmp(Rel::Lt, solved.clone(), fl.hi.clone()),
    ];
    for (m, (ti, ii)) in t.iter().zip(&fl.index).enumerate() {
        if m != k {
            conds.push(Formula::eq(ti.clone(), ii.subst_var(&fl.counter, &solved)));
        }
    }
    let value = fl.rhs.subst_var(&fl.counter, &solved);
    Some(Expr::ite(
        simplify(&Formula::and(conds)),
        value,
        Expr::Read(fl.array.clone(), t.to_vec()),
    ))
}

/// Renames binders of `f` that collide with `avoid`.
pub fn avoid_capture(f: &Formula, avoid: &BTreeSet<Name>) -> Formula {
    let mut clash = false;
    f.visit_binders(&mut |b| clash |= avoid.contains(&b.var));
    if !clash {
        return f.clone();
    }
    let mut taken = avoid.clone();
    f.all_names(&mut taken);
    rename_binders(f, avoid, &mut taken)
}

fn rename_binders(f: &Formula, avoid: &BTreeSet<Name>, taken: &mut BTreeSet<Name>) -> Formula {
    match f {
        Formula::Bool(_) | Formula::Cmp(..) => f.clone(),
        Formula::Not(g) => Formula::Not(Box::new(rename_binders(g, avoid, taken))),
        Formula::And(v) => {
            Formula::And(v.iter().map(|g| rename_binders(g, avoid, taken)).collect())
        }
        Formula::Or(v) => Formula::Or(v.iter().map(|g| rename_binders(g, avoid, taken)).collect()),
        Formula::Implies(a, b) => Formula::Implies(
            Box::new(rename_binders(a, avoid, taken)),
            Box::new(rename_binders(b, avoid, taken)),
        ),
        Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
            let mut map = BTreeMap::new();
            let mut nbs = Vec::new();
            for b in bs {
                let lo = b.lo.subst_vars(&map);
                let hi = b.hi.subst_vars(&map);
                let var = if avoid.contains(&b.var) {
                    let v = fresh_name(&b.var, taken);
                    taken.insert(v.clone());
                    map.insert(b.var.clone(), Expr::Var(v.clone()));
                    v
                } else {
                    b.var.clone()
                };
                nbs.push(Bound { var, lo, hi });
            }
            let body = rename_binders(&g.subst_vars(&map), avoid, taken);
            if matches!(f, Formula::Forall(..)) {
                Formula::Forall(nbs, Box::new(body))
            } else {
                Formula::Exists(nbs, Box::new(body))
            }
        }
    }
}

/// Rewrites reads of `array` (innermost first) with binder ranges in scope.
pub fn rewrite_reads(
    f: &Formula,
    array: &str,
    ctx: &mut RangeCtx,
    g: &mut dyn FnMut(&[Expr], &RangeCtx) -> Expr,
) -> Formula {
    match f {
        Formula::Bool(_) => f.clone(),
        Formula::Cmp(r, a, b) => Formula::Cmp(
            *r,
            rewrite_expr(a, array, ctx, g),
            rewrite_expr(b, array, ctx, g),
        ),
        Formula::Not(x) => Formula::Not(Box::new(rewrite_reads(x, array, ctx, g))),
        Formula::And(v) => {
            Formula::And(v.iter().map(|x| rewrite_reads(x, array, ctx, g)).collect())
        }
        Formula::Or(v) => Formula::Or(v.iter().map(|x| rewrite_reads(x, array, ctx, g)).collect()),
        Formula::Implies(a, b) => Formula::Implies(
            Box::new(rewrite_reads(a, array, ctx, g)),
            Box::new(rewrite_reads(b, array, ctx, g)),
        ),
        Formula::Forall(bs, body) | Formula::Exists(bs, body) => {
            let bs: Vec<Bound> = bs
                .iter()
                .map(|b| Bound {
                    var: b.var.clone(),
                    lo: rewrite_expr(&b.lo, array, ctx, g),
                    hi: rewrite_expr(&b.hi, array, ctx, g),
                })
                .collect();
            let mut inner = ctx.with(&bs);
            let body = Box::new(rewrite_reads(body, array, &mut inner, g));
            if matches!(f, Formula::Forall(..)) {
                Formula::Forall(bs, body)
            } else {
                Formula::Exists(bs, body)
            }
        }
    }
}

pub fn rewrite_expr(
    e: &Expr,
    array: &str,
    ctx: &mut RangeCtx,
    g: &mut dyn FnMut(&[Expr], &RangeCtx) -> Expr,
) -> Expr {
    match e {
        Expr::Int(_) | Expr::N | Expr::Var(_) => e.clone(),
        Expr::Read(a, idx) => {
            let idx: Vec<Expr> = idx.iter().map(|i| rewrite_expr(i, array, ctx, g)).collect();
            if a == array {
                g(&idx, ctx)
            } else {
                Expr::Read(a.clone(), idx)
            }
        }
        Expr::Bin(op, a, b) => Expr::bin(
            *op,
            rewrite_expr(a, array, ctx, g),
            rewrite_expr(b, array, ctx, g),
        ),
        Expr::Neg(a) => Expr::Neg(Box::new(rewrite_expr(a, array, ctx, g))),
        Expr::Ite(c, a, b) => Expr::ite(
            rewrite_reads(c, array, ctx, g),
            rewrite_expr(a, array, ctx, g),
            rewrite_expr(b, array, ctx, g),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse, parse_formula};

    fn body(src: &str) -> Stmt {
        parse(src).unwrap().0.body
    }

    #[test]
    fn running_example_peel() {
        let peel = body("x = x + N*N; a[N-1] = a[N-1] + N; b[N-1] = x + N - 1;");
        let post = parse_formula("forall j in [0, N) :: b[j] == j + N*N*N").unwrap();
        let pre = wp(&peel, &post, 2).unwrap();
        let expected = parse_formula(
            "forall j in [0, N) :: ite(j == N - 1, x + N*N + N - 1, b[j]) == j + N*N*N",
        )
        .unwrap();
        assert_eq!(pre, simplify(&expected));
    }

    #[test]
    fn decided_indices_do_not_split() {
        let s = body("a[N-1] = 7;");
        let post = parse_formula("forall j in [0, N - 1) :: a[j] == 0").unwrap();
        assert_eq!(wp(&s, &post, 2).unwrap(), post);
    }

    #[test]
    fn capture_is_avoided() {
        let s = body("a[j] = 1;");
        let post = parse_formula("forall j in [0, N) :: a[j] == 0").unwrap();
        let pre = wp(&s, &post, 1).unwrap();
        let mut names = BTreeSet::new();
        pre.free_names(&mut names);
        assert!(names.contains("j"));
    }

    #[test]
    fn fill_substitutes_range() {
        let s = Stmt::Fill(Fill {
            counter: "k".into(),
            lo: Expr::Int(0),
            hi: Expr::n_minus(1),
            array: "A".into(),
            index: vec![Expr::var("k"), Expr::n_minus(1)],
            rhs: Expr::N,
        });
        let post = parse_formula("forall i in [0, N - 1) :: A[i][N - 1] == N").unwrap();
        assert_eq!(wp(&s, &post, 2).unwrap(), Formula::Bool(true));
    }

    #[test]
    fn loops_are_rejected() {
        let s = body("for (i = 0; i < N; i++) { x = x + 1; }");
        assert_eq!(wp(&s, &Formula::Bool(true), 1), Err(WpError::LoopInCode));
    }
}
