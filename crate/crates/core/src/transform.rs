//! Splitting `P_N` into the truncated program `Q_{N-1}` and the peel.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{BinOp, Expr, Fill, Formula, Loop, Name, Program, Rel, Stmt};
use crate::logic::ranges::{simplify_in, RangeCtx};
use crate::logic::simplify::simplify;
use crate::logic::smt::Solver;
use crate::poly::{simplify_expr, Atom, IntPoly};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("peel substitution blocked: {0}")]
    PeelSubstitutionBlocked(String),
    #[error("unsupported indexing: {0}")]
    UnsupportedIndexing(String),
}

type Result<T> = std::result::Result<T, TransformError>;

/// A read in `Q_{N-1}` replaced by the value the peel gives it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Substitution {
    pub var: Name,
    pub rhs: Expr,
    pub site: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QAndPeel {
    pub q: Program,
    pub peel: Program,
    /// `(Q_L, R_L)` for each top-level loop, before repair.
    pub per_loop: Vec<(Stmt, Stmt)>,
    pub substitutions: Vec<Substitution>,
}

pub fn nesting_depth(p: &Program) -> usize {
    p.body.depth()
}

/// Substitutes `by` for the variable `x` throughout a statement.
pub fn subst_stmt(s: &Stmt, x: &str, by: &Expr) -> Stmt {
    s.map_exprs(&mut |e| e.subst_var(x, by), &mut |f| f.subst_var(x, by))
}

/// `N - 1` for `N` in every loop bound, and nowhere else.
pub fn truncate(s: &Stmt) -> Stmt {
    match s {
        Stmt::Seq(v) => Stmt::Seq(v.iter().map(truncate).collect()),
        Stmt::If(c, a, b) => Stmt::If(c.clone(), Box::new(truncate(a)), Box::new(truncate(b))),
        Stmt::For(l) => Stmt::For(Loop {
            counter: l.counter.clone(),
            ub: simplify_expr(&l.ub.subst_n(&Expr::n_minus(1))),
            body: Box::new(truncate(&l.body)),
        }),
        other => other.clone(),
    }
}

/// Largest constant iteration count that [`lpeel`] unrolls.
pub const MAX_UNROLL: i128 = 16;

/// Iterations `lo..hi` of `l`: unrolled copies when `hi - lo` is a small
/// constant, otherwise a residual loop over the shifted counter.
pub fn lpeel(l: &Loop, lo: &Expr, hi: &Expr) -> Stmt {
    let diff = simplify_expr(&Expr::sub(hi.clone(), lo.clone()));
    if let Some(k) = diff.as_int() {
        if k <= 0 {
            return Stmt::skip();
        }
        if k <= MAX_UNROLL {
            let copies = (0..k)
                .map(|m| {
                    let s = subst_stmt(
                        &l.body,
                        &l.counter,
                        &simplify_expr(&Expr::add(lo.clone(), Expr::Int(m))),
                    );
                    s.map_exprs(&mut |e| simplify_expr(&e), &mut |f| {
                        f.map_exprs(&mut |e| simplify_expr(&e))
                    })
                })
                .collect();
            return Stmt::seq(copies);
        }
    }
    let shifted = simplify_expr(&Expr::add(Expr::var(&l.counter), lo.clone()));
    Stmt::For(Loop {
        counter: l.counter.clone(),
        ub: diff,
        body: Box::new(subst_stmt(&l.body, &l.counter, &shifted)),
    })
}

fn reads_of(e: &Expr) -> BTreeSet<Name> {
    let mut s = BTreeSet::new();
    e.names(&mut s);
    s
}

/// Splits `e` as `a + b * c` with `a`, `b` free of `c`; `None` when not affine in `c`.
fn affine_in(e: &Expr, c: &str) -> Option<(Expr, Expr)> {
    let p = IntPoly::from_expr(e);
    let atom = Atom::Var(c.to_string());
    let (b, a) = p.split_linear(&atom)?;
    let (a, b) = (a.to_expr(), b.to_expr());
    // Atoms such as `A[c]` hide the counter from the polynomial view.
    if a.mentions(c) || b.mentions(c) {
        return None;
    }
    Some((a, b))
}

/// `sum_{c in [0, ub)} (a + b * c)`.
fn closed_sum(a: &Expr, b: &Expr, ub: &Expr) -> Expr {
    let lin = Expr::mul(a.clone(), ub.clone());
    let tri = Expr::bin(
        BinOp::Div,
        Expr::mul(ub.clone(), Expr::sub(ub.clone(), Expr::Int(1))),
        Expr::Int(2),
    );
    simplify_expr(&Expr::add(lin, Expr::mul(b.clone(), tri)))
}

/// Loop-free replacement for a loop whose body is a list of independent
/// accumulations, last-value assignments and array fills.
pub fn summarize_peel_loop(s: &Stmt, ctx: &RangeCtx) -> Option<Stmt> {
    let Stmt::For(l) = s else { return None };
    if ctx.decide(Rel::Ge, &l.ub, &Expr::Int(0)) != Some(true) {
        return None;
    }
    let items = l.body.flatten();
    let mut ws = BTreeSet::new();
    let mut wa = BTreeSet::new();
    for it in &items {
        match it {
            Stmt::Assign(x, _) => {
                if !ws.insert(x.clone()) {
                    return None;
                }
            }
            Stmt::Store(a, _, _) => {
                if !wa.insert(a.clone()) {
                    return None;
                }
            }
            _ => return None,
        }
    }
    let c = &l.counter;
    let touches = |e: &Expr, except: Option<&str>| {
        reads_of(e)
            .iter()
            .any(|n| (ws.contains(n) || wa.contains(n)) && Some(n.as_str()) != except)
    };
    let mut out = Vec::new();
    for it in &items {
        match it {
            Stmt::Assign(x, e) => {
                let d = Expr::sub(e.clone(), Expr::var(x));
                let d = simplify_expr(&d);
                if !touches(&d, None) {
                    let (a, b) = affine_in(&d, c)?;
                    out.push(Stmt::Assign(
                        x.clone(),
                        simplify_expr(&Expr::add(Expr::var(x), closed_sum(&a, &b, &l.ub))),
                    ));
                } else if !touches(e, None) {
                    if ctx.decide(Rel::Ge, &l.ub, &Expr::Int(1)) != Some(true) {
                        return None;
                    }
                    out.push(Stmt::Assign(
                        x.clone(),
                        simplify_expr(&e.subst_var(c, &Expr::sub(l.ub.clone(), Expr::Int(1)))),
                    ));
                } else {
                    return None;
                }
            }
            Stmt::Store(arr, idx, e) => {
                if idx.iter().any(|i| touches(i, None)) {
                    return None;
                }
                let self_read = Expr::Read(arr.clone(), idx.clone());
                let mentions_c = idx.iter().any(|i| i.mentions(c));
                if !mentions_c {
                    // A fixed cell accumulating an affine amount.
                    let d = simplify_expr(&Expr::sub(e.clone(), self_read.clone()));
                    if touches(&d, None) {
                        return None;
                    }
                    let (a, b) = affine_in(&d, c)?;
                    out.push(Stmt::Store(
                        arr.clone(),
                        idx.clone(),
                        simplify_expr(&Expr::add(self_read, closed_sum(&a, &b, &l.ub))),
                    ));
                    continue;
                }
                let injective = idx.iter().any(|i| {
                    matches!(IntPoly::from_expr(i).split_linear(&Atom::Var(c.clone())),
                        Some((k, _)) if k.as_constant() == Some(1))
                });
                if !injective {
                    return None;
                }
                // The right-hand side may read its own array only at the written cell.
                let mut ok = true;
                let masked = e.subst_reads(arr, &mut |t| {
                    if t != idx.as_slice() {
                        ok = false;
                    }
                    Expr::Int(0)
                });
                if !ok || touches(&masked, None) {
                    return None;
                }
                out.push(Stmt::Fill(Fill {
                    counter: c.clone(),
                    lo: Expr::Int(0),
                    hi: l.ub.clone(),
                    array: arr.clone(),
                    index: idx.clone(),
                    rhs: e.clone(),
                }));
            }
            _ => return None,
        }
    }
    Some(Stmt::seq(out))
}

/// Replaces summarizable loops bottom-up.
pub fn summarize_all(s: &Stmt, ctx: &mut RangeCtx) -> Stmt {
    match s {
        Stmt::Seq(v) => Stmt::seq(v.iter().map(|x| summarize_all(x, ctx)).collect()),
        Stmt::If(c, a, b) => Stmt::If(
            c.clone(),
            Box::new(summarize_all(a, ctx)),
            Box::new(summarize_all(b, ctx)),
        ),
        Stmt::For(l) => {
            ctx.push(&l.counter, Expr::Int(0), l.ub.clone());
            let body = summarize_all(&l.body, ctx);
            ctx.pop();
            let l2 = Stmt::For(Loop {
                counter: l.counter.clone(),
                ub: l.ub.clone(),
                body: Box::new(body),
            });
            if let Stmt::For(ref inner) = l2 {
                if simplify_expr(&inner.ub).as_int() == Some(0) {
                    return Stmt::skip();
                }
            }
            summarize_peel_loop(&l2, ctx).unwrap_or(l2)
        }
        other => other.clone(),
    }
}

// ---------------------------------------------------------------------------
// Commutation of moved inner-loop iterations.

#[derive(Clone, Debug)]
struct Access {
    name: Name,
    /// `None` for scalars and whole-array copies.
    index: Option<Vec<Expr>>,
    write: bool,
    accum: bool,
    bounds: Vec<(Name, Expr, Expr)>,
}

fn accum_store(a: &str, idx: &[Expr], e: &Expr) -> bool {
    let self_read = Expr::Read(a.to_string(), idx.to_vec());
    let d = simplify_expr(&Expr::sub(e.clone(), self_read));
    let mut arrays = BTreeMap::new();
    d.arrays(&mut arrays);
    !arrays.contains_key(a)
}

fn expr_accesses(
    e: &Expr,
    bounds: &[(Name, Expr, Expr)],
    out: &mut Vec<Access>,
    skip_read: Option<(&str, &[Expr])>,
) {
    let mut vars = BTreeSet::new();
    collect_scalar_reads(e, &mut vars);
    for v in vars {
        if bounds.iter().all(|(c, _, _)| *c != v) {
            out.push(Access {
                name: v,
                index: None,
                write: false,
                accum: false,
                bounds: bounds.to_vec(),
            });
        }
    }
    let mut reads = Vec::new();
    collect_reads(e, &mut reads);
    for (a, idx) in reads {
        if skip_read.is_some_and(|(sa, si)| sa == a && si == idx.as_slice()) {
            continue;
        }
        out.push(Access {
            name: a,
            index: Some(idx),
            write: false,
            accum: false,
            bounds: bounds.to_vec(),
        });
    }
}

fn collect_scalar_reads(e: &Expr, out: &mut BTreeSet<Name>) {
    match e {
        Expr::Var(x) => {
            out.insert(x.clone());
        }
        Expr::Read(_, idx) => idx.iter().for_each(|i| collect_scalar_reads(i, out)),
        Expr::Bin(_, a, b) => {
            collect_scalar_reads(a, out);
            collect_scalar_reads(b, out);
        }
        Expr::Neg(a) => collect_scalar_reads(a, out),
        Expr::Ite(c, a, b) => {
            let mut names = BTreeSet::new();
            c.free_names(&mut names);
            let mut arrays = BTreeMap::new();
            c.arrays(&mut arrays);
            out.extend(names.into_iter().filter(|n| !arrays.contains_key(n)));
            collect_scalar_reads(a, out);
            collect_scalar_reads(b, out);
        }
        _ => {}
    }
}

fn collect_reads(e: &Expr, out: &mut Vec<(Name, Vec<Expr>)>) {
    match e {
        Expr::Read(a, idx) => {
            out.push((a.clone(), idx.clone()));
            idx.iter().for_each(|i| collect_reads(i, out));
        }
        Expr::Bin(_, a, b) => {
            collect_reads(a, out);
            collect_reads(b, out);
        }
        Expr::Neg(a) => collect_reads(a, out),
        Expr::Ite(c, a, b) => {
            formula_reads(c, out);
            collect_reads(a, out);
            collect_reads(b, out);
        }
        _ => {}
    }
}

fn formula_reads(f: &Formula, out: &mut Vec<(Name, Vec<Expr>)>) {
    f.visit_exprs(&mut |e| collect_reads(e, out));
}

fn accesses(s: &Stmt, bounds: &mut Vec<(Name, Expr, Expr)>, out: &mut Vec<Access>) {
    match s {
        Stmt::Seq(v) => v.iter().for_each(|x| accesses(x, bounds, out)),
        Stmt::Assign(x, e) => {
            let d = simplify_expr(&Expr::sub(e.clone(), Expr::var(x)));
            let accum = !d.mentions(x);
            let probe = if accum { d } else { e.clone() };
            expr_accesses(&probe, bounds, out, None);
            out.push(Access {
                name: x.clone(),
                index: None,
                write: true,
                accum,
                bounds: bounds.clone(),
            });
        }
        Stmt::Store(a, idx, e) => {
            let accum = accum_store(a, idx, e);
            for i in idx {
                expr_accesses(i, bounds, out, None);
            }
            expr_accesses(
                e,
                bounds,
                out,
                if accum {
                    Some((a.as_str(), idx.as_slice()))
                } else {
                    None
                },
            );
            out.push(Access {
                name: a.clone(),
                index: Some(idx.clone()),
                write: true,
                accum,
                bounds: bounds.clone(),
            });
        }
        Stmt::ArrayCopy(d, src) => {
            out.push(Access {
                name: src.clone(),
                index: None,
                write: false,
                accum: false,
                bounds: bounds.clone(),
            });
            out.push(Access {
                name: d.clone(),
                index: None,
                write: true,
                accum: false,
                bounds: bounds.clone(),
            });
        }
        Stmt::If(c, a, b) => {
            let mut tmp = Vec::new();
            c.visit_exprs(&mut |e| expr_accesses(e, bounds, &mut tmp, None));
            out.extend(tmp);
            accesses(a, bounds, out);
            accesses(b, bounds, out);
        }
        Stmt::For(l) => {
            expr_accesses(&l.ub, bounds, out, None);
            bounds.push((l.counter.clone(), Expr::Int(0), l.ub.clone()));
            accesses(&l.body, bounds, out);
            bounds.pop();
        }
        Stmt::Fill(f) => {
            bounds.push((f.counter.clone(), f.lo.clone(), f.hi.clone()));
            for i in &f.index {
                expr_accesses(i, bounds, out, None);
            }
            expr_accesses(
                &f.rhs,
                bounds,
                out,
                Some((f.array.as_str(), f.index.as_slice())),
            );
            out.push(Access {
                name: f.array.clone(),
                index: Some(f.index.clone()),
                write: true,
                accum: false,
                bounds: bounds.clone(),
            });
            bounds.pop();
        }
    }
}

fn bound_facts(bounds: &[(Name, Expr, Expr)]) -> Vec<Formula> {
    bounds
        .iter()
        .flat_map(|(c, lo, hi)| {
            [
                Formula::Cmp(Rel::Le, lo.clone(), Expr::var(c)),
                Formula::Cmp(Rel::Lt, Expr::var(c), hi.clone()),
            ]
        })
        .collect()
}

struct Peeler<'a> {
    solver: &'a Solver,
    n_min: i128,
}

impl Peeler<'_> {
    /// Fails unless `moved` can run after `other` without changing the result.
    /// `hyps` constrain the free counters of both.
    fn check_commutes(&self, moved: &Stmt, other: &Stmt, hyps: &[Formula]) -> Result<()> {
        let mut am = Vec::new();
        accesses(moved, &mut Vec::new(), &mut am);
        // Counters bound inside `other` get distinct names.
        let mut inner = BTreeSet::new();
        other.counters(&mut inner);
        let ren: BTreeMap<Name, Name> = inner
            .iter()
            .map(|c| (c.clone(), format!("{c}!o")))
            .collect();
        let other = rename_counters(other, &ren);
        let mut ao = Vec::new();
        accesses(&other, &mut Vec::new(), &mut ao);
        let mut goals = Vec::new();
        let mut ctx = RangeCtx::new(self.n_min);
        for h in hyps {
            if let Formula::Cmp(Rel::Lt, Expr::Var(c), hi) = h {
                let lo = hyps
                    .iter()
                    .find_map(|g| match g {
                        Formula::Cmp(Rel::Le, lo, Expr::Var(d)) if d == c => Some(lo.clone()),
                        _ => None,
                    })
                    .unwrap_or(Expr::Int(0));
                ctx.push(c, lo, hi.clone());
            }
        }
        for a in &am {
            for b in &ao {
                if a.name != b.name || !(a.write || b.write) || (a.accum && b.accum) {
                    continue;
                }
                let (Some(ia), Some(ib)) = (&a.index, &b.index) else {
                    return Err(TransformError::PeelSubstitutionBlocked(format!(
                        "moved peel iterations conflict on {}",
                        a.name
                    )));
                };
                let mut local = ctx.clone();
                for (c, lo, hi) in a.bounds.iter().chain(&b.bounds) {
                    local.push(c, lo.clone(), hi.clone());
                }
                if ia
                    .iter()
                    .zip(ib)
                    .any(|(x, y)| local.decide(Rel::Ne, x, y) == Some(true))
                {
                    continue;
                }
                let mut pre = bound_facts(&a.bounds);
                pre.extend(bound_facts(&b.bounds));
                let differ = Formula::or(
                    ia.iter()
                        .zip(ib)
                        .map(|(x, y)| Formula::Cmp(Rel::Ne, x.clone(), y.clone()))
                        .collect(),
                );
                goals.push((a.name.clone(), Formula::implies(Formula::and(pre), differ)));
            }
        }
        if goals.is_empty() {
            return Ok(());
        }
        let mut h = hyps.to_vec();
        h.push(Formula::Cmp(Rel::Ge, Expr::N, Expr::Int(self.n_min)));
        let fs: Vec<Formula> = goals.iter().map(|(_, g)| g.clone()).collect();
        let ok = self.solver.valid_goals(&h, &fs);
        match goals.iter().zip(ok).find(|(_, ok)| !ok) {
            None => Ok(()),
            Some(((name, _), _)) => Err(TransformError::PeelSubstitutionBlocked(format!(
                "moved peel iterations may conflict on {name}"
            ))),
        }
    }

    fn peel_seq(&self, items: &[Stmt], hyps: &[Formula]) -> Result<Stmt> {
        let mut out = Vec::new();
        for (m, s) in items.iter().enumerate() {
            if !s.has_loop() {
                continue;
            }
            let moved = self.peel_stmt(s, hyps)?;
            let after = truncate(&Stmt::seq(items[m + 1..].to_vec()));
            self.check_commutes(&moved, &after, hyps)?;
            out.push(moved);
        }
        Ok(Stmt::seq(out))
    }

    fn peel_stmt(&self, s: &Stmt, hyps: &[Formula]) -> Result<Stmt> {
        match s {
            Stmt::For(l) => self.peel_loop(l, hyps),
            Stmt::If(c, a, b) => {
                let pa = self.peel_seq(&a.flatten(), hyps)?;
                let pb = self.peel_seq(&b.flatten(), hyps)?;
                Ok(Stmt::If(c.clone(), Box::new(pa), Box::new(pb)))
            }
            Stmt::Seq(v) => self.peel_seq(v, hyps),
            _ => Ok(Stmt::skip()),
        }
    }

    /// `R_L`: missing inner iterations for truncated outer iterations, then
    /// the outer iterations in `[U(N-1), U(N))`.
    /// Iterations `[ub_trunc, ub)` of `l`. An unrolled copy whose counter
    /// may be negative for small `N` runs only when it is not.
    fn tail(&self, l: &Loop, ub_trunc: &Expr) -> Stmt {
        let count = simplify_expr(&Expr::sub(l.ub.clone(), ub_trunc.clone())).as_int();
        let Some(k) = count.filter(|k| (1..=MAX_UNROLL).contains(k)) else {
            return lpeel(l, ub_trunc, &l.ub);
        };
        let ctx = RangeCtx::new(self.n_min);
        let copies = (0..k)
            .map(|m| {
                let at = simplify_expr(&Expr::add(ub_trunc.clone(), Expr::Int(m)));
                let copy = lpeel(l, &at, &simplify_expr(&Expr::add(at.clone(), Expr::Int(1))));
                match ctx.decide(Rel::Ge, &at, &Expr::Int(0)) {
                    Some(true) => copy,
                    _ => Stmt::If(
                        Formula::Cmp(Rel::Ge, at, Expr::Int(0)),
                        Box::new(copy),
                        Box::new(Stmt::skip()),
                    ),
                }
            })
            .collect();
        Stmt::seq(copies)
    }

    fn peel_loop(&self, l: &Loop, hyps: &[Formula]) -> Result<Stmt> {
        let ub_trunc = simplify_expr(&l.ub.subst_n(&Expr::n_minus(1)));
        let tail = self.tail(l, &ub_trunc);
        if !l.body.has_loop() {
            return Ok(tail);
        }
        let c = &l.counter;
        let mut inner_hyps = hyps.to_vec();
        inner_hyps.push(Formula::Cmp(Rel::Le, Expr::Int(0), Expr::var(c)));
        inner_hyps.push(Formula::Cmp(Rel::Lt, Expr::var(c), ub_trunc.clone()));
        let moved = self.peel_seq(&l.body.flatten(), &inner_hyps)?;
        if moved.is_skip() {
            return Ok(tail);
        }
        // Later truncated iterations c' in (c, U(N-1)).
        let later_c = format!("{c}!later");
        let later = subst_stmt(&truncate(&l.body), c, &Expr::var(&later_c));
        let mut later_hyps = inner_hyps.clone();
        later_hyps.push(Formula::Cmp(Rel::Lt, Expr::var(c), Expr::var(&later_c)));
        later_hyps.push(Formula::Cmp(Rel::Lt, Expr::var(&later_c), ub_trunc.clone()));
        self.check_commutes(&moved, &later, &later_hyps)?;
        let moved_loop = Stmt::For(Loop {
            counter: c.clone(),
            ub: ub_trunc,
            body: Box::new(moved),
        });
        Ok(Stmt::seq(vec![moved_loop, tail]))
    }
}

fn rename_counters(s: &Stmt, ren: &BTreeMap<Name, Name>) -> Stmt {
    let s = s.map_exprs(&mut |e| e.rename(ren), &mut |f| f.rename(ren));
    fn go(s: Stmt, ren: &BTreeMap<Name, Name>) -> Stmt {
        match s {
            Stmt::Seq(v) => Stmt::Seq(v.into_iter().map(|x| go(x, ren)).collect()),
            Stmt::If(c, a, b) => Stmt::If(c, Box::new(go(*a, ren)), Box::new(go(*b, ren))),
            Stmt::For(mut l) => {
                if let Some(n) = ren.get(&l.counter) {
                    l.counter = n.clone();
                }
                l.body = Box::new(go(*l.body, ren));
                Stmt::For(l)
            }
            Stmt::Fill(mut f) => {
                if let Some(n) = ren.get(&f.counter) {
                    f.counter = n.clone();
                }
                Stmt::Fill(f)
            }
            other => other,
        }
    }
    go(s, ren)
}

// ---------------------------------------------------------------------------
// Cumulative symbolic effect of the peels, used to repair Q.

#[derive(Clone, Debug)]
enum Entry {
    Write {
        guard: Formula,
        index: Vec<Expr>,
        value: Expr,
    },
    Fill {
        guard: Formula,
        fill: Fill,
    },
    Opaque,
}

#[derive(Clone, Debug, Default)]
struct Effects {
    scalars: BTreeMap<Name, Option<Expr>>,
    arrays: BTreeMap<Name, Vec<Entry>>,
}

struct Blocked(String);

impl Effects {
    fn expr(
        &self,
        e: &Expr,
        ctx: &mut RangeCtx,
        log: &mut Vec<(Name, Expr)>,
    ) -> std::result::Result<Expr, Blocked> {
        Ok(match e {
            Expr::Int(_) | Expr::N => e.clone(),
            Expr::Var(x) => match self.scalars.get(x) {
                None => e.clone(),
                Some(Some(v)) => {
                    log.push((x.clone(), v.clone()));
                    v.clone()
                }
                Some(None) => return Err(Blocked(x.clone())),
            },
            Expr::Read(a, idx) => {
                let idx = idx
                    .iter()
                    .map(|i| self.expr(i, ctx, log))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                self.read(a, &idx, ctx, log)?
            }
            Expr::Bin(op, a, b) => Expr::bin(*op, self.expr(a, ctx, log)?, self.expr(b, ctx, log)?),
            Expr::Neg(a) => Expr::Neg(Box::new(self.expr(a, ctx, log)?)),
            Expr::Ite(c, a, b) => Expr::ite(
                self.formula(c, ctx, log)?,
                self.expr(a, ctx, log)?,
                self.expr(b, ctx, log)?,
            ),
        })
    }

    fn read(
        &self,
        a: &str,
        t: &[Expr],
        ctx: &RangeCtx,
        log: &mut Vec<(Name, Expr)>,
    ) -> std::result::Result<Expr, Blocked> {
        let base = Expr::Read(a.to_string(), t.to_vec());
        let Some(entries) = self.arrays.get(a) else {
            return Ok(base);
        };
        let mut r = base.clone();
        for en in entries {
            match en {
                Entry::Opaque => return Err(Blocked(a.to_string())),
                Entry::Write {
                    guard,
                    index,
                    value,
                } => {
                    let hit = Formula::and(
                        std::iter::once(guard.clone())
                            .chain(
                                t.iter()
                                    .zip(index)
                                    .map(|(x, y)| Formula::eq(x.clone(), y.clone())),
                            )
                            .collect(),
                    );
                    r = match simplify_in(&hit, ctx) {
                        Formula::Bool(true) => value.clone(),
                        Formula::Bool(false) => r,
                        h => Expr::ite(h, value.clone(), r),
                    };
                }
                Entry::Fill { guard, fill } => {
                    let Some(Expr::Ite(cond, value, _)) = crate::logic::wp::fill_read(fill, t)
                    else {
                        return Err(Blocked(a.to_string()));
                    };
                    let hit = Formula::and(vec![guard.clone(), *cond]);
                    r = match simplify_in(&hit, ctx) {
                        Formula::Bool(true) => *value,
                        Formula::Bool(false) => r,
                        h => Expr::ite(h, *value, r),
                    };
                }
            }
        }
        if r != base {
            log.push((a.to_string(), r.clone()));
        }
        Ok(r)
    }

    fn formula(
        &self,
        f: &Formula,
        ctx: &mut RangeCtx,
        log: &mut Vec<(Name, Expr)>,
    ) -> std::result::Result<Formula, Blocked> {
        // Each operand is rewritten once; a bottom-up map would substitute into substituted values.
        let all = |v: &[Formula], ctx: &mut RangeCtx, log: &mut Vec<(Name, Expr)>| {
            v.iter()
                .map(|g| self.formula(g, ctx, log))
                .collect::<std::result::Result<Vec<_>, _>>()
        };
        Ok(match f {
            Formula::Bool(_) => f.clone(),
            Formula::Cmp(r, a, b) => {
                Formula::Cmp(*r, self.expr(a, ctx, log)?, self.expr(b, ctx, log)?)
            }
            Formula::Not(g) => Formula::Not(Box::new(self.formula(g, ctx, log)?)),
            Formula::And(v) => Formula::And(all(v, ctx, log)?),
            Formula::Or(v) => Formula::Or(all(v, ctx, log)?),
            Formula::Implies(a, b) => Formula::Implies(
                Box::new(self.formula(a, ctx, log)?),
                Box::new(self.formula(b, ctx, log)?),
            ),
            Formula::Forall(..) | Formula::Exists(..) => {
                return Err(Blocked("quantified condition".into()))
            }
        })
    }

    fn mark_opaque(&mut self, s: &Stmt) {
        let mut ws = BTreeSet::new();
        s.written_scalars(&mut ws);
        for x in ws {
            self.scalars.insert(x, None);
        }
        let mut wa = BTreeSet::new();
        s.written_arrays(&mut wa);
        for a in wa {
            self.arrays.entry(a).or_default().push(Entry::Opaque);
        }
    }

    /// Executes a peel statement symbolically on top of the current effects.
    fn apply(&mut self, s: &Stmt, guard: &Formula, ctx: &mut RangeCtx) {
        let mut log = Vec::new();
        match s {
            Stmt::Seq(v) => v.iter().for_each(|x| self.apply(x, guard, ctx)),
            Stmt::Assign(x, e) => {
                let v = self.expr(e, ctx, &mut log).ok().map(|v| simplify_expr(&v));
                let v = match (v, guard) {
                    (v, Formula::Bool(true)) => v,
                    (Some(v), g) => {
                        let old = self.expr(&Expr::var(x), ctx, &mut log).ok();
                        old.map(|o| Expr::ite(g.clone(), v, o))
                    }
                    (None, _) => None,
                };
                self.scalars.insert(x.clone(), v);
            }
            Stmt::Store(a, idx, e) => {
                let index: std::result::Result<Vec<Expr>, _> = idx
                    .iter()
                    .map(|i| self.expr(i, ctx, &mut log).map(|v| simplify_expr(&v)))
                    .collect();
                let value = self.expr(e, ctx, &mut log).map(|v| simplify_expr(&v));
                let entry = match (index, value) {
                    (Ok(index), Ok(value)) => Entry::Write {
                        guard: guard.clone(),
                        index,
                        value,
                    },
                    _ => Entry::Opaque,
                };
                self.arrays.entry(a.clone()).or_default().push(entry);
            }
            Stmt::If(c, a, b) => {
                let Ok(g) = self.formula(c, ctx, &mut log) else {
                    self.mark_opaque(s);
                    return;
                };
                let g = simplify(&g);
                let before = self.clone();
                let mut ea = self.clone();
                ea.apply(
                    a,
                    &simplify(&Formula::and(vec![guard.clone(), g.clone()])),
                    ctx,
                );
                let mut eb = before.clone();
                eb.apply(
                    b,
                    &simplify(&Formula::and(vec![guard.clone(), Formula::not(g.clone())])),
                    ctx,
                );
                // Branch effects were already guarded; combine them.
                let mut merged = before.clone();
                let names: BTreeSet<Name> = ea
                    .scalars
                    .keys()
                    .chain(eb.scalars.keys())
                    .cloned()
                    .collect();
                for x in names {
                    let va = ea.scalars.get(&x).cloned().unwrap_or(Some(Expr::var(&x)));
                    let vb = eb.scalars.get(&x).cloned().unwrap_or(Some(Expr::var(&x)));
                    let v = match (va, vb) {
                        (Some(p), Some(q)) if p == q => Some(p),
                        (Some(p), Some(q)) => Some(Expr::ite(g.clone(), p, q)),
                        _ => None,
                    };
                    merged.scalars.insert(x, v);
                }
                for (arr, entries) in &ea.arrays {
                    let start = before.arrays.get(arr).map_or(0, Vec::len);
                    merged
                        .arrays
                        .entry(arr.clone())
                        .or_default()
                        .extend(entries[start..].iter().cloned());
                }
                for (arr, entries) in &eb.arrays {
                    let start = before.arrays.get(arr).map_or(0, Vec::len);
                    merged
                        .arrays
                        .entry(arr.clone())
                        .or_default()
                        .extend(entries[start..].iter().cloned());
                }
                *self = merged;
            }
            Stmt::Fill(f) => {
                let lo = self.expr(&f.lo, ctx, &mut log);
                let hi = self.expr(&f.hi, ctx, &mut log);
                let (Ok(lo), Ok(hi)) = (lo, hi) else {
                    self.mark_opaque(s);
                    return;
                };
                ctx.push(&f.counter, lo.clone(), hi.clone());
                let index: std::result::Result<Vec<Expr>, _> = f
                    .index
                    .iter()
                    .map(|i| self.expr(i, ctx, &mut log))
                    .collect();
                let rhs = self.expr(&f.rhs, ctx, &mut log);
                ctx.pop();
                let entry = match (index, rhs) {
                    (Ok(index), Ok(rhs)) => Entry::Fill {
                        guard: guard.clone(),
                        fill: Fill {
                            counter: f.counter.clone(),
                            lo,
                            hi,
                            array: f.array.clone(),
                            index,
                            rhs: simplify_expr(&rhs),
                        },
                    },
                    _ => Entry::Opaque,
                };
                self.arrays.entry(f.array.clone()).or_default().push(entry);
            }
            Stmt::For(_) | Stmt::ArrayCopy(..) => self.mark_opaque(s),
        }
    }

    /// Rewrites the reads of a `Q` statement. Loop bounds are in scope for range decisions.
    fn repair(
        &self,
        s: &Stmt,
        ctx: &mut RangeCtx,
        log: &mut Vec<(Name, Expr)>,
    ) -> std::result::Result<Stmt, Blocked> {
        Ok(match s {
            Stmt::Seq(v) => Stmt::Seq(
                v.iter()
                    .map(|x| self.repair(x, ctx, log))
                    .collect::<std::result::Result<_, _>>()?,
            ),
            Stmt::Assign(x, e) => Stmt::Assign(x.clone(), self.expr(e, ctx, log)?),
            Stmt::Store(a, idx, e) => Stmt::Store(
                a.clone(),
                idx.iter()
                    .map(|i| self.expr(i, ctx, log))
                    .collect::<std::result::Result<_, _>>()?,
                self.expr(e, ctx, log)?,
            ),
            Stmt::ArrayCopy(d, src) => {
                let mut out = vec![Stmt::ArrayCopy(d.clone(), src.clone())];
                for en in self.arrays.get(src).map(Vec::as_slice).unwrap_or(&[]) {
                    out.push(match en {
                        Entry::Opaque => return Err(Blocked(src.clone())),
                        Entry::Write {
                            guard,
                            index,
                            value,
                        } => guarded(guard, Stmt::Store(d.clone(), index.clone(), value.clone())),
                        Entry::Fill { guard, fill } => guarded(
                            guard,
                            Stmt::Fill(Fill {
                                array: d.clone(),
                                ..fill.clone()
                            }),
                        ),
                    });
                }
                Stmt::seq(out)
            }
            Stmt::If(c, a, b) => Stmt::If(
                self.formula(c, ctx, log)?,
                Box::new(self.repair(a, ctx, log)?),
                Box::new(self.repair(b, ctx, log)?),
            ),
            Stmt::For(l) => {
                let ub = self.expr(&l.ub, ctx, log)?;
                ctx.push(&l.counter, Expr::Int(0), ub.clone());
                let body = self.repair(&l.body, ctx, log);
                ctx.pop();
                Stmt::For(Loop {
                    counter: l.counter.clone(),
                    ub,
                    body: Box::new(body?),
                })
            }
            Stmt::Fill(f) => {
                let lo = self.expr(&f.lo, ctx, log)?;
                let hi = self.expr(&f.hi, ctx, log)?;
                ctx.push(&f.counter, lo.clone(), hi.clone());
                let index = f
                    .index
                    .iter()
                    .map(|i| self.expr(i, ctx, log))
                    .collect::<std::result::Result<Vec<_>, _>>();
                let rhs = self.expr(&f.rhs, ctx, log);
                ctx.pop();
                Stmt::Fill(Fill {
                    counter: f.counter.clone(),
                    lo,
                    hi,
                    array: f.array.clone(),
                    index: index?,
                    rhs: rhs?,
                })
            }
        })
    }
}

fn guarded(g: &Formula, s: Stmt) -> Stmt {
    match g {
        Formula::Bool(true) => s,
        g => Stmt::If(g.clone(), Box::new(s), Box::new(Stmt::skip())),
    }
}

struct Gen<'a> {
    peeler: Peeler<'a>,
    per_loop: Vec<(Stmt, Stmt)>,
    subs: Vec<Substitution>,
    site: usize,
}

impl Gen<'_> {
    fn block(&mut self, items: &[Stmt], eff: &mut Effects) -> Result<(Vec<Stmt>, Vec<Stmt>)> {
        let n_min = self.peeler.n_min;
        let mut q = Vec::new();
        let mut peel = Vec::new();
        for s in items {
            self.site += 1;
            let mut log = Vec::new();
            let blocked = |b: Blocked| {
                TransformError::PeelSubstitutionBlocked(format!(
                    "{} is written by a peel that has no closed form",
                    b.0
                ))
            };
            match s {
                Stmt::For(l) => {
                    let q_l = truncate(s);
                    let repaired = eff
                        .repair(&q_l, &mut RangeCtx::new(n_min), &mut log)
                        .map_err(blocked)?;
                    let r = self.peeler.peel_loop(l, &[])?;
                    let r = summarize_all(&r, &mut RangeCtx::new(n_min));
                    self.per_loop.push((q_l, r.clone()));
                    eff.apply(&r, &Formula::Bool(true), &mut RangeCtx::new(n_min));
                    q.push(repaired);
                    peel.push(r);
                }
                Stmt::If(c, a, b) if s.has_loop() => {
                    let cq = eff
                        .formula(c, &mut RangeCtx::new(n_min), &mut log)
                        .map_err(blocked)?;
                    let cq = simplify(&cq);
                    let before = eff.clone();
                    let mut ea = before.clone();
                    let (qa, pa) = self.block(&a.flatten(), &mut ea)?;
                    let mut eb = before.clone();
                    let (qb, pb) = self.block(&b.flatten(), &mut eb)?;
                    q.push(Stmt::If(
                        cq.clone(),
                        Box::new(Stmt::seq(qa)),
                        Box::new(Stmt::seq(qb)),
                    ));
                    let pa = Stmt::seq(pa);
                    let pb = Stmt::seq(pb);
                    if !(pa.is_skip() && pb.is_skip()) {
                        peel.push(Stmt::If(
                            c.clone(),
                            Box::new(pa.clone()),
                            Box::new(pb.clone()),
                        ));
                        let mut merged = before.clone();
                        merged.apply(
                            &Stmt::If(cq, Box::new(pa), Box::new(pb)),
                            &Formula::Bool(true),
                            &mut RangeCtx::new(n_min),
                        );
                        *eff = merged;
                    }
                }
                other => {
                    q.push(
                        eff.repair(other, &mut RangeCtx::new(n_min), &mut log)
                            .map_err(blocked)?,
                    );
                }
            }
            let site = self.site;
            for (var, rhs) in log {
                let sub = Substitution { var, rhs, site };
                if !self.subs.contains(&sub) {
                    self.subs.push(sub);
                }
            }
        }
        Ok((q, peel))
    }
}

/// Builds `Q_{N-1}` and `peel(P_N)` for an SSA-renamed program.
pub fn gen_q_and_peel(p: &Program, solver: &Solver, n_min: i128) -> Result<QAndPeel> {
    let mut gen = Gen {
        peeler: Peeler { solver, n_min },
        per_loop: Vec::new(),
        subs: Vec::new(),
        site: 0,
    };
    let mut eff = Effects::default();
    let (q, peel) = gen.block(&p.body.flatten(), &mut eff)?;
    let mut qp = Program::new(Stmt::seq(q));
    qp.refresh_symbols(&p.arrays);
    let mut pp = Program::new(Stmt::seq(peel));
    pp.refresh_symbols(&p.arrays);
    Ok(QAndPeel {
        q: qp,
        peel: pp,
        per_loop: gen.per_loop,
        substitutions: gen.subs,
    })
}

/// `(Q_L, R_L)` for one top-level loop.
pub fn gen_q_and_peel_for_loop(l: &Loop, solver: &Solver, n_min: i128) -> Result<(Stmt, Stmt)> {
    let peeler = Peeler { solver, n_min };
    let r = peeler.peel_loop(l, &[])?;
    Ok((truncate(&Stmt::For(l.clone())), r))
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use rand::SeedableRng;

    use super::*;
    use crate::frontend::parse;
    use crate::interp::{run, Env};
    use crate::ssa::ssa_rename;

    fn solver() -> Solver {
        Solver::from_env(Duration::from_secs(10))
    }

    fn split(src: &str) -> (crate::ssa::SsaProgram, QAndPeel) {
        let (p, spec) = parse(src).unwrap();
        let s = ssa_rename(&p, &spec).unwrap();
        let qp = gen_q_and_peel(&s.program, &solver(), 1).unwrap();
        (s, qp)
    }

    /// `P_N` and `Q_{N-1}; peel(P_N)` agree on every final value.
    fn equivalent(src: &str) -> QAndPeel {
        let (s, qp) = split(src);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in 1..=5 {
            for _ in 0..10 {
                let mut e1 = Env::random(&s.program, n, &mut rng, -4, 4);
                let mut e2 = e1.clone();
                e2.complete(&qp.q);
                e2.complete(&qp.peel);
                run(&s.program, &mut e1).unwrap();
                run(&qp.q, &mut e2).unwrap();
                run(&qp.peel, &mut e2).unwrap();
                let ctx = || {
                    format!(
                        "N={n}\nQ:\n{}\npeel:\n{}",
                        qp.q.body.render(),
                        qp.peel.body.render()
                    )
                };
                for v in s.finals.values() {
                    if let Some(a) = e1.arrays.get(v) {
                        assert_eq!(a, &e2.arrays[v], "{v}: {}", ctx());
                    } else {
                        assert_eq!(e1.scalars[v], e2.scalars[v], "{v}: {}", ctx());
                    }
                }
            }
        }
        qp
    }

    #[test]
    fn running_example_repairs_read() {
        let qp = equivalent(
            "x = 0; for (i = 0; i < N; i++) { x = x + N*N; a[i] = a[i] + N; }
             for (j = 0; j < N; j++) { b[j] = x + j; }",
        );
        let q = qp.q.body.render();
        assert!(q.contains("x_2 + N * N + j"), "{q}");
        assert!(!qp.peel.body.has_loop());
        assert!(qp.substitutions.iter().any(|s| s.var == "x_2"));
    }

    #[test]
    fn loop_free_program() {
        let qp = equivalent("x = 1; y = x + N;");
        assert!(qp.peel.body.is_skip());
        assert!(qp.per_loop.is_empty());
    }

    #[test]
    fn nested_fill_peel() {
        let src = "for (i = 0; i < N; i++) { for (j = 0; j < N; j++) { A[i][j] = N; } }";
        let qp = equivalent(src);
        let (p, _) = parse(src).unwrap();
        let Stmt::For(l) = &p.body.flatten()[0] else {
            panic!()
        };
        let (q, r) = gen_q_and_peel_for_loop(l, &solver(), 1).unwrap();
        assert_eq!(q.render().matches("N - 1").count(), 2, "{}", q.render());
        let want = "for (i = 0; i < N - 1; i++) {\n  A[i][N - 1] = N;\n}\nfor (j = 0; j < N; j++) {\n  A[N - 1][j] = N;\n}\n";
        assert_eq!(r.render(), want);
        assert_eq!(nesting_depth(&qp.peel), 0);
    }

    #[test]
    fn motivating_nested_with_scalar_dependency() {
        let qp = equivalent(
            "S = 0; for (i = 0; i < N; i++) { A[i] = 0; } for (j = 0; j < N; j++) { S = S + 1; }
             for (k = 0; k < N; k++) { for (l = 0; l < N; l++) { A[l] = A[l] + 1; } A[k] = A[k] + S; }",
        );
        assert!(nesting_depth(&qp.peel) < 2);
    }

    #[test]
    fn more_programs_agree() {
        for src in [
            "for (i = 0; i < N; i++) { if (a[i] > 0) { s = s + a[i]; } else { s = s - 1; } }",
            "for (i = 0; i < N; i++) { a[i] = i; } for (k = 0; k < N; k++) { s = s + a[k]; }",
            "for (i = 0; i < N; i++) { for (j = 0; j < i; j++) { s = s + 1; } }",
            "for (i = 0; i < N; i++) { for (j = 0; j < N; j++) { for (k = 0; k < N; k++) { s = s + 1; } } }",
            "for (i = 0; i < 2*N; i++) { a[i / 2] = i; }",
            "m = 0; for (i = 0; i < N; i++) { if (a[i] > m) { m = a[i]; } } for (j = 0; j < N; j++) { b[j] = m; }",
            "if (N > 2) { for (i = 0; i < N; i++) { a[i] = 1; } } else { x = 1; } y = x;",
        ] {
            equivalent(src);
        }
    }

    #[test]
    fn lpeel_cases() {
        let (p, _) = parse("for (i = 0; i < N; i++) { a[i] = i + 1; }").unwrap();
        let Stmt::For(l) = &p.body.flatten()[0] else {
            panic!()
        };
        let one = lpeel(l, &Expr::n_minus(1), &Expr::N);
        assert_eq!(one.render(), "a[N - 1] = N;\n");
        let two = lpeel(l, &Expr::n_minus(1), &Expr::add(Expr::N, Expr::Int(1)));
        assert_eq!(two.flatten().len(), 2);
        let res = lpeel(l, &Expr::Int(0), &Expr::N);
        assert!(res.has_loop());
        // The residual loop behaves like the original.
        for n in 1..=4 {
            let mut e1 = Env::new(n);
            let mut e2 = Env::new(n);
            e1.complete(&p);
            e2.complete(&p);
            run(&p, &mut e1).unwrap();
            let rp = Program::new(res.clone());
            run(&rp, &mut e2).unwrap();
            assert_eq!(e1.arrays["a"], e2.arrays["a"]);
        }
    }

    fn summarized(src: &str) -> Stmt {
        let (p, _) = parse(src).unwrap();
        summarize_peel_loop(&p.body.flatten()[0], &RangeCtx::new(1)).expect("summary")
    }

    #[test]
    fn summaries() {
        assert_eq!(
            summarized("for (l = 0; l < N; l++) { S = S + 1; }").render(),
            "S = S + N;\n"
        );
        assert_eq!(
            summarized("for (l = 0; l < N; l++) { S = S + c; }").render(),
            "S = c * N + S;\n"
        );
        let tri = summarized("for (l = 0; l < N; l++) { S = S + l; }");
        for n in 1..=6 {
            let mut e = Env::new(n);
            e.scalars.insert("S".into(), 3);
            run(&Program::new(tri.clone()), &mut e).unwrap();
            assert_eq!(e.scalars["S"], 3 + n * (n - 1) / 2);
        }
        assert!(matches!(
            summarized("for (l = 0; l < N; l++) { A[l] = A[l] + 1; }"),
            Stmt::Fill(_)
        ));
        let (p, _) = parse("for (l = 0; l < N; l++) { S = S * 2; }").unwrap();
        assert!(summarize_peel_loop(&p.body, &RangeCtx::new(1)).is_none());
    }

    #[test]
    fn nesting_depths() {
        let (p, _) =
            parse("for (k = 0; k < N; k++) { for (l = 0; l < N; l++) { A[l] = A[l] + 1; } }")
                .unwrap();
        assert_eq!(nesting_depth(&p), 2);
        assert_eq!(nesting_depth(&parse("x = 1;").unwrap().0), 0);
        let (p, _) = parse(
            "for (i = 0; i < N; i++) { for (j = 0; j < N; j++) { for (k = 0; k < N; k++) { s = s + a[k]; } } }",
        )
        .unwrap();
        let Stmt::For(l) = &p.body.flatten()[0] else {
            panic!()
        };
        let (_, r) = gen_q_and_peel_for_loop(l, &solver(), 1).unwrap();
        assert_eq!(r.depth(), 2);
    }

    #[test]
    fn dependent_inner_peel_is_blocked() {
        let (p, spec) =
            parse("for (i = 0; i < N; i++) { for (j = 0; j < N; j++) { s = a[j]; } b[i] = s; }")
                .unwrap();
        let ssa = ssa_rename(&p, &spec).unwrap();
        let err = gen_q_and_peel(&ssa.program, &solver(), 1).unwrap_err();
        assert!(
            matches!(err, TransformError::PeelSubstitutionBlocked(_)),
            "{err}"
        );
    }

    #[test]
    fn disjoint_rows_commute() {
        equivalent("for (i = 0; i < N; i++) { for (j = 0; j < N; j++) { B[N - 1 - i][j] = B[N - 1 - i][j] * 2 + j; } C[i] = i; }");
    }
}
