//! Bounded verification at one concrete `N` by forward symbolic execution.
//!
//! Loops are unrolled, scalars and array cells become terms over the entry
//! symbols, and the Hoare triple turns into one quantifier-free query.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::{Expr, Formula, Name, Program, Stmt};
use crate::interp::{eval_formula, execute, ArrayVal, Env, InterpError};
use crate::logic::smt::{ModelRequest, Solver, Validity};
use crate::poly::simplify_expr;

#[derive(Clone, Debug, PartialEq)]
pub enum FixedResult {
    Valid,
    /// Entry state satisfying the pre whose run violates the post.
    Invalid(Env),
    Unknown(String),
}

struct Sym<'a> {
    n: i128,
    dims: &'a BTreeMap<Name, usize>,
    scalars: BTreeMap<Name, Expr>,
    arrays: BTreeMap<Name, Vec<Expr>>,
    /// Loop counters and expanded quantifier variables.
    concrete: BTreeMap<Name, i128>,
    defs: Vec<Formula>,
    fresh: usize,
    budget: usize,
}

fn cells(dims: usize, n: i128) -> Vec<Vec<i128>> {
    ArrayVal::filled(dims, n.max(0) as usize, 0).indices()
}

fn offset(idx: &[i128], n: i128) -> Option<usize> {
    let mut off = 0usize;
    for &i in idx {
        if i < 0 || i >= n {
            return None;
        }
        off = off * n as usize + i as usize;
    }
    Some(off)
}

impl Sym<'_> {
    fn tick(&mut self) -> Result<(), InterpError> {
        if self.budget == 0 {
            return Err(InterpError::UnrollBudgetExceeded(0));
        }
        self.budget -= 1;
        Ok(())
    }

    fn array(&mut self, a: &str) -> &mut Vec<Expr> {
        let n = self.n;
        let d = self.dims.get(a).copied().unwrap_or(1);
        self.arrays.entry(a.to_string()).or_insert_with(|| {
            cells(d, n)
                .into_iter()
                .map(|idx| Expr::Read(a.to_string(), idx.into_iter().map(Expr::Int).collect()))
                .collect()
        })
    }

    /// Binds `v` to a fresh constant unless it is already atomic.
    fn name(&mut self, v: Expr) -> Expr {
        match v {
            Expr::Int(_) | Expr::Var(_) => v,
            Expr::Read(_, ref idx) if idx.iter().all(|i| i.as_int().is_some()) => v,
            _ => {
                self.fresh += 1;
                let c = Expr::Var(format!("#{}", self.fresh));
                self.defs.push(Formula::eq(c.clone(), v));
                c
            }
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<Expr, InterpError> {
        Ok(match e {
            Expr::Int(i) => Expr::Int(*i),
            Expr::N => Expr::Int(self.n),
            Expr::Var(x) => match self.concrete.get(x) {
                Some(v) => Expr::Int(*v),
                None => self
                    .scalars
                    .get(x)
                    .cloned()
                    .unwrap_or_else(|| Expr::Var(x.clone())),
            },
            Expr::Read(a, idx) => {
                let idx = idx
                    .iter()
                    .map(|i| self.index(i))
                    .collect::<Result<Vec<_>, _>>()?;
                self.read(a, &idx)?
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (self.expr(a)?, self.expr(b)?);
                if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
                    if let Ok(v) = super::checked(*op, x, y) {
                        return Ok(Expr::Int(v));
                    }
                }
                Expr::bin(*op, a, b)
            }
            Expr::Neg(a) => match self.expr(a)? {
                Expr::Int(i) if i != i128::MIN => Expr::Int(-i),
                a => Expr::Neg(Box::new(a)),
            },
            Expr::Ite(c, a, b) => match self.formula(c)? {
                Formula::Bool(true) => self.expr(a)?,
                Formula::Bool(false) => self.expr(b)?,
                c => Expr::ite(c, self.expr(a)?, self.expr(b)?),
            },
        })
    }

    fn index(&mut self, e: &Expr) -> Result<Expr, InterpError> {
        let v = self.expr(e)?;
        Ok(if v.as_int().is_some() {
            v
        } else {
            simplify_expr(&v)
        })
    }

    fn read(&mut self, a: &str, idx: &[Expr]) -> Result<Expr, InterpError> {
        let n = self.n;
        if let Some(ix) = idx.iter().map(Expr::as_int).collect::<Option<Vec<_>>>() {
            let off = offset(&ix, n).ok_or_else(|| InterpError::IndexOutOfBounds {
                array: a.to_string(),
                index: ix,
            })?;
            return Ok(self.array(a)[off].clone());
        }
        // Data-dependent index: select among all cells.
        let d = idx.len();
        let all = self.array(a).clone();
        let mut out: Option<Expr> = None;
        for (k, ix) in cells(d, n).into_iter().enumerate().rev() {
            let cell = all[k].clone();
            out = Some(match out {
                None => cell,
                Some(rest) => {
                    let guard = Formula::and(
                        idx.iter()
                            .zip(&ix)
                            .map(|(e, v)| Formula::eq(e.clone(), Expr::Int(*v)))
                            .collect(),
                    );
                    Expr::ite(guard, cell, rest)
                }
            });
        }
        Ok(self.name(out.unwrap_or(Expr::Int(0))))
    }

    fn formula(&mut self, f: &Formula) -> Result<Formula, InterpError> {
        Ok(match f {
            Formula::Bool(b) => Formula::Bool(*b),
            Formula::Cmp(r, a, b) => {
                let (a, b) = (self.expr(a)?, self.expr(b)?);
                match (a.as_int(), b.as_int()) {
                    (Some(x), Some(y)) => Formula::Bool(r.holds(x, y)),
                    _ => Formula::Cmp(*r, a, b),
                }
            }
            Formula::Not(g) => Formula::not(self.formula(g)?),
            Formula::And(v) => Formula::and(
                v.iter()
                    .map(|g| self.formula(g))
                    .collect::<Result<_, _>>()?,
            ),
            Formula::Or(v) => Formula::or(
                v.iter()
                    .map(|g| self.formula(g))
                    .collect::<Result<_, _>>()?,
            ),
            Formula::Implies(a, b) => Formula::implies(self.formula(a)?, self.formula(b)?),
            Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
                let all = matches!(f, Formula::Forall(..));
                let mut parts = Vec::new();
                self.expand(bs, g, &mut parts)?;
                if all {
                    Formula::and(parts)
                } else {
                    Formula::or(parts)
                }
            }
        })
    }

    fn expand(
        &mut self,
        bs: &[crate::ast::Bound],
        body: &Formula,
        out: &mut Vec<Formula>,
    ) -> Result<(), InterpError> {
        let Some((b, rest)) = bs.split_first() else {
            out.push(self.formula(body)?);
            return Ok(());
        };
        let (lo, hi) = (self.expr(&b.lo)?, self.expr(&b.hi)?);
        let (Some(lo), Some(hi)) = (lo.as_int(), hi.as_int()) else {
            return Err(InterpError::Unbound(format!("symbolic bound of {}", b.var)));
        };
        let saved = self.concrete.get(&b.var).copied();
        for v in lo..hi {
            self.tick()?;
            self.concrete.insert(b.var.clone(), v);
            self.expand(rest, body, out)?;
        }
        match saved {
            Some(v) => self.concrete.insert(b.var.clone(), v),
            None => self.concrete.remove(&b.var),
        };
        Ok(())
    }

    fn exec(&mut self, s: &Stmt) -> Result<(), InterpError> {
        match s {
            Stmt::Seq(v) => v.iter().try_for_each(|x| self.exec(x)),
            Stmt::Assign(x, e) => {
                self.tick()?;
                let v = self.expr(e)?;
                let v = self.name(v);
                self.scalars.insert(x.clone(), v);
                Ok(())
            }
            Stmt::Store(a, idx, e) => {
                self.tick()?;
                let idx = idx
                    .iter()
                    .map(|i| self.index(i))
                    .collect::<Result<Vec<_>, _>>()?;
                let v = self.expr(e)?;
                let v = self.name(v);
                self.store(a, &idx, v)
            }
            Stmt::ArrayCopy(d, src) => {
                self.tick()?;
                let v = self.array(src).clone();
                self.arrays.insert(d.clone(), v);
                Ok(())
            }
            Stmt::If(c, a, b) => {
                self.tick()?;
                match self.formula(c)? {
                    Formula::Bool(true) => self.exec(a),
                    Formula::Bool(false) => self.exec(b),
                    c => {
                        let (s0, a0) = (self.scalars.clone(), self.arrays.clone());
                        self.exec(a)?;
                        let (s1, a1) = (
                            std::mem::replace(&mut self.scalars, s0),
                            std::mem::replace(&mut self.arrays, a0),
                        );
                        self.exec(b)?;
                        self.merge(&c, s1, a1);
                        Ok(())
                    }
                }
            }
            Stmt::For(l) => {
                let ub = self.expr(&l.ub)?;
                let Some(ub) = ub.as_int() else {
                    return Err(InterpError::Unbound(format!(
                        "symbolic bound of {}",
                        l.counter
                    )));
                };
                let saved = self.concrete.get(&l.counter).copied();
                for k in 0..ub {
                    self.tick()?;
                    self.concrete.insert(l.counter.clone(), k);
                    self.exec(&l.body)?;
                }
                match saved {
                    Some(v) => self.concrete.insert(l.counter.clone(), v),
                    None => self.concrete.remove(&l.counter),
                };
                Ok(())
            }
            Stmt::Fill(fl) => {
                let (lo, hi) = (self.expr(&fl.lo)?, self.expr(&fl.hi)?);
                let (Some(lo), Some(hi)) = (lo.as_int(), hi.as_int()) else {
                    return Err(InterpError::Unbound(format!(
                        "symbolic bound of {}",
                        fl.counter
                    )));
                };
                let saved = self.concrete.get(&fl.counter).copied();
                let mut writes = Vec::new();
                for k in lo..hi {
                    self.tick()?;
                    self.concrete.insert(fl.counter.clone(), k);
                    let idx = fl
                        .index
                        .iter()
                        .map(|i| self.index(i))
                        .collect::<Result<Vec<_>, _>>()?;
                    let v = self.expr(&fl.rhs)?;
                    writes.push((idx, self.name(v)));
                }
                match saved {
                    Some(v) => self.concrete.insert(fl.counter.clone(), v),
                    None => self.concrete.remove(&fl.counter),
                };
                writes
                    .into_iter()
                    .try_for_each(|(idx, v)| self.store(&fl.array, &idx, v))
            }
        }
    }

    fn store(&mut self, a: &str, idx: &[Expr], v: Expr) -> Result<(), InterpError> {
        let n = self.n;
        if let Some(ix) = idx.iter().map(Expr::as_int).collect::<Option<Vec<_>>>() {
            let off = offset(&ix, n).ok_or_else(|| InterpError::IndexOutOfBounds {
                array: a.to_string(),
                index: ix,
            })?;
            self.array(a)[off] = v;
            return Ok(());
        }
        let old = self.array(a).clone();
        let mut new = Vec::with_capacity(old.len());
        for (k, ix) in cells(idx.len(), n).into_iter().enumerate() {
            let hit = Formula::and(
                idx.iter()
                    .zip(&ix)
                    .map(|(e, c)| Formula::eq(e.clone(), Expr::Int(*c)))
                    .collect(),
            );
            let cell = Expr::ite(hit, v.clone(), old[k].clone());
            new.push(self.name(cell));
        }
        self.arrays.insert(a.to_string(), new);
        Ok(())
    }

    fn merge(
        &mut self,
        c: &Formula,
        then_s: BTreeMap<Name, Expr>,
        then_a: BTreeMap<Name, Vec<Expr>>,
    ) {
        let names: BTreeSet<Name> = then_s.keys().chain(self.scalars.keys()).cloned().collect();
        for x in names {
            let t = then_s
                .get(&x)
                .cloned()
                .unwrap_or_else(|| Expr::Var(x.clone()));
            let e = self
                .scalars
                .get(&x)
                .cloned()
                .unwrap_or_else(|| Expr::Var(x.clone()));
            if t != e {
                let v = self.name(Expr::ite(c.clone(), t, e));
                self.scalars.insert(x, v);
            }
        }
        for (a, t) in then_a {
            let e = self.array(&a).clone();
            if t == e {
                continue;
            }
            let merged: Vec<Expr> = t
                .into_iter()
                .zip(e)
                .map(|(x, y)| {
                    if x == y {
                        x
                    } else {
                        self.name(Expr::ite(c.clone(), x, y))
                    }
                })
                .collect();
            self.arrays.insert(a, merged);
        }
    }
}

/// Checks `{pre} program {post}` for the single value `n` of `N`.
pub fn check_fixed_n(
    program: &Program,
    pre: &Formula,
    post: &Formula,
    n: i128,
    solver: &Solver,
    budget: usize,
) -> FixedResult {
    let mut dims = program.arrays.clone();
    pre.arrays(&mut dims);
    post.arrays(&mut dims);
    let mut st = Sym {
        n,
        dims: &dims,
        scalars: BTreeMap::new(),
        arrays: BTreeMap::new(),
        concrete: BTreeMap::new(),
        defs: Vec::new(),
        fresh: 0,
        budget,
    };
    let encoded = (|| -> Result<(Formula, Formula), InterpError> {
        let pre_s = st.formula(pre)?;
        st.exec(&program.body)?;
        let post_s = st.formula(post)?;
        Ok((pre_s, post_s))
    })();
    let (pre_s, post_s) = match encoded {
        Ok(x) => x,
        Err(InterpError::UnrollBudgetExceeded(_)) => {
            return FixedResult::Unknown(InterpError::UnrollBudgetExceeded(budget).to_string())
        }
        Err(e) => return FixedResult::Unknown(e.to_string()),
    };
    if post_s == Formula::Bool(true) || pre_s == Formula::Bool(false) {
        return FixedResult::Valid;
    }
    let mut hyps = st.defs;
    hyps.push(pre_s);
    let mut scalars: BTreeSet<Name> = program.scalars.clone();
    let mut names = BTreeSet::new();
    pre.free_names(&mut names);
    post.free_names(&mut names);
    scalars.extend(names.into_iter().filter(|x| !dims.contains_key(x)));
    let mut req = ModelRequest {
        scalars: scalars.iter().cloned().collect(),
        cells: Vec::new(),
    };
    for (a, d) in &dims {
        for ix in cells(*d, n) {
            req.cells.push((a.clone(), ix));
        }
    }
    match solver.check_valid(&hyps, &post_s, &req) {
        Validity::Valid => FixedResult::Valid,
        Validity::Unknown(r) => FixedResult::Unknown(r),
        Validity::Invalid(m) => {
            let mut env = Env::new(n);
            for x in &scalars {
                env.scalars
                    .insert(x.clone(), m.scalars.get(x).copied().unwrap_or(0));
            }
            for (a, d) in &dims {
                let mut arr = ArrayVal::filled(*d, n.max(0) as usize, 0);
                if let Some(cs) = m.cells.get(a) {
                    for (ix, v) in cs {
                        arr.set(ix, *v);
                    }
                }
                env.arrays.insert(a.clone(), arr);
            }
            match replay(program, pre, post, &env, budget) {
                Ok(true) => FixedResult::Invalid(env),
                Ok(false) => FixedResult::Unknown("witness did not replay".into()),
                Err(e) => FixedResult::Unknown(format!("witness replay failed: {e}")),
            }
        }
    }
}

/// True when `env` satisfies `pre` and the run from it violates `post`.
pub fn replay(
    program: &Program,
    pre: &Formula,
    post: &Formula,
    env: &Env,
    budget: usize,
) -> Result<bool, InterpError> {
    if !eval_formula(pre, env)? {
        return Ok(false);
    }
    let mut run = env.clone();
    let mut b = budget;
    execute(&program.body, &mut run, &mut b)?;
    Ok(!eval_formula(post, &run)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use std::time::Duration;

    fn solver() -> Solver {
        Solver::from_env(Duration::from_secs(10))
    }

    #[test]
    fn running_example_small_n() {
        let (p, s) = parse(
            "x = 0; for (i = 0; i < N; i++) { x = x + N*N; }
             for (j = 0; j < N; j++) { b[j] = x + j; }
             // assert(forall j in [0, N) :: b[j] == j + N*N*N)",
        )
        .unwrap();
        for n in 1..4 {
            assert_eq!(
                check_fixed_n(&p, &s.pre, &s.post, n, &solver(), 100_000),
                FixedResult::Valid
            );
        }
    }

    #[test]
    fn finds_witness_with_branches() {
        let (p, s) = parse(
            "for (i = 0; i < N; i++) { if (a[i] > 0) { s = s + a[i]; } }
             // assume(s == 0)
             // assert(s < 5)",
        )
        .unwrap();
        let r = check_fixed_n(&p, &s.pre, &s.post, 2, &solver(), 100_000);
        let FixedResult::Invalid(env) = r else {
            panic!("{r:?}")
        };
        assert!(replay(&p, &s.pre, &s.post, &env, 1000).unwrap());
    }

    #[test]
    fn symbolic_index_store() {
        let (p, s) = parse(
            "a[k] = 7; x = a[k];
             // assume(k >= 0 && k < N)
             // assert(x == 7)",
        )
        .unwrap();
        assert_eq!(
            check_fixed_n(&p, &s.pre, &s.post, 3, &solver(), 1000),
            FixedResult::Valid
        );
    }

    #[test]
    fn budget_reported() {
        let (p, s) =
            parse("for (i = 0; i < N; i++) { for (j = 0; j < N; j++) { x = x + 1; } }").unwrap();
        let r = check_fixed_n(&p, &s.pre, &s.post, 100, &solver(), 50);
        assert!(matches!(r, FixedResult::Unknown(m) if m.contains("50")));
    }
}
