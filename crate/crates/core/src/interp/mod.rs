//! Concrete execution and bounded checking at a fixed `N`.

pub mod fixed;

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ast::{BinOp, Expr, Formula, Name, Program, Stmt};

pub use fixed::{check_fixed_n, replay, FixedResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("unbound variable {0}")]
    Unbound(Name),
    #[error("index {index:?} out of bounds for {array}")]
    IndexOutOfBounds { array: Name, index: Vec<i128> },
    #[error("division by zero")]
    DivisionByZero,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("unroll budget of {0} statements exceeded")]
    UnrollBudgetExceeded(usize),
    #[error("quantifier range too large: {0}")]
    RangeTooLarge(i128),
}

/// Dense array of `n^dims` cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ArrayVal {
    pub dims: usize,
    pub n: usize,
    pub data: Vec<i128>,
}

impl ArrayVal {
    pub fn filled(dims: usize, n: usize, v: i128) -> ArrayVal {
        ArrayVal {
            dims,
            n,
            data: vec![v; n.pow(dims as u32)],
        }
    }

    fn offset(&self, idx: &[i128]) -> Option<usize> {
        if idx.len() != self.dims {
            return None;
        }
        let mut off = 0usize;
        for &i in idx {
            if i < 0 || i >= self.n as i128 {
                return None;
            }
            off = off * self.n + i as usize;
        }
        Some(off)
    }

    pub fn get(&self, idx: &[i128]) -> Option<i128> {
        self.offset(idx).map(|o| self.data[o])
    }

    pub fn set(&mut self, idx: &[i128], v: i128) -> bool {
        match self.offset(idx) {
            Some(o) => {
                self.data[o] = v;
                true
            }
            None => false,
        }
    }

    /// All index tuples in row-major order.
    pub fn indices(&self) -> Vec<Vec<i128>> {
        let mut out = vec![Vec::new()];
        for _ in 0..self.dims {
            let mut next = Vec::new();
            for prefix in &out {
                for i in 0..self.n as i128 {
                    let mut p = prefix.clone();
                    p.push(i);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

/// A concrete program state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Env {
    pub n: i128,
    pub scalars: BTreeMap<Name, i128>,
    pub arrays: BTreeMap<Name, ArrayVal>,
}

impl Env {
    pub fn new(n: i128) -> Env {
        Env {
            n,
            scalars: BTreeMap::new(),
            arrays: BTreeMap::new(),
        }
    }

    /// Every scalar and array of `program` drawn uniformly from `[lo, hi]`.
    pub fn random(program: &Program, n: i128, rng: &mut impl Rng, lo: i128, hi: i128) -> Env {
        let mut env = Env::new(n);
        for x in &program.scalars {
            env.scalars.insert(x.clone(), rng.gen_range(lo..=hi));
        }
        for (a, d) in &program.arrays {
            let mut arr = ArrayVal::filled(*d, n.max(0) as usize, 0);
            for v in arr.data.iter_mut() {
                *v = rng.gen_range(lo..=hi);
            }
            env.arrays.insert(a.clone(), arr);
        }
        env
    }

    /// Missing arrays of `program` are added, filled with zeros.
    pub fn complete(&mut self, program: &Program) {
        for (a, d) in &program.arrays {
            self.arrays
                .entry(a.clone())
                .or_insert_with(|| ArrayVal::filled(*d, self.n.max(0) as usize, 0));
        }
        for x in &program.scalars {
            self.scalars.entry(x.clone()).or_insert(0);
        }
    }
}

pub(crate) fn checked(op: BinOp, a: i128, b: i128) -> Result<i128, InterpError> {
    match op {
        BinOp::Add => a.checked_add(b).ok_or(InterpError::Overflow),
        BinOp::Sub => a.checked_sub(b).ok_or(InterpError::Overflow),
        BinOp::Mul => a.checked_mul(b).ok_or(InterpError::Overflow),
        BinOp::Div if b == 0 => Err(InterpError::DivisionByZero),
        BinOp::Mod if b == 0 => Err(InterpError::DivisionByZero),
        BinOp::Div => a.checked_div_euclid(b).ok_or(InterpError::Overflow),
        BinOp::Mod => a.checked_rem_euclid(b).ok_or(InterpError::Overflow),
    }
}

pub fn eval_expr(e: &Expr, env: &Env) -> Result<i128, InterpError> {
    match e {
        Expr::Int(i) => Ok(*i),
        Expr::N => Ok(env.n),
        Expr::Var(x) => env
            .scalars
            .get(x)
            .copied()
            .ok_or_else(|| InterpError::Unbound(x.clone())),
        Expr::Read(a, idx) => {
            let idx = idx
                .iter()
                .map(|i| eval_expr(i, env))
                .collect::<Result<Vec<_>, _>>()?;
            let arr = env
                .arrays
                .get(a)
                .ok_or_else(|| InterpError::Unbound(a.clone()))?;
            arr.get(&idx).ok_or(InterpError::IndexOutOfBounds {
                array: a.clone(),
                index: idx,
            })
        }
        Expr::Bin(op, a, b) => checked(*op, eval_expr(a, env)?, eval_expr(b, env)?),
        Expr::Neg(a) => eval_expr(a, env)?
            .checked_neg()
            .ok_or(InterpError::Overflow),
        Expr::Ite(c, a, b) => {
            if eval_formula(c, env)? {
                eval_expr(a, env)
            } else {
                eval_expr(b, env)
            }
        }
    }
}

/// Largest quantifier range enumerated by [`eval_formula`].
pub const MAX_RANGE: i128 = 1_000_000;

pub fn eval_formula(f: &Formula, env: &Env) -> Result<bool, InterpError> {
    match f {
        Formula::Bool(b) => Ok(*b),
        Formula::Cmp(r, a, b) => Ok(r.holds(eval_expr(a, env)?, eval_expr(b, env)?)),
        Formula::Not(g) => Ok(!eval_formula(g, env)?),
        Formula::And(v) => {
            for g in v {
                if !eval_formula(g, env)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Formula::Or(v) => {
            for g in v {
                if eval_formula(g, env)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Formula::Implies(a, b) => Ok(!eval_formula(a, env)? || eval_formula(b, env)?),
        Formula::Forall(bs, g) | Formula::Exists(bs, g) => {
            let is_all = matches!(f, Formula::Forall(..));
            let mut scratch = env.clone();
            quantify(bs, g, &mut scratch, is_all)
        }
    }
}

fn quantify(
    bs: &[crate::ast::Bound],
    body: &Formula,
    env: &mut Env,
    is_all: bool,
) -> Result<bool, InterpError> {
    let Some((b, rest)) = bs.split_first() else {
        return eval_formula(body, env);
    };
    let lo = eval_expr(&b.lo, env)?;
    let hi = eval_expr(&b.hi, env)?;
    if hi - lo > MAX_RANGE {
        return Err(InterpError::RangeTooLarge(hi - lo));
    }
    let saved = env.scalars.get(&b.var).copied();
    let mut result = is_all;
    for v in lo..hi {
        env.scalars.insert(b.var.clone(), v);
        let r = quantify(rest, body, env, is_all)?;
        if r != is_all {
            result = r;
            break;
        }
    }
    match saved {
        Some(v) => env.scalars.insert(b.var.clone(), v),
        None => env.scalars.remove(&b.var),
    };
    Ok(result)
}

/// Runs `s` on `env`, counting executed statements against `budget`.
pub fn execute(s: &Stmt, env: &mut Env, budget: &mut usize) -> Result<(), InterpError> {
    let limit = *budget;
    exec(s, env, budget).map_err(|e| match e {
        InterpError::UnrollBudgetExceeded(_) => InterpError::UnrollBudgetExceeded(limit),
        e => e,
    })
}

fn tick(budget: &mut usize) -> Result<(), InterpError> {
    if *budget == 0 {
        return Err(InterpError::UnrollBudgetExceeded(0));
    }
    *budget -= 1;
    Ok(())
}

fn exec(s: &Stmt, env: &mut Env, budget: &mut usize) -> Result<(), InterpError> {
    match s {
        Stmt::Seq(v) => v.iter().try_for_each(|x| exec(x, env, budget)),
        Stmt::Assign(x, e) => {
            tick(budget)?;
            let v = eval_expr(e, env)?;
            env.scalars.insert(x.clone(), v);
            Ok(())
        }
        Stmt::Store(a, idx, e) => {
            tick(budget)?;
            let idx = idx
                .iter()
                .map(|i| eval_expr(i, env))
                .collect::<Result<Vec<_>, _>>()?;
            let v = eval_expr(e, env)?;
            let arr = env
                .arrays
                .get_mut(a)
                .ok_or_else(|| InterpError::Unbound(a.clone()))?;
            if arr.set(&idx, v) {
                Ok(())
            } else {
                Err(InterpError::IndexOutOfBounds {
                    array: a.clone(),
                    index: idx,
                })
            }
        }
        Stmt::ArrayCopy(d, src) => {
            tick(budget)?;
            let v = env
                .arrays
                .get(src)
                .cloned()
                .ok_or_else(|| InterpError::Unbound(src.clone()))?;
            env.arrays.insert(d.clone(), v);
            Ok(())
        }
        Stmt::If(c, a, b) => {
            tick(budget)?;
            if eval_formula(c, env)? {
                exec(a, env, budget)
            } else {
                exec(b, env, budget)
            }
        }
        Stmt::For(l) => {
            let ub = eval_expr(&l.ub, env)?;
            let saved = env.scalars.get(&l.counter).copied();
            let mut k = 0;
            while k < ub {
                tick(budget)?;
                env.scalars.insert(l.counter.clone(), k);
                exec(&l.body, env, budget)?;
                k += 1;
            }
            match saved {
                Some(v) => env.scalars.insert(l.counter.clone(), v),
                None => env.scalars.remove(&l.counter),
            };
            Ok(())
        }
        Stmt::Fill(fl) => {
            let lo = eval_expr(&fl.lo, env)?;
            let hi = eval_expr(&fl.hi, env)?;
            // Parallel semantics: all right-hand sides read the state before the fill.
            let before = env.clone();
            let mut scratch = before.clone();
            let mut writes = Vec::new();
            for k in lo..hi {
                tick(budget)?;
                scratch.scalars.insert(fl.counter.clone(), k);
                let idx = fl
                    .index
                    .iter()
                    .map(|i| eval_expr(i, &scratch))
                    .collect::<Result<Vec<_>, _>>()?;
                writes.push((idx, eval_expr(&fl.rhs, &scratch)?));
            }
            let arr = env
                .arrays
                .get_mut(&fl.array)
                .ok_or_else(|| InterpError::Unbound(fl.array.clone()))?;
            for (idx, v) in writes {
                if !arr.set(&idx, v) {
                    return Err(InterpError::IndexOutOfBounds {
                        array: fl.array.clone(),
                        index: idx,
                    });
                }
            }
            Ok(())
        }
    }
}

/// Runs a whole program; the default budget matches the fixed-N checker.
pub fn run(program: &Program, env: &mut Env) -> Result<(), InterpError> {
    let mut budget = DEFAULT_BUDGET;
    execute(&program.body, env, &mut budget)
}

pub const DEFAULT_BUDGET: usize = 100_000;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use rand::SeedableRng;

    #[test]
    fn running_example_post_holds_concretely() {
        let (p, spec) = parse(
            "x = 0; for (i = 0; i < N; i++) { x = x + N*N; a[i] = a[i] + N; }
             for (j = 0; j < N; j++) { b[j] = x + j; }
             // assert(forall j in [0, N) :: b[j] == j + N*N*N)",
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in 0..6 {
            let mut env = Env::random(&p, n, &mut rng, -5, 5);
            run(&p, &mut env).unwrap();
            assert!(eval_formula(&spec.post, &env).unwrap());
            assert_eq!(env.scalars["x"], n * n * n);
        }
    }

    #[test]
    fn euclidean_division() {
        let env = Env::new(3);
        let e = crate::frontend::parse_expr("(0 - 7) / 2 + (0 - 7) % 2 * 10").unwrap();
        assert_eq!(eval_expr(&e, &env).unwrap(), -4 + 10);
    }

    #[test]
    fn out_of_bounds_and_budget() {
        let (p, _) = parse("for (i = 0; i < N; i++) { a[i + 1] = 0; }").unwrap();
        let mut env = Env::random(&p, 3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0), 0, 0);
        assert!(matches!(
            run(&p, &mut env),
            Err(InterpError::IndexOutOfBounds { .. })
        ));
        let (p, _) =
            parse("for (i = 0; i < N; i++) { for (j = 0; j < N; j++) { x = x + 1; } }").unwrap();
        let mut env = Env::random(&p, 50, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0), 0, 0);
        let mut budget = 100;
        assert_eq!(
            execute(&p.body, &mut env, &mut budget),
            Err(InterpError::UnrollBudgetExceeded(100))
        );
    }

    #[test]
    fn quantifiers_enumerate() {
        let (p, _) = parse("a[0] = 1;").unwrap();
        let mut env = Env::random(&p, 3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0), 2, 2);
        run(&p, &mut env).unwrap();
        let f = crate::frontend::parse_formula("exists i in [0, N) :: a[i] == 1").unwrap();
        assert!(eval_formula(&f, &env).unwrap());
        let g = crate::frontend::parse_formula("forall i in [0, N) :: a[i] == 1").unwrap();
        assert!(!eval_formula(&g, &env).unwrap());
    }
}
