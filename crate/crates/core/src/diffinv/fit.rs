//! Concrete runs of the product and exact polynomial fitting.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::SeedableRng;

use super::{conjuncts, ProductProgram};
use crate::ast::{Expr, Formula, Loop, Name, Rel, Stmt};
use crate::interp::{eval_expr, eval_formula, execute, Env, InterpError, DEFAULT_BUDGET};
use crate::logic::vc::loops_preorder;
use crate::poly::solve_rational;

/// Visits kept per location.
pub const MAX_VISITS: usize = 400;

/// States observed at each loop head (keyed by preorder index) and at exit.
#[derive(Clone, Debug, Default)]
pub struct Samples {
    pub heads: BTreeMap<usize, Vec<Env>>,
    pub exit: Vec<Env>,
}

struct Observer {
    ids: BTreeMap<*const Loop, usize>,
    budget: usize,
}

impl Observer {
    fn run(&mut self, s: &Stmt, env: &mut Env, out: &mut Samples) -> Result<(), InterpError> {
        if !s.has_loop() {
            return execute(s, env, &mut self.budget);
        }
        match s {
            Stmt::Seq(v) => v.iter().try_for_each(|x| self.run(x, env, out)),
            Stmt::If(c, a, b) => {
                if eval_formula(c, env)? {
                    self.run(a, env, out)
                } else {
                    self.run(b, env, out)
                }
            }
            Stmt::For(l) => {
                let id = self.ids[&(l as *const Loop)];
                let ub = eval_expr(&l.ub, env)?;
                let old = env.scalars.get(&l.counter).copied();
                let mut k = 0;
                loop {
                    env.scalars.insert(l.counter.clone(), k);
                    let seen = out.heads.entry(id).or_default();
                    if seen.len() < MAX_VISITS {
                        seen.push(env.clone());
                    }
                    if k >= ub {
                        break;
                    }
                    if self.budget == 0 {
                        return Err(InterpError::UnrollBudgetExceeded(DEFAULT_BUDGET));
                    }
                    self.budget -= 1;
                    self.run(&l.body, env, out)?;
                    k += 1;
                }
                match old {
                    Some(v) => env.scalars.insert(l.counter.clone(), v),
                    None => env.scalars.remove(&l.counter),
                };
                Ok(())
            }
            _ => execute(s, env, &mut self.budget),
        }
    }
}

/// Pins inputs from equality conjuncts of `pre` (scalars, and arrays under
/// a `forall`), then sets the `P` copies of pinned inputs from the entry
/// relation.
fn seed(env: &mut Env, pre: &Formula, entry: &[Formula]) -> Result<(), InterpError> {
    for c in conjuncts(pre).into_iter().chain(entry.iter()) {
        match c {
            Formula::Cmp(Rel::Eq, Expr::Var(x), t) if !t.mentions(x) => {
                let v = eval_expr(t, env)?;
                env.scalars.insert(x.clone(), v);
            }
            Formula::Forall(bs, body) if bs.len() == 1 => {
                if let Formula::Cmp(Rel::Eq, Expr::Read(a, idx), t) = body.as_ref() {
                    let b = &bs[0];
                    if idx.len() == 1 && idx[0] == Expr::var(&b.var) && !t.mentions(a) {
                        let lo = eval_expr(&b.lo, env)?;
                        let hi = eval_expr(&b.hi, env)?;
                        for i in lo..hi {
                            env.scalars.insert(b.var.clone(), i);
                            let v = eval_expr(t, env)?;
                            if let Some(arr) = env.arrays.get_mut(a) {
                                arr.set(&[i], v);
                            }
                        }
                        env.scalars.remove(&b.var);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Runs the product for each `N` in `ns`, `per_n` times, on inputs
/// satisfying `pre` and the entry relation. Runs that fail are skipped.
pub fn sample(
    prod: &ProductProgram,
    pre: &Formula,
    ns: &[i128],
    per_n: usize,
    seed_value: u64,
) -> Samples {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed_value);
    let ids = loops_preorder(&prod.program.body)
        .into_iter()
        .enumerate()
        .map(|(k, l)| (l as *const Loop, k))
        .collect();
    let mut out = Samples::default();
    let mut obs = Observer { ids, budget: 0 };
    let entry = Formula::and(prod.entry.clone());
    for &n in ns {
        let mut got = 0;
        for _ in 0..per_n * 20 {
            if got == per_n {
                break;
            }
            let mut env = Env::random(&prod.program, n, &mut rng, -3, 3);
            if seed(&mut env, pre, &prod.entry).is_err() {
                continue;
            }
            if !matches!(eval_formula(pre, &env), Ok(true))
                || !matches!(eval_formula(&entry, &env), Ok(true))
            {
                continue;
            }
            obs.budget = DEFAULT_BUDGET;
            let mut trial = Samples::default();
            if obs.run(&prod.program.body, &mut env, &mut trial).is_ok() {
                got += 1;
                for (k, v) in trial.heads {
                    let seen = out.heads.entry(k).or_default();
                    let room = MAX_VISITS.saturating_sub(seen.len());
                    seen.extend(v.into_iter().take(room.max(4)));
                }
                out.exit.push(env);
            }
        }
    }
    out
}

/// Monomials of degree at most 2 over `nvars` variables, grouped by
/// template level: constant, linear, quadratic.
fn template(nvars: usize, level: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    if level >= 1 {
        out.extend((0..nvars).map(|i| vec![i]));
    }
    if level >= 2 {
        for i in 0..nvars {
            for j in i..nvars {
                out.push(vec![i, j]);
            }
        }
    }
    out
}

fn rat(v: i128) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// `den * value == sum(coef * monomial)` over the variables `vars`.
#[derive(Clone, Debug, PartialEq)]
pub struct Fitted {
    pub den: i128,
    pub rhs: Expr,
}

/// Fits `value = poly(point)` exactly with the simplest template that is
/// consistent with every row.
pub fn fit(rows: &BTreeMap<Vec<i128>, i128>, vars: &[Expr]) -> Option<Fitted> {
    if rows.is_empty() {
        return None;
    }
    for level in 0..=2 {
        let monos = template(vars.len(), level);
        let matrix: Vec<Vec<BigRational>> = rows
            .keys()
            .map(|pt| {
                monos
                    .iter()
                    .map(|m| m.iter().fold(rat(1), |acc, &i| acc * rat(pt[i])))
                    .collect()
            })
            .collect();
        let rhs: Vec<BigRational> = rows.values().map(|&v| rat(v)).collect();
        let Some(sol) = solve_rational(&matrix, &rhs) else {
            continue;
        };
        let den = sol
            .iter()
            .fold(BigInt::one(), |acc, c| num_integer_lcm(&acc, c.denom()));
        let den_i = den.to_i128()?;
        let mut terms = Vec::new();
        for (m, c) in monos.iter().zip(&sol) {
            if c.is_zero() {
                continue;
            }
            let k = (c * BigRational::from_integer(den.clone()))
                .to_integer()
                .to_i128()?;
            let mono = m.iter().fold(None, |acc: Option<Expr>, &i| {
                Some(match acc {
                    None => vars[i].clone(),
                    Some(e) => Expr::mul(e, vars[i].clone()),
                })
            });
            terms.push(match mono {
                None => Expr::Int(k),
                Some(e) if k == 1 => e,
                Some(e) => Expr::mul(Expr::Int(k), e),
            });
        }
        let rhs = terms.into_iter().reduce(Expr::add).unwrap_or(Expr::Int(0));
        return Some(Fitted {
            den: den_i,
            rhs: crate::poly::simplify_expr(&rhs),
        });
    }
    None
}

fn num_integer_lcm(a: &BigInt, b: &BigInt) -> BigInt {
    let g = gcd(a.clone(), b.clone());
    if g.is_zero() {
        return a.clone();
    }
    (a * b / g).abs()
}

fn gcd(mut a: BigInt, mut b: BigInt) -> BigInt {
    while !b.is_zero() {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a.abs()
}

/// Region of an array: a half-open range per dimension.
pub type Region = Vec<(Expr, Expr)>;

pub(crate) fn cells(region: &Region, env: &Env) -> Vec<Vec<i128>> {
    let mut out = vec![Vec::new()];
    for (lo, hi) in region {
        let (Ok(lo), Ok(hi)) = (eval_expr(lo, env), eval_expr(hi, env)) else {
            return vec![];
        };
        let mut next = Vec::new();
        for p in &out {
            for i in lo.max(0)..hi.min(env.n) {
                let mut q = p.clone();
                q.push(i);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Rows of `f(env, cell)` over the sampled states. `None` when two rows
/// with the same point disagree or a value is missing.
pub(crate) fn rows_for(
    envs: &[Env],
    counters: &[Name],
    region: Option<&Region>,
    value: &dyn Fn(&Env, &[i128]) -> Option<i128>,
) -> Option<BTreeMap<Vec<i128>, i128>> {
    let mut rows = BTreeMap::new();
    for env in envs {
        let mut base = vec![env.n];
        for c in counters {
            base.push(*env.scalars.get(c)?);
        }
        let cs = match region {
            Some(r) => cells(r, env),
            None => vec![vec![]],
        };
        for cell in cs {
            let v = value(env, &cell)?;
            let mut pt = cell.clone();
            pt.extend(&base);
            match rows.insert(pt, v) {
                Some(old) if old != v => return None,
                _ => {}
            }
            if rows.len() > MAX_VISITS {
                return Some(rows);
            }
        }
    }
    Some(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_quadratic_with_rational_coefficients() {
        // value = N * (N - 1) / 2 over points (N).
        let rows: BTreeMap<Vec<i128>, i128> = (1..7).map(|n| (vec![n], n * (n - 1) / 2)).collect();
        let f = fit(&rows, &[Expr::N]).unwrap();
        assert_eq!(f.den, 2);
        for n in 1..7 {
            let env = Env::new(n);
            assert_eq!(eval_expr(&f.rhs, &env).unwrap(), n * (n - 1));
        }
    }

    #[test]
    fn prefers_simplest_template() {
        let rows: BTreeMap<Vec<i128>, i128> = (1..7)
            .flat_map(|n| (0..n).map(move |i| (vec![n, i], 5)))
            .collect();
        let f = fit(&rows, &[Expr::N, Expr::var("i")]).unwrap();
        assert_eq!(
            f,
            Fitted {
                den: 1,
                rhs: Expr::Int(5)
            }
        );
        let rows: BTreeMap<Vec<i128>, i128> = (1..7)
            .flat_map(|n| (0..n).map(move |i| (vec![n, i], i * (2 * n - 1))))
            .collect();
        let f = fit(&rows, &[Expr::N, Expr::var("i")]).unwrap();
        assert_eq!(f.den, 1);
        for n in 1..7 {
            for i in 0..n {
                let mut env = Env::new(n);
                env.scalars.insert("i".into(), i);
                assert_eq!(eval_expr(&f.rhs, &env).unwrap(), i * (2 * n - 1));
            }
        }
    }

    #[test]
    fn cubic_does_not_fit() {
        let rows: BTreeMap<Vec<i128>, i128> = (1..8).map(|n| (vec![n], n * n * n)).collect();
        assert!(fit(&rows, &[Expr::N]).is_none());
    }
}
