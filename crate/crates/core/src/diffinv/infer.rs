use std::collections::BTreeSet;

use serde::Serialize;

use super::fit::{fit, rows_for, sample, Region, Samples};
use super::{DiffInvError, ProductProgram, P_SUFFIX};
use crate::ast::{Bound, Expr, Formula, Name, Rel, Stmt};
use crate::interp::Env;
use crate::logic::smt::Solver;
use crate::logic::vc::{loops_preorder, Invariants, Tag, VcGen, FRAME};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Location {
    /// Head of the loop with this preorder index in the product.
    LoopHead(usize),
    Exit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffInvariant {
    pub location: Location,
    /// Facts relating a `Q` name to its `P` name.
    pub diffs: Vec<Formula>,
    /// Facts about one side alone.
    pub values: Vec<Formula>,
}

impl DiffInvariant {
    pub fn formula(&self) -> Formula {
        Formula::and(self.diffs.iter().chain(&self.values).cloned().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffResult {
    pub heads: Vec<DiffInvariant>,
    pub exit: DiffInvariant,
    pub rounds: usize,
    pub candidates: usize,
}

impl DiffResult {
    /// `D(V_Q, V_P, N-1)` at the end of the product.
    pub fn d_final(&self) -> Formula {
        self.exit.formula()
    }
}

#[derive(Clone, Debug)]
struct Cand {
    tag: Tag,
    loc: Location,
    diff: bool,
    formula: Formula,
}

struct Context<'a> {
    prod: &'a ProductProgram,
    /// Names of `Q` with a distinct `P` copy, and the copy.
    pairs: Vec<(Name, Name)>,
    /// Non-input names of each side, for single-side facts.
    q_only: Vec<Name>,
    p_only: Vec<Name>,
}

fn qvar(k: usize) -> Name {
    format!("q!{k}")
}

/// Per-dimension ranges for arrays at a location with enclosing counters `cs`.
fn dim_options(cs: &[Name], full: &Expr) -> Vec<(Expr, Expr)> {
    let mut out = vec![(Expr::Int(0), full.clone())];
    if *full == Expr::N {
        out.push((Expr::Int(0), Expr::n_minus(1)));
        out.push((Expr::n_minus(1), Expr::N));
    }
    for c in cs {
        let c = Expr::var(c);
        let c1 = Expr::add(c.clone(), Expr::Int(1));
        out.push((Expr::Int(0), c.clone()));
        out.push((c.clone(), full.clone()));
        out.push((c.clone(), c1.clone()));
        out.push((c1.clone(), full.clone()));
        out.push((Expr::Int(0), c1));
    }
    out
}

fn regions(dims: usize, cs: &[Name], full: &Expr) -> Vec<Region> {
    let opts = dim_options(cs, full);
    let mut out: Vec<Region> = vec![vec![]];
    for _ in 0..dims {
        out = out
            .into_iter()
            .flat_map(|r| {
                opts.iter().map(move |o| {
                    let mut r = r.clone();
                    r.push(o.clone());
                    r
                })
            })
            .collect();
    }
    out
}

fn scaled(den: i128, e: Expr) -> Expr {
    if den == 1 {
        e
    } else {
        Expr::mul(Expr::Int(den), e)
    }
}

impl Context<'_> {
    fn scalar_cands(
        &self,
        envs: &[Env],
        cs: &[Name],
        scope: &BTreeSet<Name>,
        loc: &Location,
        out: &mut Vec<Cand>,
    ) {
        let vars: Vec<Expr> = std::iter::once(Expr::N)
            .chain(cs.iter().map(|c| Expr::var(c)))
            .collect();
        let arrays = &self.prod.program.arrays;
        for (q, p) in &self.pairs {
            if arrays.contains_key(q) || !scope.contains(q) {
                continue;
            }
            let rows = rows_for(envs, cs, None, &|e, _| {
                Some(e.scalars.get(q)? - e.scalars.get(p)?)
            });
            if let Some(f) = rows.and_then(|r| fit(&r, &vars)) {
                let lhs = scaled(f.den, Expr::sub(Expr::var(q), Expr::var(p)));
                out.push(Cand {
                    tag: 0,
                    loc: loc.clone(),
                    diff: true,
                    formula: Formula::eq(lhs, f.rhs),
                });
            }
        }
        for x in self.q_only.iter().chain(&self.p_only) {
            if arrays.contains_key(x) || !scope.contains(x) {
                continue;
            }
            let rows = rows_for(envs, cs, None, &|e, _| e.scalars.get(x).copied());
            if let Some(f) = rows.and_then(|r| fit(&r, &vars)) {
                let lhs = scaled(f.den, Expr::var(x));
                out.push(Cand {
                    tag: 0,
                    loc: loc.clone(),
                    diff: false,
                    formula: Formula::eq(lhs, f.rhs),
                });
            }
        }
    }

    fn array_cands(
        &self,
        envs: &[Env],
        cs: &[Name],
        scope: &BTreeSet<Name>,
        loc: &Location,
        out: &mut Vec<Cand>,
    ) {
        let arrays = &self.prod.program.arrays;
        let mut jobs: Vec<(bool, Name, Option<Name>, Expr)> = Vec::new();
        for (q, p) in &self.pairs {
            if arrays.contains_key(q) && scope.contains(q) {
                jobs.push((true, q.clone(), Some(p.clone()), Expr::n_minus(1)));
            }
        }
        for x in &self.q_only {
            if arrays.contains_key(x) && scope.contains(x) {
                jobs.push((false, x.clone(), None, Expr::N));
            }
        }
        for x in &self.p_only {
            if arrays.contains_key(x) && scope.contains(x) {
                jobs.push((false, x.clone(), None, Expr::n_minus(1)));
            }
        }
        for (diff, a, b, full) in jobs {
            let dims = arrays[&a];
            let qs: Vec<Name> = (0..dims).map(qvar).collect();
            let vars: Vec<Expr> = qs
                .iter()
                .map(|q| Expr::var(q))
                .chain(std::iter::once(Expr::N))
                .chain(cs.iter().map(|c| Expr::var(c)))
                .collect();
            let value = |e: &Env, cell: &[i128]| -> Option<i128> {
                let va = e.arrays.get(&a)?.get(cell)?;
                match &b {
                    Some(b) => Some(va - e.arrays.get(b)?.get(cell)?),
                    None => Some(va),
                }
            };
            let mut found = Vec::new();
            for region in regions(dims, cs, &full) {
                let Some(rows) = rows_for(envs, cs, Some(&region), &value) else {
                    continue;
                };
                let Some(f) = fit(&rows, &vars) else { continue };
                let full_region = region
                    .iter()
                    .all(|(lo, hi)| *lo == Expr::Int(0) && *hi == full);
                found.push((full_region, region, f));
                if found.last().is_some_and(|x| x.0) {
                    break;
                }
            }
            if let Some(k) = found.iter().position(|x| x.0) {
                found = vec![found.swap_remove(k)];
            }
            for (_, region, f) in found {
                let idx: Vec<Expr> = qs.iter().map(|q| Expr::var(q)).collect();
                let read_a = Expr::Read(a.clone(), idx.clone());
                let lhs = match &b {
                    Some(b) => Expr::sub(read_a, Expr::Read(b.clone(), idx.clone())),
                    None => read_a,
                };
                let bounds = qs
                    .iter()
                    .zip(&region)
                    .map(|(q, (lo, hi))| Bound {
                        var: q.clone(),
                        lo: lo.clone(),
                        hi: hi.clone(),
                    })
                    .collect();
                let body = Formula::eq(scaled(f.den, lhs), f.rhs);
                out.push(Cand {
                    tag: 0,
                    loc: loc.clone(),
                    diff,
                    formula: Formula::forall(bounds, body),
                });
            }
        }
    }
}

/// Enclosing counters (outermost first) and the names in scope at each loop head.
fn loop_scopes(body: &Stmt, inputs: &BTreeSet<Name>) -> Vec<(Vec<Name>, BTreeSet<Name>)> {
    let mut out = Vec::new();
    fn go(
        s: &Stmt,
        cs: &mut Vec<Name>,
        written: &mut BTreeSet<Name>,
        out: &mut Vec<(Vec<Name>, BTreeSet<Name>)>,
    ) {
        match s {
            Stmt::Seq(v) => v.iter().for_each(|x| go(x, cs, written, out)),
            Stmt::If(_, a, b) => {
                go(a, cs, written, out);
                go(b, cs, written, out);
            }
            Stmt::For(l) => {
                let mut scope = written.clone();
                l.body.written_scalars(&mut scope);
                l.body.written_arrays(&mut scope);
                cs.push(l.counter.clone());
                out.push((cs.clone(), scope));
                go(&l.body, cs, written, out);
                cs.pop();
                written.insert(l.counter.clone());
            }
            other => {
                other.written_scalars(written);
                other.written_arrays(written);
            }
        }
    }
    let mut written = inputs.clone();
    go(body, &mut Vec::new(), &mut written, &mut out);
    out
}

/// Sample sizes `N` used for guessing.
pub const SAMPLE_NS: [i128; 6] = [2, 3, 4, 5, 6, 7];

/// Guesses facts at every loop head and at exit of the product, then keeps
/// the largest subset the solver proves inductive under `pre` (over the `Q`
/// inputs) and the entry relation.
pub fn infer_diff_invariants(
    prod: &ProductProgram,
    pre: &Formula,
    solver: &Solver,
) -> Result<DiffResult, DiffInvError> {
    let samples = sample(prod, pre, &SAMPLE_NS, 4, 0x5eed);
    let cands = guess(prod, &samples);
    let total = cands.len();
    let (kept, rounds) = houdini(prod, pre, cands, solver)?;
    let nloops = loops_preorder(&prod.program.body).len();
    let pack = |loc: Location| {
        let mine: Vec<&Cand> = kept.iter().filter(|c| c.loc == loc).collect();
        DiffInvariant {
            location: loc,
            diffs: mine
                .iter()
                .filter(|c| c.diff)
                .map(|c| c.formula.clone())
                .collect(),
            values: mine
                .iter()
                .filter(|c| !c.diff)
                .map(|c| c.formula.clone())
                .collect(),
        }
    };
    let heads = (0..nloops).map(|k| pack(Location::LoopHead(k))).collect();
    Ok(DiffResult {
        heads,
        exit: pack(Location::Exit),
        rounds,
        candidates: total,
    })
}

fn guess(prod: &ProductProgram, samples: &Samples) -> Vec<Cand> {
    let inputs = prod.program.inputs();
    let mut pairs = Vec::new();
    let mut q_only = Vec::new();
    let mut p_only = Vec::new();
    let p_copies: BTreeSet<&Name> = prod.p_names.values().collect();
    let names: Vec<&Name> = prod
        .program
        .scalars
        .iter()
        .chain(prod.program.arrays.keys())
        .collect();
    for x in names {
        if p_copies.contains(x) {
            if !inputs.contains(x) {
                p_only.push(x.clone());
            }
        } else {
            if let Some(p) = prod.p_names.get(x) {
                pairs.push((x.clone(), p.clone()));
            }
            if !inputs.contains(x) && !x.ends_with(P_SUFFIX) {
                q_only.push(x.clone());
            }
        }
    }
    let ctx = Context {
        prod,
        pairs,
        q_only,
        p_only,
    };
    let mut out = Vec::new();
    for (k, (cs, scope)) in loop_scopes(&prod.program.body, &inputs)
        .into_iter()
        .enumerate()
    {
        let Some(envs) = samples.heads.get(&k) else {
            continue;
        };
        let loc = Location::LoopHead(k);
        ctx.scalar_cands(envs, &cs, &scope, &loc, &mut out);
        ctx.array_cands(envs, &cs, &scope, &loc, &mut out);
    }
    let all: BTreeSet<Name> = prod
        .program
        .scalars
        .iter()
        .chain(prod.program.arrays.keys())
        .cloned()
        .collect();
    ctx.scalar_cands(&samples.exit, &[], &all, &Location::Exit, &mut out);
    ctx.array_cands(&samples.exit, &[], &all, &Location::Exit, &mut out);
    let mut seen = BTreeSet::new();
    out.retain(|c| seen.insert((c.loc.clone(), c.formula.to_string())));
    for (k, c) in out.iter_mut().enumerate() {
        c.tag = k;
    }
    out
}

/// Minimum `N` for which the product is analysed: `P_{N-1}` needs `N >= 2`.
pub const PRODUCT_N_MIN: i128 = 2;

pub const MAX_ROUNDS: usize = 32;

/// Per-query limit during candidate pruning; an undecided obligation drops its candidate.
pub const HOUDINI_TIMEOUT: std::time::Duration = std::time::Duration::from_secs(2);

fn product_hyps(prod: &ProductProgram, pre: &Formula) -> Vec<Formula> {
    let mut h = vec![
        pre.clone(),
        Formula::Cmp(Rel::Ge, Expr::N, Expr::Int(PRODUCT_N_MIN)),
    ];
    h.extend(prod.entry.iter().cloned());
    h
}

fn houdini(
    prod: &ProductProgram,
    pre: &Formula,
    mut cands: Vec<Cand>,
    solver: &Solver,
) -> Result<(Vec<Cand>, usize), DiffInvError> {
    let hyps = product_hyps(prod, pre);
    let body = &prod.program.body;
    let solver = solver.with_timeout(solver.timeout.min(HOUDINI_TIMEOUT));
    for round in 1..=MAX_ROUNDS {
        let mut invs = Invariants::new();
        let mut goals = Vec::new();
        for c in &cands {
            match c.loc {
                Location::LoopHead(k) => {
                    invs.entry(k).or_default().push((c.tag, c.formula.clone()))
                }
                Location::Exit => goals.push((c.tag, c.formula.clone())),
            }
        }
        let mut g = VcGen::new(body, &invs, PRODUCT_N_MIN);
        let obs = g.obligations(body, goals)?;
        let fs: Vec<Formula> = obs.iter().map(|(_, f)| f.clone()).collect();
        let ok = solver.valid_goals(&hyps, &fs);
        let failed: BTreeSet<Tag> = obs
            .iter()
            .zip(&ok)
            .filter(|(_, ok)| !**ok)
            .map(|((t, _), _)| *t)
            .collect();
        let before = cands.len();
        cands.retain(|c| !failed.contains(&c.tag));
        if cands.len() == before {
            if failed.contains(&FRAME) {
                return Err(DiffInvError::NoInvariant);
            }
            return Ok((cands, round));
        }
    }
    Err(DiffInvError::NoInvariant)
}

/// Whether `facts` hold on entry to loop `k` of the product and are
/// preserved by its body, with no other facts assumed.
pub fn check_invariant_inductive(
    prod: &ProductProgram,
    pre: &Formula,
    k: usize,
    facts: &[Formula],
    solver: &Solver,
) -> Result<bool, DiffInvError> {
    let mut invs = Invariants::new();
    invs.insert(k, facts.iter().cloned().enumerate().collect());
    let body = &prod.program.body;
    let mut g = VcGen::new(body, &invs, PRODUCT_N_MIN);
    let obs = g.obligations(body, vec![])?;
    let mine: Vec<Formula> = obs
        .into_iter()
        .filter(|(t, _)| *t < facts.len())
        .map(|(_, f)| f)
        .collect();
    let hyps = product_hyps(prod, pre);
    Ok(solver.valid_goals(&hyps, &mine).into_iter().all(|b| b))
}

/// Re-checks a whole inference result: every head fact is established on
/// entry and preserved, and every exit fact follows, all facts assumed jointly.
pub fn check_result_inductive(
    prod: &ProductProgram,
    pre: &Formula,
    d: &DiffResult,
    solver: &Solver,
) -> Result<bool, DiffInvError> {
    let mut invs = Invariants::new();
    let mut tag = 0;
    for (k, h) in d.heads.iter().enumerate() {
        for f in h.diffs.iter().chain(&h.values) {
            invs.entry(k).or_default().push((tag, f.clone()));
            tag += 1;
        }
    }
    let goals: Vec<(Tag, Formula)> = d
        .exit
        .diffs
        .iter()
        .chain(&d.exit.values)
        .map(|f| {
            tag += 1;
            (tag - 1, f.clone())
        })
        .collect();
    let body = &prod.program.body;
    let mut g = VcGen::new(body, &invs, PRODUCT_N_MIN);
    let obs: Vec<Formula> = g
        .obligations(body, goals)?
        .into_iter()
        .map(|(_, f)| f)
        .collect();
    let hyps = product_hyps(prod, pre);
    Ok(obs.iter().all(|f| solver.is_valid(&hyps, f)))
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use rand::SeedableRng;

    use super::*;
    use crate::diffinv::tests::{pf, product_of};
    use crate::interp::{eval_formula, run, Env};

    fn solver() -> Solver {
        Solver::from_env(Duration::from_secs(20))
    }

    const RUNNING: &str = "x = 0; for (i = 0; i < N; i++) { x = x + N*N; a[i] = a[i] + N; }
                           for (j = 0; j < N; j++) { b[j] = x + j; }";

    fn holds_concretely(prod: &ProductProgram, f: &Formula) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for n in 2..=5 {
            for _ in 0..10 {
                let mut e = Env::random(&prod.program, n, &mut rng, -4, 4);
                for c in &prod.entry {
                    if let Formula::Cmp(Rel::Eq, Expr::Var(x), t) = c {
                        let v = crate::interp::eval_expr(t, &e).unwrap();
                        e.scalars.insert(x.clone(), v);
                    }
                }
                run(&prod.program, &mut e).unwrap();
                assert!(eval_formula(f, &e).unwrap(), "{f} fails at N={n}");
            }
        }
    }

    #[test]
    fn running_example_differences() {
        let (_, _, prod) = product_of(RUNNING);
        let d = infer_diff_invariants(&prod, &Formula::Bool(true), &solver()).unwrap();
        let exit: Vec<String> = d.exit.diffs.iter().map(|f| f.to_string()).collect();
        let head: Vec<String> = d.heads[0].diffs.iter().map(|f| f.to_string()).collect();
        // x' - x = i * (2N - 1) at the first head and (N - 1)(2N - 1) at exit.
        let wanted_head = pf("x_2 - x_2__p == i * (2 * N - 1)");
        let wanted_exit = pf("x_2 - x_2__p == (N - 1) * (2 * N - 1)");
        let s = solver();
        assert!(s.is_valid(&d.heads[0].diffs, &wanted_head), "{head:?}");
        assert!(s.is_valid(&d.exit.diffs, &wanted_exit), "{exit:?}");
        let arr = pf("forall k in [0, N - 1) :: a_1[k] - a_1__p[k] == 1");
        assert!(s.is_valid(&d.exit.diffs, &arr), "{exit:?}");
        holds_concretely(&prod, &d.d_final());
    }

    #[test]
    fn identical_sides_have_zero_differences() {
        let (_, _, prod) = product_of("for (i = 0; i < N; i++) { a[i] = c + i; s = s + 1; }");
        let d = infer_diff_invariants(&prod, &Formula::Bool(true), &solver()).unwrap();
        let zero = pf("forall k in [0, N - 1) :: a_1[k] - a_1__p[k] == 0");
        assert!(solver().is_valid(&d.exit.diffs, &zero), "{:?}", d.exit);
        holds_concretely(&prod, &d.d_final());
    }

    #[test]
    fn inductive_check() {
        let (_, _, prod) = product_of(RUNNING);
        let good = pf("x_2 - x_2__p == i * (2 * N - 1)");
        let bad = pf("x_2 - x_2__p == N");
        assert!(
            check_invariant_inductive(&prod, &Formula::Bool(true), 0, &[good], &solver()).unwrap()
        );
        assert!(
            !check_invariant_inductive(&prod, &Formula::Bool(true), 0, &[bad], &solver()).unwrap()
        );
        assert!(check_invariant_inductive(&prod, &Formula::Bool(true), 0, &[], &solver()).unwrap());
    }

    #[test]
    fn inference_ignores_the_post() {
        let a = product_of(RUNNING).2;
        let b = product_of(&format!("{RUNNING}\n// assert(b[0] == 0)")).2;
        let da = infer_diff_invariants(&a, &Formula::Bool(true), &solver()).unwrap();
        let db = infer_diff_invariants(&b, &Formula::Bool(true), &solver()).unwrap();
        assert_eq!(da, db);
    }
}
