//! Helpers shared by the integration tests: corpus access, random
//! environments that satisfy simple pre-conditions, and program generators.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use diffy::ast::{Expr, Formula, Program, Rel};
use diffy::interp::{eval_expr, eval_formula, run, Env};
use diffy::logic::smt::Solver;
use diffy::ssa::ssa_rename;
use diffy::transform::gen_q_and_peel;
use diffy::{parse, Spec};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub name: String,
    pub category: String,
    pub safe: bool,
    pub path: PathBuf,
}

impl Entry {
    pub fn load(&self) -> (Program, Spec) {
        let src = fs::read_to_string(&self.path).expect("corpus file");
        parse(&src).unwrap_or_else(|e| panic!("{}: {e}", self.path.display()))
    }
}

fn c_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| {
            rd.flatten()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "c"))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn entry(category: &str, safe: bool, path: PathBuf) -> Entry {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    Entry {
        name,
        category: category.to_string(),
        safe,
        path,
    }
}

/// Categorized corpus programs, safe and unsafe.
pub fn corpus() -> Vec<Entry> {
    let mut out = Vec::new();
    for cat in ["c1", "c2", "c3"] {
        for (sub, safe) in [("safe", true), ("unsafe", false)] {
            for p in c_files(&corpus_dir().join(cat).join(sub)) {
                out.push(entry(cat, safe, p));
            }
        }
    }
    out
}

/// The six programs with existential post-conditions; all are safe.
pub fn existential() -> Vec<Entry> {
    c_files(&corpus_dir().join("existential"))
        .into_iter()
        .map(|p| entry("existential", true, p))
        .collect()
}

pub fn solver() -> Solver {
    Solver::from_env(Duration::from_secs(20))
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Random environment at size `n` completed so that the equalities among
/// `constraints` hold; `None` when the constraints still fail afterwards.
pub fn constrained_env(
    p: &Program,
    constraints: &[Formula],
    n: i128,
    rng: &mut impl Rng,
) -> Option<Env> {
    let mut env = Env::random(p, n, rng, -4, 4);
    for c in constraints.iter().flat_map(|c| c.conjuncts()) {
        pin(&c, &mut env);
    }
    constraints
        .iter()
        .all(|c| eval_formula(c, &env) == Ok(true))
        .then_some(env)
}

fn pin(c: &Formula, env: &mut Env) {
    match c {
        Formula::Cmp(Rel::Eq, Expr::Var(x), t) => {
            if let Ok(v) = eval_expr(t, env) {
                env.scalars.insert(x.clone(), v);
            }
        }
        Formula::Forall(bs, body) => {
            let Formula::Cmp(Rel::Eq, Expr::Read(a, idx), t) = body.as_ref() else {
                return;
            };
            let direct = idx.len() == bs.len()
                && idx
                    .iter()
                    .zip(bs)
                    .all(|(i, b)| *i == Expr::Var(b.var.clone()));
            if !direct || !env.arrays.contains_key(a) {
                return;
            }
            let mut writes = Vec::new();
            enumerate(bs, env.clone(), &mut Vec::new(), &mut |scratch, tuple| {
                if let Ok(v) = eval_expr(t, scratch) {
                    writes.push((tuple.to_vec(), v));
                }
            });
            let arr = env.arrays.get_mut(a).expect("array");
            for (tuple, v) in writes {
                arr.set(&tuple, v);
            }
        }
        _ => {}
    }
}

fn enumerate(
    bs: &[diffy::Bound],
    mut scratch: Env,
    tuple: &mut Vec<i128>,
    f: &mut dyn FnMut(&Env, &[i128]),
) {
    let Some((b, rest)) = bs.split_first() else {
        f(&scratch, tuple);
        return;
    };
    let (Ok(lo), Ok(hi)) = (eval_expr(&b.lo, &scratch), eval_expr(&b.hi, &scratch)) else {
        return;
    };
    for i in lo..hi {
        scratch.scalars.insert(b.var.clone(), i);
        tuple.push(i);
        enumerate(rest, scratch.clone(), tuple, f);
        tuple.pop();
    }
}

/// Runs `P_N` and `Q_{N-1}; peel(P_N)` on the same inputs for
/// `N = 1..=5`, ten environments each, and compares every final value.
/// `Ok(false)` means the split was not produced.
pub fn theorem1(p: &Program, spec: &Spec, solver: &Solver, seed: u64) -> Result<bool, String> {
    let s = ssa_rename(p, spec).map_err(|e| e.to_string())?;
    let Ok(qp) = gen_q_and_peel(&s.program, solver, 1) else {
        return Ok(false);
    };
    let mut rng = rng(seed);
    for n in 1..=5 {
        for _ in 0..10 {
            let mut e1 = Env::random(&s.program, n, &mut rng, -4, 4);
            let mut e2 = e1.clone();
            e2.complete(&qp.q);
            e2.complete(&qp.peel);
            if run(&s.program, &mut e1).is_err() {
                continue;
            }
            run(&qp.q, &mut e2).map_err(|e| format!("Q at N={n}: {e}"))?;
            run(&qp.peel, &mut e2).map_err(|e| format!("peel at N={n}: {e}"))?;
            for v in s.finals.values() {
                let same = match e1.arrays.get(v) {
                    Some(a) => Some(a) == e2.arrays.get(v),
                    None => e1.scalars.get(v) == e2.scalars.get(v),
                };
                if !same {
                    return Err(format!(
                        "{v} differs at N={n}\nQ:\n{}\npeel:\n{}",
                        qp.q.body.render(),
                        qp.peel.body.render()
                    ));
                }
            }
        }
    }
    Ok(true)
}

pub const SCALARS: [&str; 3] = ["x", "y", "s"];
pub const ARRAYS: [&str; 2] = ["a", "b"];
const RELS: [&str; 6] = ["<", "<=", "==", "!=", ">", ">="];

/// Expression tree over scalars, arrays, `N` and in-scope loop counters.
#[derive(Clone, Debug)]
pub enum GExpr {
    Const(i8),
    N,
    Counter(usize),
    Scalar(usize),
    Read(usize, usize),
    Add(Box<GExpr>, Box<GExpr>),
    Sub(Box<GExpr>, Box<GExpr>),
    /// Right factor is a leaf without scalars, keeping values small.
    Mul(Box<GExpr>, Box<GExpr>),
}

#[derive(Clone, Debug)]
pub enum GStmt {
    Assign(usize, GExpr),
    Accum(usize, GExpr),
    Store(usize, usize, GExpr),
    If(GExpr, usize, GExpr, Vec<GStmt>, Vec<GStmt>),
    /// `true` bounds the loop by the enclosing counter when there is one.
    Loop(bool, Vec<GStmt>),
}

fn factor() -> impl Strategy<Value = GExpr> {
    prop_oneof![
        (-3i8..=3).prop_map(GExpr::Const),
        Just(GExpr::N),
        (0usize..2).prop_map(GExpr::Counter)
    ]
}

pub fn gexpr() -> impl Strategy<Value = GExpr> {
    let leaf = prop_oneof![
        (-3i8..=3).prop_map(GExpr::Const),
        Just(GExpr::N),
        (0usize..2).prop_map(GExpr::Counter),
        (0usize..3).prop_map(GExpr::Scalar),
        (0usize..2, 0usize..2).prop_map(|(a, k)| GExpr::Read(a, k)),
    ];
    leaf.prop_recursive(2, 8, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| GExpr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| GExpr::Sub(Box::new(a), Box::new(b))),
            (inner, factor()).prop_map(|(a, b)| GExpr::Mul(Box::new(a), Box::new(b))),
        ]
    })
}

fn simple_stmt() -> impl Strategy<Value = GStmt> {
    prop_oneof![
        (0usize..3, gexpr()).prop_map(|(v, e)| GStmt::Assign(v, e)),
        (0usize..3, gexpr()).prop_map(|(v, e)| GStmt::Accum(v, e)),
        (0usize..2, 0usize..2, gexpr()).prop_map(|(a, k, e)| GStmt::Store(a, k, e)),
    ]
}

fn gstmt(depth: u32) -> BoxedStrategy<GStmt> {
    let branch = (
        gexpr(),
        0usize..6,
        gexpr(),
        prop::collection::vec(simple_stmt(), 1..3),
        prop::collection::vec(simple_stmt(), 0..2),
    )
        .prop_map(|(a, r, b, t, e)| GStmt::If(a, r, b, t, e));
    if depth == 0 {
        return prop_oneof![3 => simple_stmt(), 1 => branch].boxed();
    }
    prop_oneof![
        3 => simple_stmt(),
        1 => branch,
        2 => (any::<bool>(), prop::collection::vec(gstmt(depth - 1), 1..3)).prop_map(|(t, b)| GStmt::Loop(t, b)),
    ]
    .boxed()
}

/// Programs with loops nested at most two deep.
pub fn program_source() -> impl Strategy<Value = String> {
    prop::collection::vec(gstmt(2), 1..4).prop_map(|v| render_program(&v))
}

pub fn render_program(v: &[GStmt]) -> String {
    let mut r = Render {
        counters: Vec::new(),
        next: 0,
        out: String::new(),
    };
    for s in v {
        r.stmt(s, 0);
    }
    r.out
}

struct Render {
    counters: Vec<String>,
    next: usize,
    out: String,
}

impl Render {
    fn index(&self, k: usize) -> String {
        match self.counters.len() {
            0 => "0".to_string(),
            l => self.counters[k % l].clone(),
        }
    }

    fn expr(&self, e: &GExpr) -> String {
        match e {
            GExpr::Const(c) => c.to_string(),
            GExpr::N => "N".to_string(),
            GExpr::Counter(k) => match self.counters.len() {
                0 => "1".to_string(),
                _ => self.index(*k),
            },
            GExpr::Scalar(v) => SCALARS[*v].to_string(),
            GExpr::Read(a, k) => format!("{}[{}]", ARRAYS[*a], self.index(*k)),
            GExpr::Add(a, b) => format!("({} + {})", self.expr(a), self.expr(b)),
            GExpr::Sub(a, b) => format!("({} - {})", self.expr(a), self.expr(b)),
            GExpr::Mul(a, b) => format!("({} * {})", self.expr(a), self.expr(b)),
        }
    }

    fn line(&mut self, depth: usize, s: &str) {
        self.out.push_str(&"  ".repeat(depth));
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn stmt(&mut self, s: &GStmt, depth: usize) {
        match s {
            GStmt::Assign(v, e) => {
                let l = format!("{} = {};", SCALARS[*v], self.expr(e));
                self.line(depth, &l);
            }
            GStmt::Accum(v, e) => {
                let x = SCALARS[*v];
                let l = format!("{x} = {x} + {};", self.expr(e));
                self.line(depth, &l);
            }
            GStmt::Store(a, k, e) => {
                let l = format!("{}[{}] = {};", ARRAYS[*a], self.index(*k), self.expr(e));
                self.line(depth, &l);
            }
            GStmt::If(a, r, b, t, e) => {
                let l = format!("if ({} {} {}) {{", self.expr(a), RELS[*r], self.expr(b));
                self.line(depth, &l);
                for s in t {
                    self.stmt(s, depth + 1);
                }
                if e.is_empty() {
                    self.line(depth, "}");
                } else {
                    self.line(depth, "} else {");
                    for s in e {
                        self.stmt(s, depth + 1);
                    }
                    self.line(depth, "}");
                }
            }
            GStmt::Loop(tri, body) => {
                let c = format!("i{}", self.next);
                self.next += 1;
                let ub = match (tri, self.counters.last()) {
                    (true, Some(outer)) => outer.clone(),
                    _ => "N".to_string(),
                };
                self.line(depth, &format!("for ({c} = 0; {c} < {ub}; {c}++) {{"));
                self.counters.push(c);
                for s in body {
                    self.stmt(s, depth + 1);
                }
                self.counters.pop();
                self.line(depth, "}");
            }
        }
    }
}

/// Index expressions valid for every `N >= 2`.
const INDICES: [&str; 4] = ["0", "1", "N - 1", "(x % N)"];

fn lf_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-3i32..=3).prop_map(|c| c.to_string()),
        Just("N".to_string()),
        prop::sample::select(vec!["x", "y", "z"]).prop_map(str::to_string),
        (0usize..2, 0usize..INDICES.len())
            .prop_map(|(a, k)| format!("{}[{}]", ARRAYS[a], INDICES[k])),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| {
        (
            inner.clone(),
            prop::sample::select(vec!["+", "-", "*"]),
            inner,
        )
            .prop_map(|(a, op, b)| format!("({a} {op} {b})"))
    })
}

fn lf_cond() -> impl Strategy<Value = String> {
    (lf_expr(), prop::sample::select(RELS.to_vec()), lf_expr())
        .prop_map(|(a, r, b)| format!("{a} {r} {b}"))
}

fn lf_stmt(depth: u32) -> BoxedStrategy<String> {
    let simple = prop_oneof![
        (prop::sample::select(vec!["x", "y", "z"]), lf_expr())
            .prop_map(|(v, e)| format!("{v} = {e};")),
        (0usize..2, 0usize..INDICES.len(), lf_expr())
            .prop_map(|(a, k, e)| format!("{}[{}] = {e};", ARRAYS[a], INDICES[k])),
    ];
    if depth == 0 {
        return simple.boxed();
    }
    let block = || prop::collection::vec(lf_stmt(depth - 1), 1..3).prop_map(|v| v.join(" "));
    prop_oneof![
        3 => simple,
        1 => (lf_cond(), block(), block()).prop_map(|(c, a, b)| format!("if ({c}) {{ {a} }} else {{ {b} }}")),
    ]
    .boxed()
}

/// Straight-line code with branches over scalars `x, y, z` and arrays `a, b`.
pub fn loop_free_source() -> impl Strategy<Value = String> {
    prop::collection::vec(lf_stmt(2), 1..5).prop_map(|v| v.join("\n"))
}

/// Post-conditions over the same names, possibly quantified.
pub fn post_source() -> impl Strategy<Value = String> {
    let quant = (
        prop::sample::select(vec!["forall", "exists"]),
        0usize..2,
        prop::sample::select(RELS.to_vec()),
        prop::sample::select(vec!["x", "y", "z", "0", "N"]),
    )
        .prop_map(|(q, a, r, t)| format!("({q} k in [0, N) :: {}[k] {r} {t})", ARRAYS[a]));
    let atom = prop_oneof![2 => lf_cond().prop_map(|c| format!("({c})")), 1 => quant];
    prop::collection::vec((atom, prop::sample::select(vec!["&&", "||"])), 1..4).prop_map(|v| {
        let mut s = String::new();
        for (k, (a, op)) in v.iter().enumerate() {
            if k > 0 {
                s.push_str(&format!(" {op} "));
            }
            s.push_str(a);
        }
        s
    })
}
