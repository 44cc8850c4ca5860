//! SMT-LIB 2 emission and an external solver driven over a pipe.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{BinOp, Bound, Expr, Formula, Name, Rel};
use crate::logic::simplify::negate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("cannot start solver {path}: {msg}")]
    Spawn { path: String, msg: String },
    #[error("solver reported: {0}")]
    Reported(String),
    #[error("unparsable solver output: {0}")]
    Parse(String),
}

#[derive(Clone, Debug)]
pub struct Solver {
    pub path: PathBuf,
    pub timeout: Duration,
    /// Queries issued so far, for diagnostics.
    pub calls: std::rc::Rc<std::cell::Cell<usize>>,
}

/// A counterexample: values of `N`, scalars, and array cells that were asked for.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Model {
    pub n: Option<i128>,
    pub scalars: BTreeMap<Name, i128>,
    pub cells: BTreeMap<Name, BTreeMap<Vec<i128>, i128>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Validity {
    Valid,
    Invalid(Model),
    Unknown(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sat {
    Sat(Model),
    Unsat,
    Unknown(String),
}

/// Symbols of a query and their sorts.
#[derive(Clone, Debug, Default)]
pub struct Symbols {
    pub scalars: BTreeSet<Name>,
    pub arrays: BTreeMap<Name, usize>,
}

impl Symbols {
    pub fn collect(fs: &[&Formula]) -> Symbols {
        let mut s = Symbols::default();
        for f in fs {
            f.arrays(&mut s.arrays);
            let mut names = BTreeSet::new();
            f.free_names(&mut names);
            s.scalars.extend(names);
        }
        let arrays = s.arrays.clone();
        s.scalars.retain(|x| !arrays.contains_key(x));
        s
    }
}

pub fn quote(x: &str) -> String {
    format!("|{x}|")
}

fn int(i: i128) -> String {
    if i < 0 {
        format!("(- {})", i.unsigned_abs())
    } else {
        i.to_string()
    }
}

pub fn expr_smt(e: &Expr) -> String {
    match e {
        Expr::Int(i) => int(*i),
        Expr::N => "N".into(),
        Expr::Var(x) => quote(x),
        Expr::Read(a, idx) => {
            let ix: Vec<String> = idx.iter().map(expr_smt).collect();
            format!("(select {} {})", quote(a), ix.join(" "))
        }
        Expr::Bin(op, a, b) => {
            let o = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "div",
                BinOp::Mod => "mod",
            };
            format!("({o} {} {})", expr_smt(a), expr_smt(b))
        }
        Expr::Neg(a) => format!("(- {})", expr_smt(a)),
        Expr::Ite(c, a, b) => format!("(ite {} {} {})", formula_smt(c), expr_smt(a), expr_smt(b)),
    }
}

fn binders(bs: &[Bound]) -> (String, String) {
    let decl: Vec<String> = bs
        .iter()
        .map(|b| format!("({} Int)", quote(&b.var)))
        .collect();
    let guard: Vec<String> = bs
        .iter()
        .map(|b| {
            format!(
                "(<= {} {}) (< {} {})",
                expr_smt(&b.lo),
                quote(&b.var),
                quote(&b.var),
                expr_smt(&b.hi)
            )
        })
        .collect();
    (decl.join(" "), format!("(and {})", guard.join(" ")))
}

pub fn formula_smt(f: &Formula) -> String {
    match f {
        Formula::Bool(b) => b.to_string(),
        Formula::Cmp(r, a, b) => {
            let (a, b) = (expr_smt(a), expr_smt(b));
            match r {
                Rel::Lt => format!("(< {a} {b})"),
                Rel::Le => format!("(<= {a} {b})"),
                Rel::Gt => format!("(> {a} {b})"),
                Rel::Ge => format!("(>= {a} {b})"),
                Rel::Eq => format!("(= {a} {b})"),
                Rel::Ne => format!("(not (= {a} {b}))"),
            }
        }
        Formula::Not(g) => format!("(not {})", formula_smt(g)),
        Formula::And(v) if v.is_empty() => "true".into(),
        Formula::Or(v) if v.is_empty() => "false".into(),
        Formula::And(v) => format!(
            "(and {})",
            v.iter().map(formula_smt).collect::<Vec<_>>().join(" ")
        ),
        Formula::Or(v) => format!(
            "(or {})",
            v.iter().map(formula_smt).collect::<Vec<_>>().join(" ")
        ),
        Formula::Implies(a, b) => format!("(=> {} {})", formula_smt(a), formula_smt(b)),
        Formula::Forall(bs, g) => {
            let (d, guard) = binders(bs);
            format!("(forall ({d}) (=> {guard} {}))", formula_smt(g))
        }
        Formula::Exists(bs, g) => {
            let (d, guard) = binders(bs);
            format!("(exists ({d}) (and {guard} {}))", formula_smt(g))
        }
    }
}

/// Logic name: nonlinear arithmetic switches to AUFNIA.
pub fn logic_for(fs: &[&Formula]) -> &'static str {
    if fs.iter().any(|f| f.is_nonlinear()) {
        "AUFNIA"
    } else {
        "AUFLIA"
    }
}

/// Declarations for every symbol of the query.
pub fn declarations(sym: &Symbols) -> String {
    let mut out = String::from("(declare-const N Int)\n");
    for x in &sym.scalars {
        let _ = writeln!(out, "(declare-const {} Int)", quote(x));
    }
    for (a, d) in &sym.arrays {
        let dom = vec!["Int"; *d].join(" ");
        let _ = writeln!(out, "(declare-const {} (Array {dom} Int))", quote(a));
    }
    out
}

/// Standalone script checking `hyps => goal`.
pub fn emit_smtlib(hyps: &[Formula], goal: &Formula) -> String {
    let mut all: Vec<&Formula> = hyps.iter().collect();
    all.push(goal);
    let sym = Symbols::collect(&all);
    let mut out = format!("(set-logic {})\n", logic_for(&all));
    out.push_str(&declarations(&sym));
    for h in hyps {
        let _ = writeln!(out, "(assert {})", formula_smt(h));
    }
    let _ = writeln!(out, "(assert (not {}))", formula_smt(goal));
    out.push_str("(check-sat)\n");
    out
}

#[derive(Clone, Debug, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn parse_sexps(text: &str) -> Result<Vec<Sexp>, SolverError> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    fn one(chars: &[char], i: &mut usize) -> Result<Option<Sexp>, SolverError> {
        while *i < chars.len() && chars[*i].is_whitespace() {
            *i += 1;
        }
        if *i >= chars.len() {
            return Ok(None);
        }
        match chars[*i] {
            '(' => {
                *i += 1;
                let mut items = Vec::new();
                loop {
                    while *i < chars.len() && chars[*i].is_whitespace() {
                        *i += 1;
                    }
                    if *i >= chars.len() {
                        return Err(SolverError::Parse("unbalanced parenthesis".into()));
                    }
                    if chars[*i] == ')' {
                        *i += 1;
                        return Ok(Some(Sexp::List(items)));
                    }
                    match one(chars, i)? {
                        Some(s) => items.push(s),
                        None => return Err(SolverError::Parse("unexpected end".into())),
                    }
                }
            }
            ')' => Err(SolverError::Parse("unexpected ')'".into())),
            '"' => {
                let start = *i;
                *i += 1;
                while *i < chars.len() && chars[*i] != '"' {
                    *i += 1;
                }
                *i += 1;
                Ok(Some(Sexp::Atom(
                    chars[start..(*i).min(chars.len())].iter().collect(),
                )))
            }
            '|' => {
                let start = *i;
                *i += 1;
                while *i < chars.len() && chars[*i] != '|' {
                    *i += 1;
                }
                *i += 1;
                Ok(Some(Sexp::Atom(
                    chars[start..(*i).min(chars.len())].iter().collect(),
                )))
            }
            _ => {
                let start = *i;
                while *i < chars.len()
                    && !chars[*i].is_whitespace()
                    && chars[*i] != '('
                    && chars[*i] != ')'
                {
                    *i += 1;
                }
                Ok(Some(Sexp::Atom(chars[start..*i].iter().collect())))
            }
        }
    }
    while let Some(s) = one(&chars, &mut i)? {
        out.push(s);
    }
    Ok(out)
}

fn sexp_int(s: &Sexp) -> Option<i128> {
    match s {
        Sexp::Atom(a) => a.parse().ok(),
        Sexp::List(v) if v.len() == 2 && v[0] == Sexp::Atom("-".into()) => {
            sexp_int(&v[1]).map(|x| -x)
        }
        _ => None,
    }
}

fn unquote(s: &str) -> String {
    s.trim_matches('|').to_string()
}

/// Terms whose values should be reported in a model.
#[derive(Clone, Debug, Default)]
pub struct ModelRequest {
    pub scalars: Vec<Name>,
    pub cells: Vec<(Name, Vec<i128>)>,
}

impl Solver {
    pub fn new(path: impl Into<PathBuf>, timeout: Duration) -> Solver {
        Solver {
            path: path.into(),
            timeout,
            calls: Default::default(),
        }
    }

    /// Locates the solver from `DIFFY_SOLVER` or falls back to `z3` on the path.
    pub fn from_env(timeout: Duration) -> Solver {
        let path = std::env::var("DIFFY_SOLVER").unwrap_or_else(|_| "z3".to_string());
        Solver::new(path, timeout)
    }

    pub fn with_timeout(&self, timeout: Duration) -> Solver {
        Solver {
            path: self.path.clone(),
            timeout,
            calls: self.calls.clone(),
        }
    }

    pub fn available(&self) -> bool {
        Command::new(&self.path)
            .arg("-version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    }

    fn run(&self, script: &str) -> Result<String, SolverError> {
        self.calls.set(self.calls.get() + 1);
        let ms = self.timeout.as_millis().max(1);
        let hard = (ms / 1000 + 2).to_string();
        let mut child = Command::new(&self.path)
            .arg("-in")
            .arg(format!("-T:{hard}"))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SolverError::Spawn {
                path: self.path.display().to_string(),
                msg: e.to_string(),
            })?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            let full = format!("(set-option :timeout {ms})\n{script}");
            stdin
                .write_all(full.as_bytes())
                .map_err(|e| SolverError::Spawn {
                    path: self.path.display().to_string(),
                    msg: e.to_string(),
                })?;
        }
        let out = child.wait_with_output().map_err(|e| SolverError::Spawn {
            path: self.path.display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    /// Satisfiability of a conjunction, with model values for `req` when sat.
    pub fn check_sat(&self, fs: &[Formula], extra: &Symbols, req: &ModelRequest) -> Sat {
        match self.check_sat_inner(fs, extra, req) {
            Ok(s) => s,
            Err(e) => Sat::Unknown(e.to_string()),
        }
    }

    fn check_sat_inner(
        &self,
        fs: &[Formula],
        extra: &Symbols,
        req: &ModelRequest,
    ) -> Result<Sat, SolverError> {
        let refs: Vec<&Formula> = fs.iter().collect();
        let mut sym = Symbols::collect(&refs);
        sym.scalars.extend(extra.scalars.iter().cloned());
        for (a, d) in &extra.arrays {
            sym.arrays.insert(a.clone(), *d);
        }
        for x in &req.scalars {
            if !sym.arrays.contains_key(x) {
                sym.scalars.insert(x.clone());
            }
        }
        let mut script = format!("(set-logic {})\n", logic_for(&refs));
        script.push_str(&declarations(&sym));
        for f in fs {
            let _ = writeln!(script, "(assert {})", formula_smt(f));
        }
        script.push_str("(check-sat)\n(get-info :reason-unknown)\n");
        let mut terms = vec!["N".to_string()];
        terms.extend(
            req.scalars
                .iter()
                .filter(|x| sym.scalars.contains(*x))
                .map(|x| quote(x)),
        );
        for (a, idx) in &req.cells {
            if sym.arrays.get(a) == Some(&idx.len()) {
                let ix: Vec<String> = idx.iter().map(|i| int(*i)).collect();
                terms.push(format!("(select {} {})", quote(a), ix.join(" ")));
            }
        }
        let _ = writeln!(script, "(get-value ({}))", terms.join(" "));
        let started = Instant::now();
        let out = self.run(&script)?;
        let sexps = parse_sexps(&out)?;
        let verdict = sexps.iter().find_map(|s| match s {
            Sexp::Atom(a) if a == "sat" || a == "unsat" || a == "unknown" || a == "timeout" => {
                Some(a.clone())
            }
            _ => None,
        });
        let errors: Vec<String> = sexps
            .iter()
            .filter_map(|s| match s {
                Sexp::List(v) if v.first() == Some(&Sexp::Atom("error".into())) => {
                    Some(format!("{:?}", v.get(1)))
                }
                _ => None,
            })
            .filter(|e| !e.contains("model is not available"))
            .collect();
        match verdict.as_deref() {
            Some("unsat") if errors.is_empty() => Ok(Sat::Unsat),
            Some("sat") if errors.is_empty() => {
                let mut model = Model::default();
                for s in &sexps {
                    if let Sexp::List(pairs) = s {
                        for p in pairs {
                            if let Sexp::List(kv) = p {
                                if kv.len() != 2 {
                                    continue;
                                }
                                match (&kv[0], &kv[1]) {
                                    (Sexp::Atom(k), v) if k == "N" => model.n = sexp_int(v),
                                    (Sexp::Atom(k), v) => {
                                        if let Some(x) = sexp_int(v) {
                                            model.scalars.insert(unquote(k), x);
                                        }
                                    }
                                    (Sexp::List(sel), v)
                                        if sel.first() == Some(&Sexp::Atom("select".into())) =>
                                    {
                                        let (Some(Sexp::Atom(a)), Some(x)) =
                                            (sel.get(1), sexp_int(v))
                                        else {
                                            continue;
                                        };
                                        let idx: Option<Vec<i128>> =
                                            sel[2..].iter().map(sexp_int).collect();
                                        if let Some(idx) = idx {
                                            model
                                                .cells
                                                .entry(unquote(a))
                                                .or_default()
                                                .insert(idx, x);
                                        }
                                    }
                                    _ => {}
                                }
                            }
                        }
                    }
                }
                Ok(Sat::Sat(model))
            }
            _ if !errors.is_empty() => Err(SolverError::Reported(errors.join("; "))),
            Some(v) => {
                let reason = sexps
                    .iter()
                    .find_map(|s| match s {
                        Sexp::List(v)
                            if v.first() == Some(&Sexp::Atom(":reason-unknown".into())) =>
                        {
                            v.get(1).map(|r| format!("{r:?}"))
                        }
                        _ => None,
                    })
                    .unwrap_or_default();
                Ok(Sat::Unknown(format!(
                    "{v} {reason} after {:?}",
                    started.elapsed()
                )))
            }
            None => Ok(Sat::Unknown(format!(
                "no answer after {:?}",
                started.elapsed()
            ))),
        }
    }

    /// Validity of `hyps => goal`.
    pub fn check_valid(&self, hyps: &[Formula], goal: &Formula, req: &ModelRequest) -> Validity {
        let mut fs = hyps.to_vec();
        fs.push(negate(goal));
        match self.check_sat(&fs, &Symbols::default(), req) {
            Sat::Unsat => Validity::Valid,
            Sat::Sat(m) => Validity::Invalid(m),
            Sat::Unknown(r) => Validity::Unknown(r),
        }
    }

    pub fn is_valid(&self, hyps: &[Formula], goal: &Formula) -> bool {
        self.check_valid(hyps, goal, &ModelRequest::default()) == Validity::Valid
    }

    /// Which goals are implied by `hyps`. Goals that cannot be confirmed
    /// (refuted or unknown) map to `false`.
    pub fn valid_goals(&self, hyps: &[Formula], goals: &[Formula]) -> Vec<bool> {
        let mut alive = vec![true; goals.len()];
        let all: Vec<usize> = (0..goals.len()).collect();
        self.settle_goals(hyps, goals, &all, &mut alive);
        alive
    }

    /// Batches `open`; a batch the solver cannot decide quickly is split in halves.
    fn settle_goals(
        &self,
        hyps: &[Formula],
        goals: &[Formula],
        open: &[usize],
        alive: &mut [bool],
    ) {
        let mut open = open.to_vec();
        loop {
            open.retain(|&k| alive[k]);
            match open.as_slice() {
                [] => return,
                [k] => {
                    alive[*k] = self.is_valid(hyps, &goals[*k]);
                    return;
                }
                _ => {}
            }
            // `goal!k == 1` only where goal k fails; ask for a model falsifying some goal.
            let names: Vec<Name> = open.iter().map(|k| format!("goal!{k}")).collect();
            let mut fs = hyps.to_vec();
            for (k, name) in open.iter().zip(&names) {
                let (g, _) = skolemize(&goals[*k], &format!("sk!{k}!"));
                let on = Formula::eq(Expr::Var(name.clone()), Expr::Int(1));
                fs.push(Formula::Implies(Box::new(on), Box::new(negate(&g))));
            }
            fs.push(Formula::or(
                names
                    .iter()
                    .map(|n| Formula::eq(Expr::Var(n.clone()), Expr::Int(1)))
                    .collect(),
            ));
            let req = ModelRequest {
                scalars: names.clone(),
                ..Default::default()
            };
            let quick = self.with_timeout(self.timeout.min(BATCH_TIMEOUT));
            let dropped = match quick.check_sat(&fs, &Symbols::default(), &req) {
                Sat::Unsat => return,
                Sat::Sat(m) => {
                    let mut dropped = false;
                    for (k, name) in open.iter().zip(&names) {
                        if m.scalars.get(name).is_some_and(|v| *v == 1) {
                            alive[*k] = false;
                            dropped = true;
                        }
                    }
                    dropped
                }
                Sat::Unknown(_) => false,
            };
            if !dropped {
                let (a, b) = open.split_at(open.len() / 2);
                self.settle_goals(hyps, goals, a, alive);
                self.settle_goals(hyps, goals, b, alive);
                return;
            }
        }
    }
}

/// Time allowed for one batched query before goals are checked one by one.
pub const BATCH_TIMEOUT: Duration = Duration::from_secs(1);

/// Replaces top-level universal binders of `f` by fresh constants `prefix_k`.
/// The result is equivalent for validity checking.
pub fn skolemize(f: &Formula, prefix: &str) -> (Formula, Vec<Name>) {
    match f {
        Formula::Forall(bs, g) => {
            let mut map = BTreeMap::new();
            let mut guards = Vec::new();
            let mut names = Vec::new();
            for (k, b) in bs.iter().enumerate() {
                let c = format!("{prefix}{k}!{}", b.var);
                let lo = b.lo.subst_vars(&map);
                let hi = b.hi.subst_vars(&map);
                map.insert(b.var.clone(), Expr::Var(c.clone()));
                guards.push(Formula::Cmp(Rel::Le, lo, Expr::Var(c.clone())));
                guards.push(Formula::Cmp(Rel::Lt, Expr::Var(c.clone()), hi));
                names.push(c);
            }
            let body = g.subst_vars(&map);
            let (body, more) = skolemize(&body, &format!("{prefix}i"));
            names.extend(more);
            (Formula::implies(Formula::and(guards), body), names)
        }
        Formula::Implies(a, b) => {
            let (b, names) = skolemize(b, prefix);
            (Formula::implies((**a).clone(), b), names)
        }
        _ => (f.clone(), Vec::new()),
    }
}
