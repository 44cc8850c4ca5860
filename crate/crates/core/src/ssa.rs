//! Structural SSA renaming.
//!
//! Entry values keep their original names and are never written. Every scalar
//! write gets a fresh version; a scalar written inside a loop is carried by one
//! version per loop, copied in before the loop. Each top-level segment that
//! writes an array owns a fresh version of it, copied from the previous one.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{fresh_name, Expr, Fill, Formula, Loop, Name, Program, Stmt};
use crate::frontend::Spec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsaError {
    #[error("unsupported aliasing: {0}")]
    UnsupportedAliasing(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SsaProgram {
    pub program: Program,
    /// Original name to its versions, entry version first.
    pub versions: BTreeMap<Name, Vec<Name>>,
    /// Original name to the version live at program exit.
    pub finals: BTreeMap<Name, Name>,
    pub spec: Spec,
}

struct Renamer {
    taken: BTreeSet<Name>,
    versions: BTreeMap<Name, Vec<Name>>,
    cur: BTreeMap<Name, Name>,
}

impl Renamer {
    fn fresh(&mut self, x: &str) -> Name {
        let v = fresh_name(x, &self.taken);
        self.taken.insert(v.clone());
        self.versions
            .entry(x.to_string())
            .or_insert_with(|| vec![x.to_string()])
            .push(v.clone());
        v
    }

    fn map(&self) -> &BTreeMap<Name, Name> {
        &self.cur
    }

    fn expr(&self, e: &Expr) -> Expr {
        e.rename(self.map())
    }

    fn formula(&self, f: &Formula) -> Formula {
        f.rename(self.map())
    }

    /// Renames a block. `targets` maps a scalar to the version its last write
    /// in this block must define.
    fn block(&mut self, items: &[Stmt], targets: &BTreeMap<Name, Name>) -> Vec<Stmt> {
        let mut last: BTreeMap<Name, usize> = BTreeMap::new();
        for (k, s) in items.iter().enumerate() {
            let mut w = BTreeSet::new();
            s.written_scalars(&mut w);
            for x in w {
                last.insert(x, k);
            }
        }
        let mut out = Vec::new();
        for (k, s) in items.iter().enumerate() {
            let here: BTreeMap<Name, Name> = targets
                .iter()
                .filter(|(x, _)| last.get(*x) == Some(&k))
                .map(|(x, v)| (x.clone(), v.clone()))
                .collect();
            out.extend(self.stmt(s, &here));
        }
        out
    }

    fn stmt(&mut self, s: &Stmt, targets: &BTreeMap<Name, Name>) -> Vec<Stmt> {
        match s {
            Stmt::Seq(v) => self.block(v, targets),
            Stmt::Assign(x, e) => {
                let e = self.expr(e);
                let v = match targets.get(x) {
                    Some(v) => v.clone(),
                    None => self.fresh(x),
                };
                self.cur.insert(x.clone(), v.clone());
                vec![Stmt::Assign(v, e)]
            }
            Stmt::Store(a, idx, e) => {
                let idx = idx.iter().map(|i| self.expr(i)).collect();
                let e = self.expr(e);
                vec![Stmt::Store(self.cur_of(a), idx, e)]
            }
            Stmt::ArrayCopy(d, src) => vec![Stmt::ArrayCopy(self.cur_of(d), self.cur_of(src))],
            Stmt::Fill(f) => vec![Stmt::Fill(Fill {
                counter: f.counter.clone(),
                lo: self.expr(&f.lo),
                hi: self.expr(&f.hi),
                array: self.cur_of(&f.array),
                index: f.index.iter().map(|i| self.expr(i)).collect(),
                rhs: self.expr(&f.rhs),
            })],
            Stmt::If(c, a, b) => {
                let mut out = Vec::new();
                let mut read = BTreeMap::new();
                c.arrays(&mut read);
                let mut c = self.formula(c);
                let mut written = BTreeSet::new();
                s.written_arrays(&mut written);
                let mut scalars_written = BTreeSet::new();
                s.written_scalars(&mut scalars_written);
                let mut names = BTreeSet::new();
                c.free_names(&mut names);
                let merged_into_guard = scalars_written
                    .iter()
                    .any(|x| targets.get(x).is_some_and(|v| names.contains(v)));
                if read.keys().any(|x| written.contains(x)) || merged_into_guard {
                    // The branches or the joins would change what the condition reads.
                    let g = self.fresh("g");
                    out.push(Stmt::Assign(
                        g.clone(),
                        Expr::ite(c, Expr::Int(1), Expr::Int(0)),
                    ));
                    c = Formula::eq(Expr::Var(g), Expr::Int(1));
                }
                let before = self.cur.clone();
                let ta = self.stmt(a, &BTreeMap::new());
                let after_a = std::mem::replace(&mut self.cur, before.clone());
                let tb = self.stmt(b, &BTreeMap::new());
                let after_b = std::mem::replace(&mut self.cur, before.clone());
                out.push(Stmt::If(
                    c.clone(),
                    Box::new(Stmt::seq(ta)),
                    Box::new(Stmt::seq(tb)),
                ));
                for x in scalars_written {
                    let va = after_a.get(&x).cloned().unwrap_or_else(|| x.clone());
                    let vb = after_b.get(&x).cloned().unwrap_or_else(|| x.clone());
                    let v = match targets.get(&x) {
                        Some(v) => v.clone(),
                        None => self.fresh(&x),
                    };
                    out.push(Stmt::Assign(
                        v.clone(),
                        Expr::ite(c.clone(), Expr::Var(va), Expr::Var(vb)),
                    ));
                    self.cur.insert(x, v);
                }
                out
            }
            Stmt::For(l) => {
                let mut out = Vec::new();
                let mut w = BTreeSet::new();
                l.body.written_scalars(&mut w);
                let mut carried = BTreeMap::new();
                for x in &w {
                    let v = match targets.get(x) {
                        Some(v) => v.clone(),
                        None => self.fresh(x),
                    };
                    let now = self.cur.get(x).cloned().unwrap_or_else(|| x.clone());
                    if now != v {
                        out.push(Stmt::Assign(v.clone(), Expr::Var(now)));
                    }
                    self.cur.insert(x.clone(), v.clone());
                    carried.insert(x.clone(), v);
                }
                let ub = self.expr(&l.ub);
                let body = self.stmt(&l.body, &carried);
                for (x, v) in carried {
                    self.cur.insert(x, v);
                }
                out.push(Stmt::For(Loop {
                    counter: l.counter.clone(),
                    ub,
                    body: Box::new(Stmt::seq(body)),
                }));
                out
            }
        }
    }

    fn cur_of(&self, a: &str) -> Name {
        self.cur.get(a).cloned().unwrap_or_else(|| a.to_string())
    }
}

/// Splits a body into top-level segments: each loop or `if` stands alone,
/// runs of other statements are grouped.
fn segments(body: &Stmt) -> Vec<Vec<Stmt>> {
    let mut out: Vec<Vec<Stmt>> = Vec::new();
    let mut run = Vec::new();
    for s in body.flatten() {
        if s.has_loop() {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
            out.push(vec![s]);
        } else {
            run.push(s);
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

pub fn ssa_rename(p: &Program, spec: &Spec) -> Result<SsaProgram, SsaError> {
    let mut taken = BTreeSet::new();
    p.body.reads(&mut taken);
    p.body.written_scalars(&mut taken);
    p.body.counters(&mut taken);
    taken.extend(p.arrays.keys().cloned());
    spec.pre.all_names(&mut taken);
    spec.post.all_names(&mut taken);
    let mut r = Renamer {
        taken,
        versions: BTreeMap::new(),
        cur: BTreeMap::new(),
    };
    let mut out = Vec::new();
    for seg in segments(&p.body) {
        let mut written = BTreeSet::new();
        for s in &seg {
            s.written_arrays(&mut written);
        }
        let single_copy = matches!(seg.as_slice(), [Stmt::ArrayCopy(..)]);
        for a in &written {
            let v = r.fresh(a);
            if !single_copy {
                out.push(Stmt::ArrayCopy(v.clone(), r.cur_of(a)));
            }
            r.cur.insert(a.clone(), v);
        }
        if single_copy {
            let Stmt::ArrayCopy(d, src) = &seg[0] else {
                unreachable!()
            };
            let src_now = r.cur_of(src);
            let src_now = if src == d {
                r.versions[d]
                    .iter()
                    .rev()
                    .nth(1)
                    .cloned()
                    .unwrap_or(src_now)
            } else {
                src_now
            };
            out.push(Stmt::ArrayCopy(r.cur_of(d), src_now));
            continue;
        }
        out.extend(r.block(&seg, &BTreeMap::new()));
    }
    let mut finals = BTreeMap::new();
    let mut names: BTreeSet<Name> = p.scalars.clone();
    names.extend(p.arrays.keys().cloned());
    for x in names {
        finals.insert(x.clone(), r.cur_of(&x));
        r.versions
            .entry(x.clone())
            .or_insert_with(|| vec![x.clone()]);
    }
    let post = spec.post.rename(&finals);
    let mut program = Program::new(Stmt::seq(out));
    let mut dims = p.arrays.clone();
    for (a, vs) in &r.versions {
        if let Some(d) = p.arrays.get(a) {
            for v in vs {
                dims.insert(v.clone(), *d);
            }
        }
    }
    program.refresh_symbols(&dims);
    Ok(SsaProgram {
        program,
        versions: r.versions,
        finals,
        spec: Spec {
            pre: spec.pre.clone(),
            post,
        },
    })
}

impl SsaProgram {
    /// Assignment sites per scalar version, excluding loop-entry copies.
    pub fn write_sites(&self) -> BTreeMap<Name, usize> {
        let mut out = BTreeMap::new();
        fn go(s: &Stmt, out: &mut BTreeMap<Name, usize>) {
            match s {
                Stmt::Seq(v) => {
                    for (k, x) in v.iter().enumerate() {
                        // A copy `x_L = y` directly before the loop that carries x_L is its phi-node.
                        let is_phi = match (x, v.get(k + 1..)) {
                            (Stmt::Assign(t, Expr::Var(_)), Some(rest)) => {
                                let next_loop = rest
                                    .iter()
                                    .find(|s| !matches!(s, Stmt::Assign(_, Expr::Var(_))));
                                matches!(next_loop, Some(Stmt::For(l)) if {
                                    let mut w = BTreeSet::new();
                                    l.body.written_scalars(&mut w);
                                    w.contains(t)
                                })
                            }
                            _ => false,
                        };
                        if !is_phi {
                            go(x, out);
                        }
                    }
                }
                Stmt::Assign(x, _) => *out.entry(x.clone()).or_insert(0) += 1,
                Stmt::If(_, a, b) => {
                    go(a, out);
                    go(b, out);
                }
                Stmt::For(l) => go(&l.body, out),
                _ => {}
            }
        }
        go(&self.program.body, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use crate::interp::{run, Env};
    use rand::SeedableRng;

    fn agree(src: &str) {
        let (p, spec) = parse(src).unwrap();
        let s = ssa_rename(&p, &spec).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 1..=5 {
            for _ in 0..10 {
                let mut e1 = Env::random(&p, n, &mut rng, -4, 4);
                let mut e2 = e1.clone();
                e2.complete(&s.program);
                run(&p, &mut e1).unwrap();
                run(&s.program, &mut e2).unwrap();
                for (x, v) in &s.finals {
                    if let Some(a) = e1.arrays.get(x) {
                        assert_eq!(a, &e2.arrays[v], "{x} in\n{}", s.program.body.render());
                    } else {
                        assert_eq!(
                            e1.scalars[x],
                            e2.scalars[v],
                            "{x} in\n{}",
                            s.program.body.render()
                        );
                    }
                }
            }
        }
        for (v, k) in s.write_sites() {
            assert!(
                k <= 1,
                "{v} written {k} times in\n{}",
                s.program.body.render()
            );
        }
    }

    #[test]
    fn running_example() {
        let src = "x = 0; for (i = 0; i < N; i++) { x = x + N*N; a[i] = a[i] + N; }
                   for (j = 0; j < N; j++) { b[j] = x + j; }
                   // assert(forall j in [0, N) :: b[j] == j + N*N*N)";
        agree(src);
        let (p, spec) = parse(src).unwrap();
        let s = ssa_rename(&p, &spec).unwrap();
        assert_eq!(s.finals["b"], "b_1");
        assert_eq!(
            s.spec.post.to_string(),
            "(forall j in [0, N) :: b_1[j] == j + N * N * N)"
        );
        assert_eq!(s.versions["x"].len(), 3);
    }

    #[test]
    fn branches_and_nesting() {
        agree("s = 0; for (i = 0; i < N; i++) { if (a[i] > 0) { s = s + a[i]; } else { s = s - 1; t = s; } }");
        agree("for (i = 0; i < N; i++) { x = 1; for (j = 0; j < N; j++) { x = x + j; y = x; } z = x + y; }");
        agree("for (i = 0; i < N; i++) { if (a[i] > 0) { a[i] = 0 - a[i]; } }");
        agree("x = 1; y = x; x = y + 1;");
        agree("for (i = 0; i < N; i++) { a[i] = i; a[i] = a[i] + 1; } for (k = 0; k < N; k++) { s = s + a[k]; }");
    }

    #[test]
    fn motivating_nested() {
        agree(
            "S = 0; for (i = 0; i < N; i++) { A[i] = 0; } for (j = 0; j < N; j++) { S = S + 1; }
             for (k = 0; k < N; k++) { for (l = 0; l < N; l++) { A[l] = A[l] + 1; } A[k] = A[k] + S; }",
        );
    }
}
