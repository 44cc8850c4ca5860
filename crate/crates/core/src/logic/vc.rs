//! Verification conditions for programs with loops, cut at loop heads by
//! candidate invariants.
//!
//! Each obligation carries the tag of the goal or invariant it establishes,
//! so a failing obligation identifies the candidate to drop. Variables
//! modified by a loop are renamed to fresh names in its preservation and exit
//! conditions; those names only occur positively and are therefore read
//! universally by a validity check.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::{Expr, Formula, Loop, Name, Rel, Stmt};
use crate::logic::wp::{wp, WpError};

pub type Tag = usize;

/// Tag of the built-in counter range fact.
pub const FRAME: Tag = usize::MAX;

/// Candidate invariants per loop, keyed by preorder loop index.
pub type Invariants = BTreeMap<usize, Vec<(Tag, Formula)>>;

/// Loops of `s` in preorder; the index is the key used by [`Invariants`].
pub fn loops_preorder(s: &Stmt) -> Vec<&Loop> {
    let mut out = Vec::new();
    fn go<'a>(s: &'a Stmt, out: &mut Vec<&'a Loop>) {
        match s {
            Stmt::Seq(v) => v.iter().for_each(|x| go(x, out)),
            Stmt::If(_, a, b) => {
                go(a, out);
                go(b, out);
            }
            Stmt::For(l) => {
                out.push(l);
                go(&l.body, out);
            }
            _ => {}
        }
    }
    go(s, &mut out);
    out
}

/// `0 <= c && (c <= ub || c == 0)`: holds at every head visit and pins the
/// counter to `max(ub, 0)` on exit.
pub fn counter_fact(l: &Loop) -> Formula {
    let c = Expr::var(&l.counter);
    Formula::and(vec![
        Formula::Cmp(Rel::Le, Expr::Int(0), c.clone()),
        Formula::or(vec![
            Formula::Cmp(Rel::Le, c.clone(), l.ub.clone()),
            Formula::eq(c, Expr::Int(0)),
        ]),
    ])
}

pub struct VcGen<'a> {
    ids: BTreeMap<*const Loop, usize>,
    invs: &'a Invariants,
    n_min: i128,
    fresh: usize,
}

impl<'a> VcGen<'a> {
    pub fn new(program: &Stmt, invs: &'a Invariants, n_min: i128) -> VcGen<'a> {
        let ids = loops_preorder(program)
            .into_iter()
            .enumerate()
            .map(|(k, l)| (l as *const Loop, k))
            .collect();
        VcGen {
            ids,
            invs,
            n_min,
            fresh: 0,
        }
    }

    /// Formulas whose validity establishes every goal after `s` and every
    /// invariant at the loops of `s`. `s` must be the program given to
    /// [`VcGen::new`] or a sub-statement of it.
    pub fn obligations(
        &mut self,
        s: &Stmt,
        goals: Vec<(Tag, Formula)>,
    ) -> Result<Vec<(Tag, Formula)>, WpError> {
        if !s.has_loop() {
            return goals
                .into_iter()
                .map(|(t, g)| Ok((t, wp(s, &g, self.n_min)?)))
                .collect();
        }
        match s {
            Stmt::Seq(v) => {
                let mut goals = goals;
                for x in v.iter().rev() {
                    goals = self.obligations(x, goals)?;
                }
                Ok(goals)
            }
            Stmt::If(c, a, b) => {
                let oa = self.obligations(a, goals.clone())?;
                let ob = self.obligations(b, goals)?;
                let nc = crate::logic::simplify::negate(c);
                Ok(oa
                    .into_iter()
                    .map(|(t, f)| (t, Formula::implies(c.clone(), f)))
                    .chain(
                        ob.into_iter()
                            .map(|(t, f)| (t, Formula::implies(nc.clone(), f))),
                    )
                    .collect())
            }
            Stmt::For(l) => self.lp(l, goals),
            _ => unreachable!("loop-free statements are handled above"),
        }
    }

    fn lp(&mut self, l: &Loop, goals: Vec<(Tag, Formula)>) -> Result<Vec<(Tag, Formula)>, WpError> {
        let id = self.ids.get(&(l as *const Loop)).copied();
        let mut cands: Vec<(Tag, Formula)> = vec![(FRAME, counter_fact(l))];
        if let Some(v) = id.and_then(|k| self.invs.get(&k)) {
            cands.extend(v.iter().cloned());
        }
        let c = Expr::var(&l.counter);
        let mut out = Vec::new();
        for (t, f) in &cands {
            out.push((*t, f.subst_var(&l.counter, &Expr::Int(0))));
        }
        // Everything the loop may change, renamed for the arbitrary iteration.
        let mut modified = BTreeSet::new();
        l.body.written_scalars(&mut modified);
        l.body.written_arrays(&mut modified);
        modified.insert(l.counter.clone());
        self.fresh += 1;
        let sigma: BTreeMap<Name, Name> = modified
            .iter()
            .map(|x| (x.clone(), format!("{x}!h{}", self.fresh)))
            .collect();
        let inv = Formula::and(cands.iter().map(|(_, f)| f.clone()).collect());
        let inv_s = inv.rename(&sigma);
        let next = Expr::add(c.clone(), Expr::Int(1));
        let step_goals = cands
            .iter()
            .map(|(t, f)| (*t, f.subst_var(&l.counter, &next)))
            .collect();
        let in_range = Formula::Cmp(Rel::Lt, c.clone(), l.ub.clone()).rename(&sigma);
        for (t, f) in self.obligations(&l.body, step_goals)? {
            out.push((
                t,
                Formula::implies(
                    Formula::and(vec![inv_s.clone(), in_range.clone()]),
                    f.rename(&sigma),
                ),
            ));
        }
        let done = Formula::Cmp(Rel::Ge, c, l.ub.clone()).rename(&sigma);
        for (t, g) in goals {
            out.push((
                t,
                Formula::implies(
                    Formula::and(vec![inv_s.clone(), done.clone()]),
                    g.rename(&sigma),
                ),
            ));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;
    use crate::frontend::{parse, parse_formula};
    use crate::logic::smt::Solver;

    #[test]
    fn loop_with_invariant() {
        let (p, _) = parse("x = 0; for (i = 0; i < N; i++) { x = x + 2; }").unwrap();
        let mut invs = Invariants::new();
        invs.insert(0, vec![(1, parse_formula("x == 2 * i").unwrap())]);
        let mut g = VcGen::new(&p.body, &invs, 1);
        let obs = g
            .obligations(&p.body, vec![(0, parse_formula("x == 2 * N").unwrap())])
            .unwrap();
        let solver = Solver::from_env(Duration::from_secs(10));
        let hyp = parse_formula("N >= 1").unwrap();
        for (t, f) in &obs {
            assert!(solver.is_valid(&[hyp.clone()], f), "tag {t}: {f}");
        }
        // A wrong invariant fails its preservation obligation.
        invs.insert(0, vec![(1, parse_formula("x == i").unwrap())]);
        let mut g = VcGen::new(&p.body, &invs, 1);
        let obs = g.obligations(&p.body, vec![]).unwrap();
        assert!(obs
            .iter()
            .any(|(t, f)| *t == 1 && !solver.is_valid(&[hyp.clone()], f)));
    }
}
