//! Inductive step over the peel and the strengthening loop.

use std::collections::BTreeSet;

use serde::{Serialize, Serializer};

use super::{unknown, Run, Stop};
use crate::ast::{BinOp, Expr, Formula, Name, Program, Rel};
use crate::diffinv::{
    build_product, infer_diff_invariants, pinned_inputs, DiffInvariant, P_SUFFIX,
};
use crate::frontend::Spec;
use crate::interp::fixed::FixedResult;
use crate::logic::qe::{eliminate, formula_diff, Equation};
use crate::logic::ranges::split_at_points;
use crate::logic::simplify::simplify;
use crate::logic::wp::wp;
use crate::ssa::ssa_rename;
use crate::transform::gen_q_and_peel;

fn as_text<S: Serializer>(f: &Formula, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&f.to_string())
}

/// One round of strengthening.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrengthenStep {
    /// Part of `wp(chi(N), peel)` not implied by the hypotheses.
    #[serde(serialize_with = "as_text")]
    pub wp: Formula,
    /// The same condition over the final state of `P_{N-1}`.
    #[serde(serialize_with = "as_text")]
    pub chi_prime: Formula,
    /// The new conjunct of the post-condition of `P_N`.
    #[serde(serialize_with = "as_text")]
    pub chi: Formula,
}

fn ge_n(k: i128) -> Formula {
    Formula::Cmp(Rel::Ge, Expr::N, Expr::Int(k))
}

/// `den * core` split into `(den, core)`.
fn unscale(e: &Expr) -> (i128, &Expr) {
    match e {
        Expr::Bin(BinOp::Mul, k, core) => match k.as_ref() {
            Expr::Int(d) => (*d, core.as_ref()),
            _ => (1, e),
        },
        _ => (1, e),
    }
}

fn divide(rhs: &Expr, den: i128) -> Expr {
    if den == 1 {
        rhs.clone()
    } else {
        Expr::bin(BinOp::Div, rhs.clone(), Expr::Int(den))
    }
}

/// Defining equations read off the facts of a difference invariant.
pub(crate) fn equations(inv: &DiffInvariant) -> Vec<Equation> {
    let mut out = Vec::new();
    for f in inv.diffs.iter().chain(&inv.values) {
        let (bounds, body) = match f {
            Formula::Forall(bs, body) => (bs.clone(), body.as_ref()),
            other => (Vec::new(), other),
        };
        let Formula::Cmp(Rel::Eq, lhs, rhs) = body else {
            continue;
        };
        let (den, core) = unscale(lhs);
        let rhs = divide(rhs, den);
        let (target, value) = match core {
            Expr::Bin(BinOp::Sub, a, b) => (a.as_ref(), Expr::add((**b).clone(), rhs)),
            other => (other, rhs),
        };
        match (target, bounds.is_empty()) {
            (Expr::Var(x), true) => out.push(Equation::Scalar {
                var: x.clone(),
                value,
            }),
            (Expr::Read(a, _), false) => out.push(Equation::Array {
                array: a.clone(),
                vars: bounds.iter().map(|b| b.var.clone()).collect(),
                region: bounds
                    .iter()
                    .map(|b| (b.lo.clone(), b.hi.clone()))
                    .collect(),
                guard: Formula::Bool(true),
                value,
            }),
            _ => {}
        }
    }
    out
}

fn strip_p(f: &Formula) -> Formula {
    let mut names = BTreeSet::new();
    f.free_names(&mut names);
    let map = names
        .into_iter()
        .filter_map(|n| n.strip_suffix(P_SUFFIX).map(|b| (n.clone(), b.to_string())))
        .collect();
    f.rename(&map)
}

/// Renames `x!p` symbols of an outer level so an inner product can reuse the suffix.
fn hide_p(f: &Formula, depth: usize) -> Formula {
    let mut names = BTreeSet::new();
    f.free_names(&mut names);
    let map = names
        .into_iter()
        .filter_map(|n| {
            n.strip_suffix(P_SUFFIX)
                .map(|b| (n.clone(), format!("{b}!o{depth}")))
        })
        .collect();
    f.rename(&map)
}

impl Run<'_> {
    fn valid(&self, hyps: &[Formula], goal: &Formula) -> Result<bool, Stop> {
        Ok(self.solver()?.is_valid(hyps, goal))
    }

    fn base_at(
        &mut self,
        prog: &Program,
        pre: &Formula,
        post: &Formula,
        n: i128,
        depth: usize,
    ) -> Result<(), Stop> {
        match self.fixed(prog, pre, post, n)? {
            FixedResult::Valid => {
                if depth == 0 {
                    self.diag.base_checked.push(n);
                }
                Ok(())
            }
            FixedResult::Invalid(env) if depth == 0 => Err(Stop::Falsified(n, env)),
            FixedResult::Invalid(_) => unknown(format!("peel triple fails at N={n}")),
            FixedResult::Unknown(r) => unknown(format!("base case at N={n}: {r}")),
        }
    }

    /// Proves `{pre} prog {post}` for every `N >= lo`. `prog` is in SSA form
    /// with `post` over its final versions.
    pub(crate) fn prove(
        &mut self,
        prog: &Program,
        pre: &Formula,
        post: &Formula,
        lo: i128,
        depth: usize,
    ) -> Result<(), Stop> {
        self.diag.recursion_depth = self.diag.recursion_depth.max(depth);
        let m = self.cfg.base_width;
        for n in lo..lo + m {
            self.base_at(prog, pre, post, n, depth)?;
        }
        if depth == 0 {
            self.diag.gate.base_case = true;
        }
        let n0 = lo + m;
        if !prog.body.has_loop() {
            let g = wp(&prog.body, post, n0).map_err(|e| Stop::Unknown(e.to_string()))?;
            if self.valid(&[pre.clone(), ge_n(n0)], &g)? {
                if depth == 0 {
                    self.diag.gate.inductive_step = true;
                }
                return Ok(());
            }
            return unknown("loop-free triple is not valid");
        }
        let solver = self.solver()?;
        let qp = gen_q_and_peel(prog, &solver, n0).map_err(|e| Stop::Unknown(e.to_string()))?;
        let prod = build_product(&qp.q, prog, pre);
        let d =
            infer_diff_invariants(&prod, pre, &solver).map_err(|e| Stop::Unknown(e.to_string()))?;
        if depth == 0 {
            self.diag.diff_invariants = d.d_final().conjuncts();
            self.diag.peel_has_loop = qp.peel.body.has_loop();
        }
        let m1 = Expr::n_minus(1);
        let to_p = |f: &Formula| simplify(&f.subst_n(&m1).rename(&prod.p_names));

        let (_, delta) = formula_diff(pre);
        // Widen the base case until the N-1 instance satisfies the pre-condition.
        let mut n0 = n0;
        let base = loop {
            let mut base = vec![pre.clone(), delta.clone(), ge_n(n0)];
            base.extend(prod.entry.iter().cloned());
            if self.valid(&base, &to_p(pre))? {
                break base;
            }
            if n0 >= lo + self.cfg.base_bound {
                return unknown(
                    "inputs of the N-1 instance are not constrained by the pre-condition",
                );
            }
            self.base_at(prog, pre, post, n0, depth)?;
            n0 += 1;
        };
        let mut hyps = base;
        hyps.push(to_p(post));
        hyps.push(d.d_final());

        let eqs = equations(&d.exit);
        let inputs = prog.inputs();
        let elim: BTreeSet<Name> = prog
            .scalars
            .iter()
            .chain(prog.arrays.keys())
            .filter(|x| !inputs.contains(*x))
            .cloned()
            .collect();
        let pinned = pinned_inputs(pre, &inputs, &prog.arrays);

        let peel = &qp.peel;
        let mut xi: Vec<Formula> = Vec::new();
        let mut chi = post.clone();
        for it in 0..=self.cfg.strengthen_cap {
            let mut h = hyps.clone();
            h.extend(xi.iter().map(&to_p));
            let mut goal = vec![post.clone()];
            goal.extend(xi.iter().cloned());
            let goal = Formula::and(goal);
            if peel.body.has_loop() {
                return self.recurse(peel, &h, &goal, n0, depth);
            }
            let vc = wp(&peel.body, &goal, n0).map_err(|e| Stop::Unknown(e.to_string()))?;
            if self.valid(&h, &vc)? {
                if depth == 0 {
                    self.diag.strengthen_iterations = it;
                    self.diag.gate.strengthening_rechecked = true;
                    self.diag.gate.inductive_step = true;
                }
                return Ok(());
            }
            if it == self.cfg.strengthen_cap {
                break;
            }
            let w = wp(&peel.body, &chi, n0).map_err(|e| Stop::Unknown(e.to_string()))?;
            let parts = split_at_points(&simplify(&w), n0).conjuncts();
            let implied = self.solver()?.valid_goals(&h, &parts);
            let keep: Vec<Formula> = parts
                .into_iter()
                .zip(implied)
                .filter(|(_, ok)| !ok)
                .map(|(f, _)| f)
                .collect();
            if keep.is_empty() {
                return unknown("strengthening made no progress");
            }
            let chi_q = Formula::and(keep);
            let (g, residual) = eliminate(&chi_q, &eqs, &elim, n0);
            if !residual.is_empty() {
                let names: Vec<&str> = residual.iter().map(|s| s.as_str()).collect();
                return unknown(format!("could not eliminate {}", names.join(", ")));
            }
            let chi_prime = simplify(&g.subst_vars(&pinned));
            let chi_n = simplify(&strip_p(&chi_prime).subst_n(&Expr::add(Expr::N, Expr::Int(1))));
            let mut all = xi.clone();
            all.push(chi_n.clone());
            let all = Formula::and(all);
            for n in lo..n0 {
                match self.fixed(prog, pre, &all, n)? {
                    FixedResult::Valid => {}
                    _ => {
                        return unknown(format!(
                            "unable to prove: strengthened post fails at N={n}"
                        ))
                    }
                }
            }
            self.log(format!("strengthening {}: {chi_n}", it + 1));
            if depth == 0 {
                self.diag.strengthening.push(StrengthenStep {
                    wp: chi_q,
                    chi_prime,
                    chi: chi_n.clone(),
                });
            }
            xi.push(chi_n.clone());
            chi = chi_n;
        }
        unknown("strengthening iteration cap reached")
    }

    /// Proves `{hyps} peel {goal}` for `N >= lo` by running the whole
    /// procedure on the peel, whose entry state is the final state of `Q`.
    fn recurse(
        &mut self,
        peel: &Program,
        hyps: &[Formula],
        goal: &Formula,
        lo: i128,
        depth: usize,
    ) -> Result<(), Stop> {
        if depth + 1 > self.max_depth {
            return unknown("recursion depth cap reached on a looping peel");
        }
        self.log(format!(
            "recursing on a looping peel at depth {}",
            depth + 1
        ));
        let pre = hide_p(&Formula::and(hyps.to_vec()), depth);
        let spec = Spec {
            pre,
            post: goal.clone(),
        };
        let s = ssa_rename(peel, &spec).map_err(|e| Stop::Unknown(e.to_string()))?;
        self.prove(&s.program, &s.spec.pre, &s.spec.post, lo, depth + 1)?;
        if depth == 0 {
            self.diag.gate.strengthening_rechecked = true;
            self.diag.gate.inductive_step = true;
        }
        Ok(())
    }
}
