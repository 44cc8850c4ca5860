//! Post-conditions of the form `exists i in [0, N) :: beta`.

use std::time::Instant;

use super::{finish, settle, Config, Run, Status, Stop, Verdict};
use crate::ast::{Expr, Formula, Program, Rel};
use crate::frontend::Spec;
use crate::interp::fixed::FixedResult;
use crate::ssa::ssa_rename;

/// Candidate witnesses, as offsets `k` in `N - k`; `None` is the index 0.
pub const WITNESS_TERMS: [Option<i128>; 3] = [None, Some(1), Some(2)];

fn witness(k: Option<i128>) -> Expr {
    match k {
        None => Expr::Int(0),
        Some(k) => Expr::n_minus(k),
    }
}

/// Proves each conjunct of the post on its own. An existential conjunct
/// is tried with a witness at the boundary, then by induction on the
/// conjunct itself. Falls back to a counterexample sweep.
pub fn verify_existential(p: &Program, spec: &Spec, cfg: &Config) -> Verdict {
    let start = Instant::now();
    let calls0 = cfg.solver.calls.get();
    let mut run = Run::new(cfg, start + cfg.timeout, crate::transform::nesting_depth(p));
    let s = match ssa_rename(p, spec) {
        Ok(s) => s,
        Err(e) => return finish(run, Status::Unknown(e.to_string()), start, calls0),
    };
    let mut strategies = Vec::new();
    let mut failure = None;
    for c in s.spec.post.conjuncts() {
        run.diag = Default::default();
        match prove_conjunct(&mut run, &s.program, &s.spec.pre, &c) {
            Ok(how) => strategies.push(how),
            Err(stop) => {
                failure = Some(stop);
                break;
            }
        }
    }
    let status = match failure {
        None => {
            run.diag.strategy = Some(strategies.join("; "));
            Status::Verified
        }
        Some(stop) => settle(&mut run, p, spec, stop),
    };
    finish(run, status, start, calls0)
}

fn prove_conjunct(
    run: &mut Run,
    prog: &Program,
    pre: &Formula,
    post: &Formula,
) -> Result<String, Stop> {
    if !post.has_existential() {
        return run
            .prove(prog, pre, post, 1, 0)
            .map(|_| "universal".to_string());
    }
    if let Formula::Exists(bs, body) = post {
        if bs.len() == 1 && bs[0].lo == Expr::Int(0) && bs[0].hi == Expr::N {
            for k in WITNESS_TERMS {
                let w = witness(k);
                let inst = body.subst_var(&bs[0].var, &w);
                // Below N = k the witness is out of range; those sizes are checked directly.
                let (goal, small) = match k {
                    Some(k) if k > 1 => (
                        Formula::implies(Formula::Cmp(Rel::Ge, Expr::N, Expr::Int(k)), inst),
                        1..k,
                    ),
                    _ => (inst, 1..1),
                };
                run.diag = Default::default();
                let ok = run.prove(prog, pre, &goal, 1, 0).is_ok()
                    && small
                        .clone()
                        .all(|n| matches!(run.fixed(prog, pre, post, n), Ok(FixedResult::Valid)));
                if ok {
                    return Ok(format!("witness {w}"));
                }
            }
        }
    }
    run.diag = Default::default();
    run.prove(prog, pre, post, 1, 0)
        .map(|_| "induction".to_string())
}
