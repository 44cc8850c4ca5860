//! Full-program induction on `N`: base case, inductive step over the peel,
//! and strengthening of the post-condition.

mod existential;
mod induct;

use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};

use crate::ast::{Formula, Program};
use crate::frontend::Spec;
use crate::interp::fixed::{check_fixed_n, replay, FixedResult};
use crate::interp::{Env, DEFAULT_BUDGET};
use crate::logic::smt::Solver;
use crate::ssa::ssa_rename;

pub use existential::{verify_existential, WITNESS_TERMS};
pub use induct::StrengthenStep;

#[derive(Clone, Debug)]
pub struct Config {
    pub solver: Solver,
    /// Wall-clock budget for one program.
    pub timeout: Duration,
    /// Base case covers `N = 1..=base_width`.
    pub base_width: i128,
    /// Fixed-`N` sweep bound used to look for counterexamples.
    pub base_bound: i128,
    pub strengthen_cap: usize,
    pub unroll_budget: usize,
}

impl Config {
    pub fn new(solver: Solver) -> Config {
        Config {
            solver,
            timeout: Duration::from_secs(60),
            base_width: 1,
            base_bound: 8,
            strengthen_cap: 10,
            unroll_budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Status {
    Verified,
    Falsified { n: i128, env: Env },
    Unknown(String),
}

/// What a `Verified` verdict rests on.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Gate {
    pub base_case: bool,
    pub strengthening_rechecked: bool,
    pub inductive_step: bool,
}

fn formulas_as_text<S: Serializer>(v: &[Formula], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|f| f.to_string()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub millis: u64,
    pub base_checked: Vec<i128>,
    pub strengthen_iterations: usize,
    pub recursion_depth: usize,
    pub peel_has_loop: bool,
    #[serde(serialize_with = "formulas_as_text")]
    pub diff_invariants: Vec<Formula>,
    pub strengthening: Vec<StrengthenStep>,
    pub gate: Gate,
    pub witness_replayed: bool,
    /// Existential strategy that succeeded, if any.
    pub strategy: Option<String>,
    pub solver_calls: usize,
    pub log: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub status: Status,
    pub diagnostics: Diagnostics,
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        self.status == Status::Verified
    }

    pub fn is_falsified(&self) -> bool {
        matches!(self.status, Status::Falsified { .. })
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        match &self.status {
            Status::Verified => {
                let k = self.diagnostics.strengthen_iterations;
                if k == 0 {
                    "Verified".to_string()
                } else {
                    format!(
                        "Verified ({k} strengthening iteration{})",
                        if k == 1 { "" } else { "s" }
                    )
                }
            }
            Status::Falsified { n, .. } => format!("Falsified at N={n}"),
            Status::Unknown(r) => format!("Unknown: {r}"),
        }
    }
}

/// Early exit from the proof search.
#[derive(Clone, Debug)]
pub(crate) enum Stop {
    Falsified(i128, Env),
    Unknown(String),
}

pub(crate) fn unknown<T>(msg: impl Into<String>) -> Result<T, Stop> {
    Err(Stop::Unknown(msg.into()))
}

pub(crate) struct Run<'a> {
    pub cfg: &'a Config,
    pub deadline: Instant,
    pub diag: Diagnostics,
    pub max_depth: usize,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a Config, deadline: Instant, max_depth: usize) -> Run<'a> {
        Run {
            cfg,
            deadline,
            diag: Diagnostics::default(),
            max_depth,
        }
    }

    /// Solver whose per-query timeout does not outlast the program budget.
    pub fn solver(&self) -> Result<Solver, Stop> {
        let left = self.deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return unknown("timeout");
        }
        Ok(self
            .cfg
            .solver
            .with_timeout(left.min(self.cfg.solver.timeout)))
    }

    pub fn fixed(
        &self,
        p: &Program,
        pre: &Formula,
        post: &Formula,
        n: i128,
    ) -> Result<FixedResult, Stop> {
        Ok(check_fixed_n(
            p,
            pre,
            post,
            n,
            &self.solver()?,
            self.cfg.unroll_budget,
        ))
    }

    pub fn log(&mut self, msg: impl Into<String>) {
        self.diag.log.push(msg.into());
    }
}

/// Proves `{spec.pre} p {spec.post}` for every `N >= 1`.
pub fn verify(p: &Program, spec: &Spec, cfg: &Config) -> Verdict {
    if spec.post.has_existential() {
        return verify_existential(p, spec, cfg);
    }
    let start = Instant::now();
    let calls0 = cfg.solver.calls.get();
    let mut run = Run::new(cfg, start + cfg.timeout, crate::transform::nesting_depth(p));
    let status = match ssa_rename(p, spec) {
        Err(e) => Status::Unknown(e.to_string()),
        Ok(s) => match run.prove(&s.program, &s.spec.pre, &s.spec.post, 1, 0) {
            Ok(()) => Status::Verified,
            Err(stop) => settle(&mut run, p, spec, stop),
        },
    };
    finish(run, status, start, calls0)
}

pub(crate) fn finish(mut run: Run, status: Status, start: Instant, calls0: usize) -> Verdict {
    run.diag.millis = start.elapsed().as_millis() as u64;
    run.diag.solver_calls = run.cfg.solver.calls.get() - calls0;
    Verdict {
        status,
        diagnostics: run.diag,
    }
}

/// Turns an early exit into a verdict: witnesses are replayed, and an
/// unknown outcome triggers a fixed-`N` sweep for a counterexample.
pub(crate) fn settle(run: &mut Run, p: &Program, spec: &Spec, stop: Stop) -> Status {
    match stop {
        Stop::Falsified(n, env) => confirm(run, p, spec, n, env),
        Stop::Unknown(reason) => {
            run.log(format!("inductive proof failed: {reason}"));
            match sweep(run, p, spec) {
                Some((n, env)) => confirm(run, p, spec, n, env),
                None => Status::Unknown(reason),
            }
        }
    }
}

fn confirm(run: &mut Run, p: &Program, spec: &Spec, n: i128, env: Env) -> Status {
    match replay(p, &spec.pre, &spec.post, &env, run.cfg.unroll_budget) {
        Ok(true) => {
            run.diag.witness_replayed = true;
            Status::Falsified { n, env }
        }
        _ => Status::Unknown(format!("counterexample at N={n} did not replay")),
    }
}

/// Fixed-`N` checks for `N = 1..=base_bound`; the first violation found.
pub(crate) fn sweep(run: &mut Run, p: &Program, spec: &Spec) -> Option<(i128, Env)> {
    for n in 1..=run.cfg.base_bound {
        match run.fixed(p, &spec.pre, &spec.post, n) {
            Ok(FixedResult::Invalid(env)) => return Some((n, env)),
            Ok(FixedResult::Valid) => {}
            Ok(FixedResult::Unknown(r)) => {
                run.log(format!("sweep stopped at N={n}: {r}"));
                return None;
            }
            Err(_) => return None,
        }
    }
    None
}

#[cfg(test)]
mod tests;
