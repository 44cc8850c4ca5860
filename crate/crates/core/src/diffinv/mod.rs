//! Difference invariants between `Q_{N-1}` and `P_{N-1}`.
//!
//! The two programs run side by side in one product program over disjoint
//! variables: `P_{N-1}` names get a `!p` suffix, except inputs both runs
//! share. Facts are guessed from concrete runs of the product and kept only
//! if the solver proves them inductive.

mod fit;
mod infer;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Expr, Formula, Loop, Name, Program, Rel, Stmt};
use crate::interp::InterpError;
use crate::logic::wp::WpError;
use crate::poly::simplify_expr;

pub use fit::{sample, Samples};
pub use infer::{
    check_invariant_inductive, check_result_inductive, infer_diff_invariants, DiffInvariant,
    DiffResult, Location,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffInvError {
    #[error("product structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("no difference invariant verified")]
    NoInvariant,
    #[error("concrete run failed: {0}")]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Wp(#[from] WpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BranchMode {
    /// Both conditions are the same formula over shared names.
    Synced,
    /// All four combinations of the two conditions are kept.
    FourWay,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductProgram {
    /// `Q_{N-1}` and the renamed `P_{N-1}` interleaved; synchronized loops fused.
    pub program: Program,
    /// Name in `P` to its name in the product.
    pub p_names: BTreeMap<Name, Name>,
    /// Relation of the `P_{N-1}` inputs to the `Q_{N-1}` inputs.
    pub entry: Vec<Formula>,
    pub branches: Vec<BranchMode>,
    pub fused_loops: usize,
    pub unfused_loops: usize,
}

pub const P_SUFFIX: &str = "!p";

pub fn p_name(x: &str) -> Name {
    format!("{x}{P_SUFFIX}")
}

/// `P_{N-1}`: `N - 1` for `N` everywhere.
pub fn p_at_n_minus_1(p: &Program) -> Program {
    let m1 = Expr::n_minus(1);
    let body = p
        .body
        .map_exprs(&mut |e| simplify_expr(&e.subst_n(&m1)), &mut |f| {
            f.subst_n(&m1)
        });
    Program {
        body,
        arrays: p.arrays.clone(),
        scalars: p.scalars.clone(),
    }
}

/// Conjuncts `x == t` of `pre` that pin an input scalar `x`.
pub fn pinned_inputs(
    pre: &Formula,
    inputs: &BTreeSet<Name>,
    arrays: &BTreeMap<Name, usize>,
) -> BTreeMap<Name, Expr> {
    let mut out = BTreeMap::new();
    for c in conjuncts(pre) {
        if let Formula::Cmp(Rel::Eq, a, b) = c {
            for (x, t) in [(a, b), (b, a)] {
                if let Expr::Var(x) = x {
                    if inputs.contains(x)
                        && !arrays.contains_key(x)
                        && !t.mentions(x)
                        && !out.contains_key(x)
                    {
                        out.insert(x.clone(), t.clone());
                        break;
                    }
                }
            }
        }
    }
    out
}

/// Conjuncts `forall i in [0, N) :: a[i] == t` pinning a one-dimensional
/// input array to values that depend on `N`.
pub fn pinned_arrays(
    pre: &Formula,
    inputs: &BTreeSet<Name>,
    arrays: &BTreeMap<Name, usize>,
) -> BTreeMap<Name, (Name, Expr)> {
    let mut out = BTreeMap::new();
    for c in conjuncts(pre) {
        let Formula::Forall(bs, body) = c else {
            continue;
        };
        let [b] = bs.as_slice() else { continue };
        let Formula::Cmp(Rel::Eq, Expr::Read(a, idx), t) = body.as_ref() else {
            continue;
        };
        let simple =
            b.lo == Expr::Int(0) && b.hi == Expr::N && idx.as_slice() == [Expr::var(&b.var)];
        if simple
            && inputs.contains(a)
            && arrays.get(a) == Some(&1)
            && t.has_n()
            && !t.has_read()
            && !out.contains_key(a)
        {
            out.insert(a.clone(), (b.var.clone(), t.clone()));
        }
    }
    out
}

pub fn conjuncts(f: &Formula) -> Vec<&Formula> {
    match f {
        Formula::And(v) => v.iter().flat_map(conjuncts).collect(),
        Formula::Bool(true) => vec![],
        other => vec![other],
    }
}

/// Builds the product of `q = Q_{N-1}` and `p`, the SSA program whose
/// `P_{N-1}` instance is taken. Inputs pinned by `pre` get their own `P`
/// copy related by the entry formulas; other inputs are shared.
pub fn build_product(q: &Program, p: &Program, pre: &Formula) -> ProductProgram {
    let mut p = p.clone();
    p.refresh_symbols(&p.arrays.clone());
    let p = &p;
    let p1 = p_at_n_minus_1(p);
    let inputs = p.inputs();
    let pinned = pinned_inputs(pre, &inputs, &p.arrays);
    let mut p_names = BTreeMap::new();
    for x in p.scalars.iter().chain(p.arrays.keys()) {
        if !inputs.contains(x) || pinned.contains_key(x) {
            p_names.insert(x.clone(), p_name(x));
        }
    }
    let m1 = Expr::n_minus(1);
    let mut entry: Vec<Formula> = pinned
        .iter()
        .map(|(x, t)| {
            Formula::eq(
                Expr::var(&p_names[x]),
                simplify_expr(&t.subst_n(&m1).rename(&p_names)),
            )
        })
        .collect();
    for (a, (i, t)) in pinned_arrays(pre, &inputs, &p.arrays) {
        let pa = p_name(&a);
        p_names.insert(a, pa.clone());
        let bound = crate::ast::Bound {
            var: i.clone(),
            lo: Expr::Int(0),
            hi: m1.clone(),
        };
        let body = Formula::eq(
            Expr::read(&pa, vec![Expr::var(&i)]),
            simplify_expr(&t.subst_n(&m1)),
        );
        entry.push(Formula::forall(vec![bound], body));
    }
    let pr = p1.body.rename(&p_names);
    let mut b = Builder {
        branches: Vec::new(),
        fused: 0,
        unfused: 0,
    };
    let body = b.fuse(&q.body.flatten(), &pr.flatten());
    let mut arrays = q.arrays.clone();
    for (a, d) in &p.arrays {
        arrays.insert(p_names.get(a).cloned().unwrap_or_else(|| a.clone()), *d);
    }
    let mut program = Program::new(body);
    program.refresh_symbols(&arrays);
    ProductProgram {
        program,
        p_names,
        entry,
        branches: b.branches,
        fused_loops: b.fused,
        unfused_loops: b.unfused,
    }
}

struct Builder {
    branches: Vec<BranchMode>,
    fused: usize,
    unfused: usize,
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

impl Builder {
    /// Interleaves two statement lists. Loop-free statements are emitted as
    /// they come; loop-containing ones are paired positionally. The two
    /// sides share no written variable, so any interleaving is equivalent
    /// to running them one after the other.
    fn fuse(&mut self, q: &[Stmt], p: &[Stmt]) -> Stmt {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        loop {
            while i < q.len() && !q[i].has_loop() {
                out.push(q[i].clone());
                i += 1;
            }
            while j < p.len() && !p[j].has_loop() {
                out.push(p[j].clone());
                j += 1;
            }
            match (q.get(i), p.get(j)) {
                (Some(a), Some(b)) => {
                    out.push(self.pair(a, b));
                    i += 1;
                    j += 1;
                }
                (Some(a), None) => {
                    self.count_unfused(a);
                    out.push(a.clone());
                    i += 1;
                }
                (None, Some(b)) => {
                    self.count_unfused(b);
                    out.push(b.clone());
                    j += 1;
                }
                (None, None) => break,
            }
        }
        Stmt::seq(out)
    }

    fn count_unfused(&mut self, s: &Stmt) {
        self.unfused += crate::logic::vc::loops_preorder(s).len();
    }

    fn pair(&mut self, a: &Stmt, b: &Stmt) -> Stmt {
        match (a, b) {
            (Stmt::For(lq), Stmt::For(lp)) if simplify_expr(&lq.ub) == simplify_expr(&lp.ub) => {
                self.fused += 1;
                let pbody = if lp.counter == lq.counter {
                    (*lp.body).clone()
                } else {
                    crate::transform::subst_stmt(&lp.body, &lp.counter, &Expr::var(&lq.counter))
                };
                let body = self.fuse(&lq.body.flatten(), &pbody.flatten());
                Stmt::For(Loop {
                    counter: lq.counter.clone(),
                    ub: lq.ub.clone(),
                    body: Box::new(body),
                })
            }
            (Stmt::If(cq, aq, bq), Stmt::If(cp, ap, bp)) => {
                let mode = if *cq == strip_p(cp) {
                    BranchMode::Synced
                } else {
                    BranchMode::FourWay
                };
                self.branches.push(mode);
                let (aq, bq, ap, bp) = (aq.flatten(), bq.flatten(), ap.flatten(), bp.flatten());
                let tt = self.fuse(&aq, &ap);
                let tf = self.fuse(&aq, &bp);
                let ft = self.fuse(&bq, &ap);
                let ff = self.fuse(&bq, &bp);
                let side =
                    |c: &Formula, x: Stmt, y: Stmt| Stmt::If(c.clone(), Box::new(x), Box::new(y));
                side(cq, side(cp, tt, tf), side(cp, ft, ff))
            }
            _ => {
                self.count_unfused(a);
                self.count_unfused(b);
                Stmt::seq(vec![a.clone(), b.clone()])
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::frontend::parse;
    use crate::interp::{run, Env};
    use crate::logic::smt::Solver;
    use crate::ssa::ssa_rename;
    use crate::transform::gen_q_and_peel;
    use rand::SeedableRng;
    use std::time::Duration;

    pub(crate) fn product_of(
        src: &str,
    ) -> (
        crate::ssa::SsaProgram,
        crate::transform::QAndPeel,
        ProductProgram,
    ) {
        let (p, spec) = parse(src).unwrap();
        let s = ssa_rename(&p, &spec).unwrap();
        let qp = gen_q_and_peel(&s.program, &Solver::from_env(Duration::from_secs(10)), 1).unwrap();
        let prod = build_product(&qp.q, &s.program, &s.spec.pre);
        (s, qp, prod)
    }

    #[test]
    fn running_example_product_is_two_fused_loops() {
        let (_, _, prod) = product_of(
            "x = 0; for (i = 0; i < N; i++) { x = x + N*N; a[i] = a[i] + N; }
             for (j = 0; j < N; j++) { b[j] = x + j; }",
        );
        assert_eq!(prod.fused_loops, 2);
        assert_eq!(prod.unfused_loops, 0);
        assert!(prod.branches.is_empty());
        assert_eq!(prod.p_names["x_2"], "x_2!p");
        assert!(!prod.p_names.contains_key("a"));
    }

    #[test]
    fn product_runs_both_sides() {
        let src = "s = 0; for (i = 0; i < N; i++) { if (a[i] > 0) { s = s + a[i]; } } t = s;";
        let (s, qp, prod) = product_of(src);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 2..=5 {
            let mut e = Env::random(&prod.program, n, &mut rng, -3, 3);
            let mut eq = e.clone();
            let mut ep = e.clone();
            run(&prod.program, &mut e).unwrap();
            run(&qp.q, &mut eq).unwrap();
            let p1 = p_at_n_minus_1(&s.program);
            run(&p1, &mut ep).unwrap();
            assert_eq!(e.scalars["t_1"], eq.scalars["t_1"]);
            assert_eq!(e.scalars["t_1!p"], ep.scalars["t_1"]);
        }
    }

    #[test]
    fn pinned_inputs_get_entry_relation() {
        let (_, _, prod) =
            product_of("// assume(m == N + 1)\nfor (i = 0; i < N; i++) { a[i] = m; }");
        assert_eq!(prod.entry.len(), 1);
        assert_eq!(prod.entry[0].to_string(), "m!p == N");
    }

    #[test]
    fn differing_branch_conditions_are_four_way() {
        let (_, _, prod) = product_of(
            "if (N > 3) { for (j = 0; j < N; j++) { a[j] = 1; } } else { for (j = 0; j < N; j++) { a[j] = 0; } }",
        );
        assert_eq!(prod.branches, vec![BranchMode::FourWay]);
        let (_, _, prod) = product_of(
            "if (c > 0) { for (j = 0; j < N; j++) { a[j] = 1; } } else { for (j = 0; j < N; j++) { a[j] = 0; } }",
        );
        assert_eq!(prod.branches, vec![BranchMode::Synced]);
    }

    /// Parses a formula in which `x!p` is written `x__p`.
    pub(crate) fn pf(src: &str) -> Formula {
        let f = crate::frontend::parse_formula(src).unwrap();
        let mut names = BTreeSet::new();
        f.free_names(&mut names);
        let map = names
            .into_iter()
            .filter_map(|n| n.strip_suffix("__p").map(|b| (n.clone(), p_name(b))))
            .collect();
        f.rename(&map)
    }
}
