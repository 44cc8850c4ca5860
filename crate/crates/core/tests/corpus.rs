mod common;

use common::{constrained_env, corpus, existential, rng, solver, theorem1};
use diffy::interp::{check_fixed_n, eval_formula, replay, run, Env, FixedResult, DEFAULT_BUDGET};
use diffy::logic::qe::formula_diff;
use diffy::ssa::ssa_rename;
use diffy::transform::{gen_q_and_peel, nesting_depth};
use diffy::{Expr, Formula, Rel};

#[test]
fn corpus_has_the_planned_shape() {
    let all = corpus();
    for cat in ["c1", "c2", "c3"] {
        let safe = all.iter().filter(|e| e.category == cat && e.safe).count();
        let unsafe_ = all.iter().filter(|e| e.category == cat && !e.safe).count();
        assert!(safe >= if cat == "c1" { 10 } else { 6 }, "{cat}");
        assert_eq!(safe, unsafe_, "{cat}: every safe program has a mutant");
    }
    assert_eq!(existential().len(), 6);
    for e in all.iter().chain(&existential()) {
        e.load();
    }
}

#[test]
fn truncation_plus_peel_matches_every_corpus_program() {
    let s = solver();
    for (k, e) in corpus().iter().enumerate() {
        let (p, spec) = e.load();
        assert_eq!(theorem1(&p, &spec, &s, k as u64), Ok(true), "{}", e.name);
    }
}

#[test]
fn peels_lose_one_level_of_nesting() {
    let s = solver();
    for e in corpus() {
        let (p, spec) = e.load();
        let ssa = ssa_rename(&p, &spec).unwrap();
        let qp = gen_q_and_peel(&ssa.program, &s, 1).unwrap();
        let (d, dp) = (nesting_depth(&p), nesting_depth(&qp.peel));
        assert!(dp < d, "{}: {dp} >= {d}", e.name);
        if d == 1 {
            assert_eq!(dp, 0, "{}", e.name);
        }
    }
}

#[test]
fn ssa_preserves_corpus_semantics() {
    let mut r = rng(3);
    for e in corpus().iter().chain(&existential()) {
        let (p, spec) = e.load();
        let s = ssa_rename(&p, &spec).unwrap();
        for n in 1..=5 {
            for _ in 0..10 {
                let mut e1 = Env::random(&p, n, &mut r, -4, 4);
                let mut e2 = e1.clone();
                e2.complete(&s.program);
                if run(&p, &mut e1).is_err() {
                    continue;
                }
                run(&s.program, &mut e2).unwrap();
                for (x, v) in &s.finals {
                    match e1.arrays.get(x) {
                        Some(a) => assert_eq!(Some(a), e2.arrays.get(v), "{}: {x}", e.name),
                        None => assert_eq!(e1.scalars.get(x), e2.scalars.get(v), "{}: {x}", e.name),
                    }
                }
                // The renamed post over final versions agrees with the original post.
                if let (Ok(a), Ok(b)) = (
                    eval_formula(&spec.post, &e1),
                    eval_formula(&s.spec.post, &e2),
                ) {
                    assert_eq!(a, b, "{}", e.name);
                }
            }
        }
    }
}

#[test]
fn precondition_split_is_an_equivalence() {
    let s = solver();
    let n_pos = Formula::Cmp(Rel::Ge, Expr::N, Expr::Int(1));
    for e in corpus().iter().chain(&existential()) {
        let (_, spec) = e.load();
        let (kept, delta) = formula_diff(&spec.pre);
        let both = Formula::and(vec![kept, delta]);
        assert!(
            s.is_valid(&[n_pos.clone(), spec.pre.clone()], &both),
            "{}",
            e.name
        );
        assert!(s.is_valid(&[n_pos.clone(), both], &spec.pre), "{}", e.name);
    }
}

#[test]
fn fixed_n_checks_agree_with_execution() {
    let s = solver();
    let mut r = rng(5);
    for e in corpus() {
        let (p, spec) = e.load();
        for n in 1..=3 {
            let verdict = check_fixed_n(&p, &spec.pre, &spec.post, n, &s, DEFAULT_BUDGET);
            let mut violated = false;
            for _ in 0..20 {
                let Some(env) = constrained_env(&p, std::slice::from_ref(&spec.pre), n, &mut r)
                else {
                    continue;
                };
                violated |= replay(&p, &spec.pre, &spec.post, &env, DEFAULT_BUDGET).unwrap();
            }
            match &verdict {
                FixedResult::Valid => assert!(!violated, "{} at N={n}", e.name),
                FixedResult::Invalid(w) => {
                    assert!(
                        replay(&p, &spec.pre, &spec.post, w, DEFAULT_BUDGET).unwrap(),
                        "{} at N={n}",
                        e.name
                    )
                }
                FixedResult::Unknown(why) => panic!("{} at N={n}: {why}", e.name),
            }
            if e.safe {
                assert_eq!(verdict, FixedResult::Valid, "{} at N={n}", e.name);
            }
        }
    }
}
