mod common;

use common::{loop_free_source, post_source, program_source, rng, solver, theorem1};
use diffy::ast::{BinOp, Expr};
use diffy::interp::{eval_expr, eval_formula, run, Env};
use diffy::logic::wp::wp;
use diffy::ssa::ssa_rename;
use diffy::transform::{gen_q_and_peel, nesting_depth};
use diffy::{parse, parse_formula, Program};
use proptest::prelude::*;

fn symbols() -> Program {
    parse("x = 0; y = 0; z = 0; a[0] = 0; b[0] = 0;").unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn wp_agrees_with_execution(code in loop_free_source(), post in post_source(), n in 2i128..=5, seed in any::<u64>()) {
        let (p, _) = parse(&code).unwrap();
        let post = parse_formula(&post).unwrap();
        let Ok(pre) = wp(&p.body, &post, 2) else { return Ok(()) };
        let mut env = Env::random(&symbols(), n, &mut rng(seed), -4, 4);
        let before = eval_formula(&pre, &env).unwrap();
        run(&p, &mut env).unwrap();
        let after = eval_formula(&post, &env).unwrap();
        prop_assert_eq!(before, after, "wp = {}", pre);
    }

    #[test]
    fn rendering_round_trips(src in program_source(), post in post_source()) {
        let (p, _) = parse(&src).unwrap();
        let (q, _) = parse(&p.body.render()).unwrap();
        prop_assert_eq!(p.body, q.body);
        let f = parse_formula(&post).unwrap();
        prop_assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn euclidean_division(a in -50i128..50, b in -7i128..7) {
        prop_assume!(b != 0);
        let env = Env::new(1);
        let q = eval_expr(&Expr::bin(BinOp::Div, Expr::Int(a), Expr::Int(b)), &env).unwrap();
        let r = eval_expr(&Expr::bin(BinOp::Mod, Expr::Int(a), Expr::Int(b)), &env).unwrap();
        prop_assert_eq!(b * q + r, a);
        prop_assert!(0 <= r && r < b.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssa_preserves_semantics(src in program_source(), n in 1i128..=5, seed in any::<u64>()) {
        let (p, spec) = parse(&src).unwrap();
        let s = ssa_rename(&p, &spec).unwrap();
        for (v, sites) in s.write_sites() {
            prop_assert!(sites <= 1, "{} assigned at {} sites", v, sites);
        }
        let mut e1 = Env::random(&p, n, &mut rng(seed), -4, 4);
        let mut e2 = e1.clone();
        e2.complete(&s.program);
        prop_assume!(run(&p, &mut e1).is_ok());
        run(&s.program, &mut e2).unwrap();
        for (x, v) in &s.finals {
            match e1.arrays.get(x) {
                Some(a) => prop_assert_eq!(Some(a), e2.arrays.get(v), "{}", x),
                None => prop_assert_eq!(e1.scalars.get(x), e2.scalars.get(v), "{}", x),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncation_plus_peel_is_the_program(src in program_source(), seed in any::<u64>()) {
        let (p, spec) = parse(&src).unwrap();
        let r = theorem1(&p, &spec, &solver(), seed);
        prop_assert!(r.is_ok(), "{}\n{}", src, r.unwrap_err());
    }

    #[test]
    fn peels_are_shallower(src in program_source()) {
        let (p, spec) = parse(&src).unwrap();
        let s = ssa_rename(&p, &spec).unwrap();
        let Ok(qp) = gen_q_and_peel(&s.program, &solver(), 1) else { return Ok(()) };
        let depth = nesting_depth(&s.program);
        let peel = nesting_depth(&qp.peel);
        if depth > 0 {
            prop_assert!(peel < depth, "{}\npeel:\n{}", src, qp.peel.body.render());
        }
        if depth == 1 {
            prop_assert_eq!(peel, 0);
        }
    }
}
