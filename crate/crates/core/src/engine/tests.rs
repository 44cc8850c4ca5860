use std::time::Duration;

use super::*;
use crate::frontend::{parse, parse_formula};

fn cfg() -> Config {
    Config::new(Solver::from_env(Duration::from_secs(20)))
}

fn check(src: &str) -> Verdict {
    let (p, spec) = parse(src).unwrap();
    verify(&p, &spec, &cfg())
}

const RUNNING: &str = "x = 0;
for (i = 0; i < N; i++) { x = x + N*N; a[i] = a[i] + N; }
for (j = 0; j < N; j++) { b[j] = x + j; }
";

#[test]
fn running_example_needs_one_strengthening() {
    let v = check(&format!(
        "{RUNNING}// assert(forall j in [0, N) :: b[j] == j + N*N*N)"
    ));
    assert_eq!(v.status, Status::Verified, "{:?}", v.diagnostics.log);
    assert_eq!(v.diagnostics.strengthen_iterations, 1);
    let step = &v.diagnostics.strengthening[0];
    let solver = cfg().solver;
    let want = parse_formula("x_2 == N*N*N").unwrap();
    assert!(
        solver.is_valid(&[step.chi.clone()], &want) && solver.is_valid(&[want], &step.chi),
        "{}",
        step.chi
    );
    let want = crate::diffinv::tests::pf("x_2__p == (N - 1) * (N - 1) * (N - 1)");
    let got = &step.chi_prime;
    assert!(
        solver.is_valid(&[got.clone()], &want) && solver.is_valid(&[want], got),
        "{got}"
    );
    let diff = crate::diffinv::tests::pf("x_2 - x_2__p == (N - 1) * (2 * N - 1)");
    assert!(solver.is_valid(&v.diagnostics.diff_invariants, &diff));
    assert!(v.diagnostics.gate.base_case && v.diagnostics.gate.inductive_step);
}

#[test]
fn running_example_wrong_post_is_falsified() {
    // b[0] == N^3, already nonzero at N = 1.
    let v = check(&format!("{RUNNING}// assert(b[0] == 0)"));
    match &v.status {
        Status::Falsified { n, .. } => assert_eq!(*n, 1),
        other => panic!("{other:?}"),
    }
    assert!(v.diagnostics.witness_replayed);
}

#[test]
fn motivating_programs_verify() {
    let a = "S = 0; F = 1;
        for (i = 0; i < N; i++) { S = S + 1; if (A[i] >= 0) { B[i] = 1; } else { B[i] = 0; } }
        for (j = 0; j < N; j++) { if (S == N) {
            if (A[j] >= 0 && B[j] == 0) { F = 0; }
            if (A[j] < 0 && B[j] != 0) { F = 0; } } }
        // assert(F == 1)";
    let v = check(a);
    assert_eq!(v.status, Status::Verified, "{:?}", v.diagnostics.log);
    let b = "S = 0;
        for (i = 0; i < N; i++) { A[i] = 0; }
        for (j = 0; j < N; j++) { S = S + 1; }
        for (k = 0; k < N; k++) { for (l = 0; l < N; l++) { A[l] = A[l] + 1; } A[k] = A[k] + S; }
        // assert(forall x in [0, N) :: A[x] == 2*N)";
    let v = check(b);
    assert_eq!(v.status, Status::Verified, "{:?}", v.diagnostics.log);
}

#[test]
fn inductive_post_needs_no_strengthening() {
    let v = check(
        "for (i = 0; i < N; i++) { for (j = 0; j < N; j++) { A[i][j] = N; } }
         // assert(forall i in [0, N), j in [0, N) :: A[i][j] == N)",
    );
    assert_eq!(v.status, Status::Verified, "{:?}", v.diagnostics.log);
    assert_eq!(v.diagnostics.strengthen_iterations, 0);
}

#[test]
fn loop_free_program() {
    let v = check("x = N + 1; // assert(x > N)");
    assert_eq!(v.status, Status::Verified);
    let v = check("x = N + 1; // assert(x > 2)");
    assert!(
        matches!(v.status, Status::Falsified { n: 1, .. }),
        "{:?}",
        v.status
    );
}

#[test]
fn existential_witnesses() {
    let c = "// assume(N > 1)
        for (i = 0; i < N; i++) { A[i] = i; }
        // assert(exists j in [0, N) :: A[j] >= N - 1)";
    let v = check(c);
    assert_eq!(v.status, Status::Verified, "{:?}", v.diagnostics.log);
    assert_eq!(v.diagnostics.strategy.as_deref(), Some("witness N - 1"));
    let e = "// assume(forall i in [0, N) :: A[i] == 1)
        sum = 0;
        for (i = 0; i < N; i++) { sum = sum + A[i]; }
        for (j = 0; j < N; j++) { B[j] = sum; }
        // assert(exists i in [0, N) :: B[i] == N)";
    let v = check(e);
    assert_eq!(v.status, Status::Verified, "{:?}", v.diagnostics.log);
    let never = "for (i = 0; i < N; i++) { A[i] = 0; } // assert(exists i in [0, N) :: A[i] == 1)";
    assert!(matches!(
        check(never).status,
        Status::Falsified { n: 1, .. }
    ));
}

#[test]
fn verdicts_are_deterministic() {
    let src = format!("{RUNNING}// assert(forall j in [0, N) :: b[j] == j + N*N*N)");
    let a = check(&src);
    let b = check(&src);
    assert_eq!(a.status, b.status);
    assert_eq!(a.diagnostics.strengthening, b.diagnostics.strengthening);
}
