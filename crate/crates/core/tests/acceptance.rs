//! One PASS/FAIL line per acceptance criterion. Exits non-zero on any failure.

mod common;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use common::{constrained_env, corpus, existential, loop_free_source, post_source, rng, theorem1, Entry};
use diffy::diffinv::{build_product, check_result_inductive, infer_diff_invariants, p_name};
use diffy::engine::{verify, Config, Status, Verdict};
use diffy::interp::{eval_formula, run, Env};
use diffy::logic::smt::Solver;
use diffy::logic::wp::wp;
use diffy::ssa::ssa_rename;
use diffy::transform::{gen_q_and_peel, nesting_depth};
use diffy::{parse, parse_formula, Formula, Spec};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;

/// Budget per program, as in the original experiments.
const PROGRAM_BUDGET: Duration = Duration::from_secs(60);
const FIG2_BUDGET: Duration = Duration::from_secs(10);
const THEOREM1_BUDGET: Duration = Duration::from_secs(120);
const WP_TRIPLES: usize = 200;
const SAFE_VERIFIED_MIN: f64 = 0.90;
const UNSAFE_FALSIFIED_MIN: f64 = 0.80;
const EXISTENTIAL_VERIFIED_MIN: usize = 4;

type Check = Result<String, String>;

fn solver() -> Solver {
    Solver::from_env(Duration::from_secs(30))
}

fn config() -> Config {
    let mut cfg = Config::new(solver());
    cfg.timeout = PROGRAM_BUDGET;
    cfg
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let next = Mutex::new(0);
    std::thread::scope(|s| {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = {
                    let mut n = next.lock().unwrap();
                    *n += 1;
                    *n - 1
                };
                let Some(item) = items.get(k) else { break };
                let r = f(item);
                out.lock().unwrap()[k] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("result")).collect()
}

fn find(category: &str, name: &str) -> Entry {
    corpus()
        .into_iter()
        .find(|e| e.category == category && e.safe && e.name == name)
        .unwrap_or_else(|| panic!("missing corpus program {category}/{name}"))
}

fn timed_verify(e: &Entry) -> (Verdict, Duration) {
    let (p, spec) = e.load();
    let start = Instant::now();
    let v = verify(&p, &spec, &config());
    (v, start.elapsed())
}

fn equivalent(s: &Solver, a: &Formula, b: &Formula) -> bool {
    s.is_valid(std::slice::from_ref(a), b) && s.is_valid(std::slice::from_ref(b), a)
}

/// `text` parsed with `name__p` standing for the product copy of `name`.
fn with_copies(text: &str, names: &[&str]) -> Formula {
    let f = parse_formula(text).expect("formula");
    let map: BTreeMap<String, String> = names.iter().map(|n| (format!("{n}__p"), p_name(n))).collect();
    f.rename(&map)
}

fn worked_example() -> Check {
    let e = find("c1", "fig2");
    let (v, took) = timed_verify(&e);
    if v.status != Status::Verified {
        return Err(v.summary());
    }
    if took > FIG2_BUDGET {
        return Err(format!("took {took:?}"));
    }
    let d = &v.diagnostics;
    if d.strengthen_iterations != 1 {
        return Err(format!("{} strengthening iterations", d.strengthen_iterations));
    }
    let (p, spec) = e.load();
    let x = ssa_rename(&p, &spec).unwrap().finals["x"].clone();
    let s = solver();
    let diff = with_copies(&format!("{x} - {x}__p == (N - 1) * (2 * N - 1)"), &[&x]);
    if !s.is_valid(&d.diff_invariants, &diff) {
        return Err(format!("invariant {diff} not among the difference invariants"));
    }
    let step = &d.strengthening[0];
    let chi_prime = with_copies(&format!("{x}__p == (N - 1) * (N - 1) * (N - 1)"), &[&x]);
    let chi = parse_formula(&format!("{x} == N * N * N")).unwrap();
    if !equivalent(&s, &step.chi_prime, &chi_prime) || !equivalent(&s, &step.chi, &chi) {
        return Err(format!("strengthening pair {} / {}", step.chi_prime, step.chi));
    }
    Ok(format!("Verified in {took:.1?}, 1 iteration, chi' = {}, chi = {}", step.chi_prime, step.chi))
}

fn motivating() -> Check {
    let mut notes = Vec::new();
    for (cat, name) in [("c2", "fig1a"), ("c3", "fig1b")] {
        let (v, took) = timed_verify(&find(cat, name));
        if v.status != Status::Verified || took > PROGRAM_BUDGET {
            return Err(format!("{name}: {} after {took:?}", v.summary()));
        }
        notes.push(format!("{name} {took:.1?} (peel loops: {})", v.diagnostics.peel_has_loop));
    }
    Ok(notes.join(", "))
}

fn theorem1_oracle() -> Check {
    let start = Instant::now();
    let s = solver();
    let all = corpus();
    for (k, e) in all.iter().enumerate() {
        let (p, spec) = e.load();
        match theorem1(&p, &spec, &s, k as u64) {
            Ok(true) => {}
            Ok(false) => return Err(format!("{}: no split", e.name)),
            Err(m) => return Err(format!("{}: {m}", e.name)),
        }
    }
    let took = start.elapsed();
    if took > THEOREM1_BUDGET {
        return Err(format!("took {took:?}"));
    }
    Ok(format!("{} programs x N=1..5 x 10 inputs agree exactly in {took:.1?}", all.len()))
}

fn nesting_sweep() -> Check {
    let s = solver();
    let all = corpus();
    let mut loop_free = 0;
    for e in &all {
        let (p, spec) = e.load();
        let ssa = ssa_rename(&p, &spec).unwrap();
        let qp = gen_q_and_peel(&ssa.program, &s, 1).map_err(|m| format!("{}: {m}", e.name))?;
        let (d, dp) = (nesting_depth(&p), nesting_depth(&qp.peel));
        if dp >= d || (d == 1 && dp != 0) {
            return Err(format!("{}: depth {d}, peel depth {dp}", e.name));
        }
        loop_free += usize::from(dp == 0);
    }
    Ok(format!("{} programs, {loop_free} loop-free peels", all.len()))
}

fn corpus_table() -> Check {
    let all = corpus();
    let verdicts = par_map(&all, timed_verify);
    let mut rows = BTreeMap::new();
    let (mut safe, mut safe_ok, mut unsafe_, mut unsafe_falsified, mut unsafe_verified) = (0, 0, 0, 0, 0);
    let mut misses = Vec::new();
    for (e, (v, took)) in all.iter().zip(&verdicts) {
        let row: &mut [usize; 2] = rows.entry((e.category.clone(), e.safe)).or_default();
        row[1] += 1;
        let over = *took > PROGRAM_BUDGET + Duration::from_secs(5);
        if e.safe {
            safe += 1;
            if v.is_verified() && !over {
                safe_ok += 1;
                row[0] += 1;
            } else {
                misses.push(format!("{}: {}", e.name, v.summary()));
            }
        } else {
            unsafe_ += 1;
            unsafe_verified += usize::from(v.is_verified());
            if v.is_falsified() && v.diagnostics.witness_replayed {
                unsafe_falsified += 1;
                row[0] += 1;
            } else {
                misses.push(format!("{}: {}", e.name, v.summary()));
            }
        }
    }
    let table: Vec<String> = rows
        .iter()
        .map(|((c, s), [ok, n])| format!("{c}/{} {ok}/{n}", if *s { "safe" } else { "unsafe" }))
        .collect();
    let safe_rate = safe_ok as f64 / safe as f64;
    let falsified_rate = unsafe_falsified as f64 / unsafe_ as f64;
    let summary = format!(
        "{}; safe verified {:.0}%, unsafe falsified+replayed {:.0}%, unsafe verified {unsafe_verified}; misses [{}]",
        table.join(", "),
        100.0 * safe_rate,
        100.0 * falsified_rate,
        misses.join("; ")
    );
    let sizes_ok = ["c1", "c2", "c3"].iter().all(|c| {
        let need = if *c == "c1" { 10 } else { 6 };
        rows.get(&(c.to_string(), true)).is_some_and(|r| r[1] >= need)
            && rows.get(&(c.to_string(), false)).map(|r| r[1]) == rows.get(&(c.to_string(), true)).map(|r| r[1])
    });
    if sizes_ok && safe_rate >= SAFE_VERIFIED_MIN && falsified_rate >= UNSAFE_FALSIFIED_MIN && unsafe_verified == 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn wp_oracle() -> Check {
    let mut runner = TestRunner::deterministic();
    let symbols = parse("x = 0; y = 0; z = 0; a[0] = 0; b[0] = 0;").unwrap().0;
    let mut r = rng(17);
    let (mut checked, mut drawn) = (0, 0);
    while checked < WP_TRIPLES {
        drawn += 1;
        let code = loop_free_source().new_tree(&mut runner).unwrap().current();
        let post = post_source().new_tree(&mut runner).unwrap().current();
        let (p, _) = parse(&code).unwrap();
        let post = parse_formula(&post).unwrap();
        let Ok(pre) = wp(&p.body, &post, 2) else { continue };
        let n = 2 + (drawn % 4) as i128;
        let mut env = Env::random(&symbols, n, &mut r, -4, 4);
        let before = eval_formula(&pre, &env).map_err(|e| e.to_string())?;
        run(&p, &mut env).map_err(|e| e.to_string())?;
        let after = eval_formula(&post, &env).map_err(|e| e.to_string())?;
        if before != after {
            return Err(format!("disagreement on\n{code}\npost {post}\nwp {pre}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} triples agree ({} skipped by the split limit)", drawn - checked))
}

/// Infers difference invariants for one program and checks them.
fn invariants_of(e: &Entry) -> Result<(usize, usize), String> {
    let (p, spec) = e.load();
    let s = solver();
    let infer = |spec: &Spec| {
        let ssa = ssa_rename(&p, spec).map_err(|m| m.to_string())?;
        let qp = gen_q_and_peel(&ssa.program, &s, 2).map_err(|m| m.to_string())?;
        let prod = build_product(&qp.q, &ssa.program, &ssa.spec.pre);
        let d = infer_diff_invariants(&prod, &ssa.spec.pre, &s).map_err(|m| m.to_string())?;
        Ok::<_, String>((prod, ssa.spec.pre, d))
    };
    let (prod, pre, d) = infer(&spec)?;
    if !check_result_inductive(&prod, &pre, &d, &s).map_err(|m| m.to_string())? {
        return Err(format!("{}: invariants not inductive", e.name));
    }
    let other = Spec { pre: spec.pre.clone(), post: Formula::Bool(true) };
    if infer(&other)?.2 != d {
        return Err(format!("{}: invariants depend on the post-condition", e.name));
    }
    let mut constraints = vec![pre];
    constraints.extend(prod.entry.iter().cloned());
    let facts = d.d_final();
    let mut r = rng(23);
    let mut spots = 0;
    for n in 2..=5 {
        for _ in 0..10 {
            let Some(mut env) = constrained_env(&prod.program, &constraints, n, &mut r) else { continue };
            run(&prod.program, &mut env).map_err(|m| format!("{}: {m}", e.name))?;
            if eval_formula(&facts, &env) != Ok(true) {
                return Err(format!("{}: invariant fails concretely at N={n}", e.name));
            }
            spots += 1;
        }
    }
    if spots == 0 {
        return Err(format!("{}: no input satisfies the pre-condition", e.name));
    }
    Ok((d.exit.diffs.len() + d.heads.iter().map(|h| h.diffs.len()).sum::<usize>(), spots))
}

fn invariant_soundness() -> Check {
    let nested: Vec<Entry> = corpus().into_iter().filter(|e| nesting_depth(&e.load().0) > 0).collect();
    let results = par_map(&nested, invariants_of);
    let (mut facts, mut spots) = (0, 0);
    for r in results {
        let (f, s) = r?;
        facts += f;
        spots += s;
    }
    Ok(format!("{} programs, {facts} relational facts, {spots} concrete runs, post-independent", nested.len()))
}

fn existential_suite() -> Check {
    let all = existential();
    let verdicts = par_map(&all, timed_verify);
    let mut verified = Vec::new();
    for (e, (v, _)) in all.iter().zip(&verdicts) {
        match &v.status {
            Status::Verified => verified.push(e.name.clone()),
            Status::Falsified { .. } => return Err(format!("{} wrongly falsified", e.name)),
            Status::Unknown(_) => {}
        }
    }
    let line = format!("{}/{} verified ({})", verified.len(), all.len(), verified.join(", "));
    if verified.len() >= EXISTENTIAL_VERIFIED_MIN {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("worked example", worked_example),
        ("motivating programs", motivating),
        ("truncation plus peel equals the program", theorem1_oracle),
        ("peel nesting depth", nesting_sweep),
        ("corpus verdicts", corpus_table),
        ("wp oracle", wp_oracle),
        ("difference invariant soundness", invariant_soundness),
        ("existential post-conditions", existential_suite),
    ];
    let mut failed = 0;
    for (k, (title, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {} {title}: {detail} [{:.1?}]", k + 1, start.elapsed());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
