use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffy_cli::{report, write_csv, Aggregate, ProgramResult};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn diffy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffy"))
        .args(args)
        .output()
        .expect("run diffy")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("diffy-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn worked_example_is_verified_in_one_iteration() {
    let o = diffy(&["verify", path(&corpus().join("c1/safe/fig2.c"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Verified (1 strengthening iteration)"), "{}", stdout(&o));
}

#[test]
fn nested_example_is_verified() {
    let o = diffy(&["verify", path(&corpus().join("c3/safe/fig1b.c"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn mutant_exits_one_with_witness() {
    let o = diffy(&["verify", path(&corpus().join("c1/unsafe/fig2_bug.c"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Falsified at N="), "{}", stdout(&o));
}

#[test]
fn unknown_exits_two() {
    let o = diffy(&["verify", path(&corpus().join("existential/average.c"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
}

#[test]
fn bad_input_exits_three() {
    let dir = scratch("bad");
    let f = dir.join("broken.c");
    std::fs::write(&f, "int x; x = ;").unwrap();
    assert_eq!(diffy(&["verify", path(&f)]).status.code(), Some(3));
    assert_eq!(diffy(&["verify", path(&dir.join("missing.c"))]).status.code(), Some(3));
}

#[test]
fn json_record_has_diagnostics() {
    let o = diffy(&["verify", "--json", path(&corpus().join("c1/safe/fig2.c"))]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).expect("json");
    assert_eq!(v["diagnostics"]["strengthen_iterations"], 1);
    assert!(v["diagnostics"]["diff_invariants"].as_array().is_some_and(|a| !a.is_empty()));
}

#[test]
fn empty_corpus_gives_empty_report() {
    let dir = scratch("empty");
    let csv = dir.join("out.csv");
    let o = diffy(&["corpus", path(&dir), "--csv", path(&csv)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "category safety      S   U  TO\n");
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "name,category,safe,verdict,millis\n");
}

#[test]
fn stable_csv_is_byte_identical() {
    let dir = scratch("small");
    for (sub, file) in [("safe", "fig2.c"), ("unsafe", "fig2_bug.c")] {
        std::fs::create_dir_all(dir.join("c1").join(sub)).unwrap();
        std::fs::copy(corpus().join("c1").join(sub).join(file), dir.join("c1").join(sub).join(file)).unwrap();
    }
    let mut runs = Vec::new();
    for k in 0..2 {
        let csv = dir.join(format!("run{k}.csv"));
        let o = diffy(&["corpus", path(&dir), "--jobs", "2", "--stable", "--csv", path(&csv)]);
        assert_eq!(o.status.code(), Some(0));
        runs.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(
        String::from_utf8(runs[0].clone()).unwrap(),
        "name,category,safe,verdict,millis\nfig2,C1,true,Verified,0\nfig2_bug,C1,false,Falsified,0\n"
    );
}

#[test]
fn aggregates_count_success_by_safety() {
    let row = |name: &str, safe, verdict: &str| ProgramResult {
        name: name.into(),
        category: diffy_cli::Category::C2,
        safe,
        verdict: verdict.into(),
        millis: 5,
        detail: String::new(),
    };
    let r = report(vec![
        row("a", true, "Verified"),
        row("b", true, "Timeout"),
        row("c", false, "Falsified"),
        row("d", false, "Verified"),
    ]);
    assert_eq!(r.aggregates[0].2, Aggregate { s: 1, u: 0, to: 1 });
    assert_eq!(r.aggregates[1].2, Aggregate { s: 1, u: 1, to: 0 });
    let mut out = Vec::new();
    write_csv(&r, &mut out, false).unwrap();
    assert!(String::from_utf8(out).unwrap().contains("a,C2,true,Verified,5"));
}
