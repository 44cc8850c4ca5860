//! Driver for the `diffy` command: single files and categorized corpora.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use diffy::engine::{verify, Config, Status, Verdict};
use diffy::logic::smt::Solver;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// User-facing options; every numeric field is positive.
#[derive(Clone, Debug, Serialize)]
pub struct Options {
    pub solver_path: PathBuf,
    pub timeout_ms: u64,
    pub base_width: i128,
    pub base_bound: i128,
    pub strengthen_cap: usize,
    pub unroll_budget: usize,
    pub emit_ssa: bool,
    pub emit_peel: bool,
    pub emit_diffinv: bool,
    pub json: bool,
}

/// Cap on a single solver query.
pub const QUERY_TIMEOUT_MS: u64 = 30_000;

impl Default for Options {
    fn default() -> Options {
        Options {
            solver_path: PathBuf::from(
                std::env::var("DIFFY_SOLVER").unwrap_or_else(|_| "z3".to_string()),
            ),
            timeout_ms: 60_000,
            base_width: 1,
            base_bound: 8,
            strengthen_cap: 10,
            unroll_budget: diffy::interp::DEFAULT_BUDGET,
            emit_ssa: false,
            emit_peel: false,
            emit_diffinv: false,
            json: false,
        }
    }
}

impl Options {
    /// Engine configuration. Builds a fresh solver handle, so call it on the
    /// thread that will use it.
    pub fn config(&self) -> Config {
        let query = Duration::from_millis(self.timeout_ms.min(QUERY_TIMEOUT_MS));
        let mut cfg = Config::new(Solver::new(&self.solver_path, query));
        cfg.timeout = Duration::from_millis(self.timeout_ms);
        cfg.base_width = self.base_width;
        cfg.base_bound = self.base_bound;
        cfg.strengthen_cap = self.strengthen_cap;
        cfg.unroll_budget = self.unroll_budget;
        cfg
    }
}

/// Exit code for a verdict: 0 verified, 1 falsified, 2 unknown.
pub fn exit_code(v: &Verdict) -> i32 {
    match v.status {
        Status::Verified => 0,
        Status::Falsified { .. } => 1,
        Status::Unknown(_) => 2,
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses and verifies one file. Intermediate artifacts requested by the
/// emit flags are returned as text sections.
pub fn run_file(path: &Path, opts: &Options) -> Result<(Verdict, Vec<String>), CliError> {
    let src = read(path)?;
    let (p, spec) = diffy::parse(&src).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let cfg = opts.config();
    let emitted = emit(&p, &spec, opts, &cfg);
    Ok((verify(&p, &spec, &cfg), emitted))
}

fn emit(p: &diffy::Program, spec: &diffy::Spec, opts: &Options, cfg: &Config) -> Vec<String> {
    let mut out = Vec::new();
    if !(opts.emit_ssa || opts.emit_peel || opts.emit_diffinv) {
        return out;
    }
    let s = match diffy::ssa::ssa_rename(p, spec) {
        Ok(s) => s,
        Err(e) => return vec![format!("ssa failed: {e}")],
    };
    if opts.emit_ssa {
        out.push(format!(
            "== ssa ==\n{}\npost: {}",
            s.program.body, s.spec.post
        ));
    }
    if !(opts.emit_peel || opts.emit_diffinv) {
        return out;
    }
    let qp = match diffy::transform::gen_q_and_peel(&s.program, &cfg.solver, cfg.base_width + 1) {
        Ok(qp) => qp,
        Err(e) => {
            out.push(format!("peel failed: {e}"));
            return out;
        }
    };
    if opts.emit_peel {
        out.push(format!(
            "== Q(N-1) ==\n{}\n== peel ==\n{}",
            qp.q.body, qp.peel.body
        ));
    }
    if opts.emit_diffinv {
        let prod = diffy::diffinv::build_product(&qp.q, &s.program, &s.spec.pre);
        match diffy::diffinv::infer_diff_invariants(&prod, &s.spec.pre, &cfg.solver) {
            Ok(d) => {
                let facts: Vec<String> = d
                    .d_final()
                    .conjuncts()
                    .iter()
                    .map(|f| f.to_string())
                    .collect();
                out.push(format!("== difference invariants ==\n{}", facts.join("\n")));
            }
            Err(e) => out.push(format!("difference invariants failed: {e}")),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Category {
    C1,
    C2,
    C3,
}

impl Category {
    fn from_dir(s: &str) -> Option<Category> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Some(Category::C1),
            "c2" => Some(Category::C2),
            "c3" => Some(Category::C3),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgramResult {
    pub name: String,
    pub category: Category,
    pub safe: bool,
    /// `Verified`, `Falsified`, `Unknown`, `Timeout` or `Error`.
    pub verdict: String,
    pub millis: u64,
    pub detail: String,
}

/// Counts in the style of a results table: `s` successful (verified when
/// safe, falsified when unsafe), `u` unknown or wrong, `to` timed out.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub s: usize,
    pub u: usize,
    pub to: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CorpusReport {
    pub programs: Vec<ProgramResult>,
    /// Keyed by `(category, safe)`.
    pub aggregates: Vec<(Category, bool, Aggregate)>,
}

/// `.c` files under `dir/<c1|c2|c3>/<safe|unsafe>/`, sorted.
pub fn corpus_files(dir: &Path) -> Result<Vec<(Category, bool, PathBuf)>, CliError> {
    let mut out = Vec::new();
    fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError {
        let path = path.display().to_string();
        move |source| CliError::Io {
            path: path.clone(),
            source,
        }
    }
    for cat_entry in fs::read_dir(dir).map_err(io(dir))? {
        let cat_dir = cat_entry.map_err(io(dir))?.path();
        let Some(cat) = cat_dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(Category::from_dir)
        else {
            continue;
        };
        for safety in ["safe", "unsafe"] {
            let sub = cat_dir.join(safety);
            if !sub.is_dir() {
                continue;
            }
            for f in fs::read_dir(&sub).map_err(io(&sub))? {
                let f = f.map_err(io(&sub))?.path();
                if f.extension().is_some_and(|e| e == "c") {
                    out.push((cat, safety == "safe", f));
                }
            }
        }
    }
    out.sort_by(|a, b| a.2.cmp(&b.2));
    Ok(out)
}

fn classify(v: &Verdict) -> &'static str {
    match &v.status {
        Status::Verified => "Verified",
        Status::Falsified { .. } => "Falsified",
        Status::Unknown(r) if r.contains("timeout") => "Timeout",
        Status::Unknown(_) => "Unknown",
    }
}

/// Verifies every program of a corpus with `jobs` worker threads. Failures
/// are recorded per program and never abort the run.
pub fn run_corpus(dir: &Path, opts: &Options, jobs: usize) -> Result<CorpusReport, CliError> {
    let files = corpus_files(dir)?;
    let results: Mutex<Vec<Option<ProgramResult>>> = Mutex::new(vec![None; files.len()]);
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                let k = {
                    let mut n = next.lock().expect("work index");
                    let k = *n;
                    *n += 1;
                    k
                };
                let Some((cat, safe, path)) = files.get(k) else {
                    break;
                };
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let r = match run_file(
                    path,
                    &Options {
                        emit_ssa: false,
                        emit_peel: false,
                        emit_diffinv: false,
                        ..opts.clone()
                    },
                ) {
                    Ok((v, _)) => ProgramResult {
                        name,
                        category: *cat,
                        safe: *safe,
                        verdict: classify(&v).to_string(),
                        millis: v.diagnostics.millis,
                        detail: v.summary(),
                    },
                    Err(e) => ProgramResult {
                        name,
                        category: *cat,
                        safe: *safe,
                        verdict: "Error".to_string(),
                        millis: 0,
                        detail: e.to_string(),
                    },
                };
                results.lock().expect("results")[k] = Some(r);
            });
        }
    });
    let programs: Vec<ProgramResult> = results
        .into_inner()
        .expect("results")
        .into_iter()
        .flatten()
        .collect();
    Ok(report(programs))
}

pub fn report(programs: Vec<ProgramResult>) -> CorpusReport {
    let mut aggregates: Vec<(Category, bool, Aggregate)> = Vec::new();
    for p in &programs {
        let pos = match aggregates
            .iter()
            .position(|(c, s, _)| *c == p.category && *s == p.safe)
        {
            Some(k) => k,
            None => {
                aggregates.push((p.category, p.safe, Aggregate::default()));
                aggregates.len() - 1
            }
        };
        let agg = &mut aggregates[pos].2;
        let success = if p.safe { "Verified" } else { "Falsified" };
        match p.verdict.as_str() {
            v if v == success => agg.s += 1,
            "Timeout" => agg.to += 1,
            _ => agg.u += 1,
        }
    }
    aggregates.sort_by_key(|(c, s, _)| (*c, !*s));
    CorpusReport {
        programs,
        aggregates,
    }
}

/// CSV with columns `name,category,safe,verdict,millis`. With `stable`,
/// times are written as 0 so the output does not depend on the machine.
pub fn write_csv(
    report: &CorpusReport,
    out: impl std::io::Write,
    stable: bool,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "category", "safe", "verdict", "millis"])?;
    for p in &report.programs {
        let millis = if stable { 0 } else { p.millis };
        w.write_record([
            p.name.clone(),
            format!("{:?}", p.category),
            p.safe.to_string(),
            p.verdict.clone(),
            millis.to_string(),
        ])?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: "csv".into(),
        source,
    })?;
    Ok(())
}

/// Human-readable table of the aggregates.
pub fn render_report(report: &CorpusReport) -> String {
    let mut s = String::from("category safety      S   U  TO\n");
    for (c, safe, a) in &report.aggregates {
        s.push_str(&format!(
            "{:<8} {:<8} {:>3} {:>3} {:>3}\n",
            format!("{c:?}"),
            if *safe { "safe" } else { "unsafe" },
            a.s,
            a.u,
            a.to
        ));
    }
    s
}
