use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffy_cli::{exit_code, render_report, run_corpus, run_file, write_csv, Options};

#[derive(Parser)]
#[command(
    name = "diffy",
    about = "Verify array programs for every value of the parameter N"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify one program.
    Verify {
        file: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Verify every program under DIR/<c1|c2|c3>/<safe|unsafe>/.
    Corpus {
        dir: PathBuf,
        #[command(flatten)]
        flags: Flags,
        /// Parallel verification tasks.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: u64,
        /// Write per-program results as CSV to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write zero for times so output is byte-stable.
        #[arg(long)]
        stable: bool,
    },
}

#[derive(Args)]
struct Flags {
    #[arg(long, env = "DIFFY_SOLVER", default_value = "z3")]
    solver_path: PathBuf,
    /// Wall-clock budget per program in milliseconds.
    #[arg(long, default_value_t = 60_000, value_parser = clap::value_parser!(u64).range(1..))]
    timeout: u64,
    /// Base case covers N = 1..=M.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(i64).range(1..))]
    base_width: i64,
    /// Largest N tried when searching for a counterexample.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(i64).range(1..))]
    base_bound: i64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    strengthen_cap: u64,
    /// Loop iterations unrolled by fixed-N checks.
    #[arg(long, default_value_t = diffy::interp::DEFAULT_BUDGET as u64, value_parser = clap::value_parser!(u64).range(1..))]
    unroll_budget: u64,
    #[arg(long)]
    emit_ssa: bool,
    #[arg(long)]
    emit_peel: bool,
    #[arg(long)]
    emit_diffinv: bool,
    /// Print the full diagnostic record as JSON.
    #[arg(long)]
    json: bool,
}

impl Flags {
    fn options(&self) -> Options {
        Options {
            solver_path: self.solver_path.clone(),
            timeout_ms: self.timeout,
            base_width: self.base_width as i128,
            base_bound: self.base_bound as i128,
            strengthen_cap: self.strengthen_cap as usize,
            unroll_budget: self.unroll_budget as usize,
            emit_ssa: self.emit_ssa,
            emit_peel: self.emit_peel,
            emit_diffinv: self.emit_diffinv,
            json: self.json,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Verify { file, flags } => {
            let opts = flags.options();
            match run_file(&file, &opts) {
                Ok((v, emitted)) => {
                    for e in emitted {
                        println!("{e}");
                    }
                    if opts.json {
                        match serde_json::to_string_pretty(&v) {
                            Ok(s) => println!("{s}"),
                            Err(e) => {
                                eprintln!("error: {e}");
                                return ExitCode::from(3);
                            }
                        }
                    } else {
                        println!("{}", v.summary());
                    }
                    exit_code(&v)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    3
                }
            }
        }
        Cmd::Corpus {
            dir,
            flags,
            jobs,
            csv,
            stable,
        } => {
            let opts = flags.options();
            match run_corpus(&dir, &opts, jobs as usize) {
                Ok(report) => {
                    let mut failed = None;
                    if let Some(path) = csv {
                        let written = std::fs::File::create(&path)
                            .map_err(|e| e.to_string())
                            .and_then(|f| write_csv(&report, f, stable).map_err(|e| e.to_string()));
                        failed = written.err();
                    }
                    if opts.json {
                        match serde_json::to_string_pretty(&report) {
                            Ok(s) => println!("{s}"),
                            Err(e) => failed = Some(e.to_string()),
                        }
                    } else {
                        for p in &report.programs {
                            println!(
                                "{:?} {:<6} {:<28} {}",
                                p.category,
                                if p.safe { "safe" } else { "unsafe" },
                                p.name,
                                p.detail
                            );
                        }
                        print!("{}", render_report(&report));
                    }
                    match failed {
                        Some(e) => {
                            eprintln!("error: {e}");
                            3
                        }
                        None => 0,
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    3
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
