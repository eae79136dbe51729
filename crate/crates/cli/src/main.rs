//! Command-line front end: run experiment plans, the attack scenarios and
//! the handshake golden vectors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wbanzkp::experiment::{
    attack_report, run_attacks, run_plan_detailed, write_plan_outputs, ExperimentError, ExperimentPlan, TraceSource,
    DELAY_BY_SOURCE_FILE, RUNS_FILE, SUMMARY_FILE,
};
use wbanzkp::handshake::{test_vector_text, Scheme};

/// Overrides the directory holding the posture traces.
const TRACE_DIR_VAR: &str = "WBANZKP_TRACE_DIR";
const DEFAULT_TRACE_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../traces");

const EXIT_INVALID: u8 = 1;
const EXIT_ATTACK_REGRESSION: u8 = 2;
const EXIT_MISSING_TRACE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "wbanzkp", version, about = "BANZKP and BAN-GZKP experiments")]
struct Cli {
    /// Base seed; replaces the plan's base_seed and the attack seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulation runs; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment plan and write CSV results.
    Run {
        plan: PathBuf,
        /// Output directory for runs.csv, summary.csv and delay_by_source.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every attack scenario against the selected schemes.
    Attacks {
        /// BANZKP or BAN_GZKP; repeat for both. Defaults to both.
        #[arg(long = "scheme")]
        schemes: Vec<Scheme>,
    },
    /// Print the fixed-seed handshake transcripts as hex.
    HandshakeVectors {
        /// BANZKP or BAN_GZKP; repeat for both. Defaults to both.
        #[arg(long = "scheme")]
        schemes: Vec<Scheme>,
    },
}

fn trace_dir() -> PathBuf {
    std::env::var_os(TRACE_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_TRACE_DIR))
}

fn exit_code(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::InvalidPlan(_) => EXIT_INVALID,
        ExperimentError::MissingTrace { .. } => EXIT_MISSING_TRACE,
        _ => EXIT_IO,
    }
}

fn or_both(schemes: Vec<Scheme>) -> Vec<Scheme> {
    if schemes.is_empty() {
        vec![Scheme::Banzkp, Scheme::BanGzkp]
    } else {
        schemes
    }
}

fn run(plan: &Path, out: &Path, seed: Option<u64>, jobs: usize) -> Result<String, ExperimentError> {
    let mut plan = ExperimentPlan::load(plan)?;
    if let Some(s) = seed {
        plan.base_seed = s;
    }
    let result = run_plan_detailed(&plan, &TraceSource::Dir(trace_dir()), jobs)?;
    write_plan_outputs(out, &result)?;
    let mut msg = format!("{} cells, {} runs\n", result.rows.len(), result.runs.len());
    for f in [RUNS_FILE, SUMMARY_FILE, DELAY_BY_SOURCE_FILE] {
        let _ = writeln!(msg, "wrote {}", out.join(f).display());
    }
    Ok(msg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { plan, out } => match run(&plan, &out, cli.seed, cli.jobs) {
            Ok(msg) => {
                print!("{msg}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        },
        Command::Attacks { schemes } => match run_attacks(&or_both(schemes), cli.seed.unwrap_or(1)) {
            Ok(rows) => {
                print!("{}", attack_report(&rows));
                let regressions: Vec<_> = rows.iter().filter(|r| r.is_regression()).collect();
                if regressions.is_empty() {
                    ExitCode::SUCCESS
                } else {
                    for r in regressions {
                        eprintln!("regression: {} not blocked under {}", r.scenario, r.scheme);
                    }
                    ExitCode::from(EXIT_ATTACK_REGRESSION)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        },
        Command::HandshakeVectors { schemes } => {
            for s in or_both(schemes) {
                match test_vector_text(s) {
                    Ok(text) => print!("# {s}\n{text}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_IO);
                    }
                }
            }
            ExitCode::SUCCESS
        }
    }
}
