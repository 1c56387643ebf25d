use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panvas_sim::{run_scenario, verify_log, write_ndjson, ScenarioConfig, SimError};

#[derive(Parser)]
#[command(name = "panvas-sim", version, about = "Seeded economy simulator and log verifier")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Replay a log and re-check every invariant.
    Verify {
        #[arg(long)]
        log: PathBuf,
    },
}

const OK: u8 = 0;
const VIOLATION: u8 = 1;
const BAD_INPUT: u8 = 2;

fn run(config: PathBuf, out: PathBuf, log: Option<PathBuf>) -> u8 {
    let scenario = match ScenarioConfig::load(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("INVALID_CONFIG: {e}");
            return BAD_INPUT;
        }
    };
    let result = match run_scenario(&scenario) {
        Ok(r) => r,
        Err(e @ SimError::InvariantViolation { .. }) => {
            eprintln!("{}: {e}", e.code());
            return VIOLATION;
        }
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            return BAD_INPUT;
        }
    };
    let write = || -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&result.report)?;
        std::fs::write(&out, json + "\n")?;
        if let Some(path) = &log {
            write_ndjson(BufWriter::new(File::create(path)?), &result.log)?;
        }
        Ok(())
    };
    if let Err(e) = write() {
        eprintln!("cannot write output: {e}");
        return BAD_INPUT;
    }
    println!(
        "{} events, {} rejected, {} minted, invariants {}",
        result.report.events,
        result.rejected,
        result.report.total_minted,
        if result.report.passed() { "pass" } else { "FAIL" }
    );
    if result.report.passed() {
        OK
    } else {
        VIOLATION
    }
}

fn verify(log: PathBuf) -> u8 {
    match verify_log(&log) {
        Ok(v) => {
            for c in &v.checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                match &c.detail {
                    Some(d) => println!("{status} {} ({d})", c.name),
                    None => println!("{status} {}", c.name),
                }
            }
            v.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            BAD_INPUT
        }
    }
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Cmd::Run { config, out, log } => run(config, out, log),
        Cmd::Verify { log } => verify(log),
    };
    ExitCode::from(code)
}
