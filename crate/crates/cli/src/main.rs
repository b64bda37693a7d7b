use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uvms_coop::checks::{self, SUITES};
use uvms_coop::par::Execution;
use uvms_coop::report;
use uvms_coop::scenario::ScenarioConfig;
use uvms_coop::sim::{run_closed_loop, Acceptance, RunOptions};
use uvms_coop::Error;

const OK: u8 = 0;
const VALIDATION: u8 = 1;
const RUNTIME: u8 = 2;
const VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "uvms-coop", version, about = "Cooperative transport by underwater vehicle-manipulator teams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file (`default` runs the bundled scenario).
    Run {
        scenario: String,
        /// Exit with status 3 when an acceptance property is violated.
        #[arg(long)]
        strict: bool,
        /// Threads for the per-agent solves (1 runs them in order).
        #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: Option<u16>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Validate the scenario and stop.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the numerical self-checks.
    Check {
        /// Suites to run; all when omitted.
        #[arg(long = "suite", value_name = "NAME", num_args = 1.., value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suites: Vec<String>,
    },
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Validation(_) => VALIDATION,
        _ => RUNTIME,
    }
}

fn load(scenario: &str) -> uvms_coop::Result<ScenarioConfig> {
    if scenario == "default" {
        ScenarioConfig::bundled()
    } else {
        ScenarioConfig::load(std::path::Path::new(scenario))
    }
}

fn run(scenario: &str, strict: bool, jobs: Option<u16>, out: PathBuf, dry_run: bool) -> u8 {
    let built = match load(scenario).and_then(|c| c.build()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return VALIDATION;
        }
    };
    if dry_run {
        println!(
            "{}: valid ({} agents, {} waypoints, budget {} s)",
            built.config.name,
            built.agents.len(),
            built.waypoints.len(),
            built.config.run.budget
        );
        return OK;
    }
    let exec = match jobs {
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    let opts = RunOptions { exec, jobs: jobs.map(usize::from), ..Default::default() };
    let log = match run_closed_loop(&built, &opts) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return code_for(&e);
        }
    };
    let plots = built.config.output.plots.then_some(built.config.output.plot_stride);
    match report::write_all(&log, &out, plots) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return RUNTIME;
        }
    }
    let verdicts = log.summary.assess(&Acceptance::default());
    for v in &verdicts {
        println!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    if strict && verdicts.iter().any(|v| !v.passed) {
        return VIOLATION;
    }
    OK
}

fn check(suites: Vec<String>) -> u8 {
    let selected: Vec<String> = if suites.is_empty() { SUITES.iter().map(|s| s.to_string()).collect() } else { suites };
    let mut failed = false;
    for name in &selected {
        match checks::run_suite(name, Execution::Parallel) {
            Ok(results) => {
                for r in results {
                    failed |= !r.passed;
                    println!("{r}");
                }
            }
            Err(e) => {
                eprintln!("error in suite {name}: {e}");
                return code_for(&e);
            }
        }
    }
    if failed {
        VIOLATION
    } else {
        OK
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { VALIDATION } else { OK });
        }
    };
    let code = match cli.command {
        Command::Run { scenario, strict, jobs, out, dry_run } => run(&scenario, strict, jobs, out, dry_run),
        Command::Check { suites } => check(suites),
    };
    ExitCode::from(code)
}
