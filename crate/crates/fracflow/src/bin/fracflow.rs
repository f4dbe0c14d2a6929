//! Command-line front end: runs scenario files, generates the bundled
//! scenario set, and checks the built-in invariants.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracflow::experiments::{
    self, make_bundled_scenarios, run_checks, run_scenario, RunOptions, Scenario,
};
use fracflow::timestepping::SchemeKind;

#[derive(Parser)]
#[command(
    name = "fracflow",
    version,
    about = "Finite-volume simulator for flow in multicontinuum fractured porous media"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and write its reports.
    Run {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Output directory (replaces the scenario's own).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated scheme subset: coupled, d, l, u.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        /// Also run the coarse level declared in the scenario.
        #[arg(long)]
        coarse: bool,
        /// Dump fields every N steps (0 disables dumps).
        #[arg(long, default_value_t = 0, value_name = "N")]
        dump_every: usize,
    },
    /// Write the bundled fracture network and scenario files.
    GenScenarios {
        /// Target directory.
        dir: PathBuf,
    },
    /// Run the built-in invariant suite on small systems.
    Check,
}

fn main() -> ExitCode {
    experiments::init_thread_pool();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out, schemes, coarse, dump_every } => {
            run_command(&scenario, out, schemes, coarse, dump_every)
        }
        Command::GenScenarios { dir } => match make_bundled_scenarios(&dir) {
            Ok(files) => {
                for f in &files {
                    println!("wrote {}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Check => {
            let outcomes = run_checks();
            let mut failed = 0usize;
            for outcome in &outcomes {
                if outcome.passed {
                    println!("ok   {}", outcome.name);
                } else {
                    println!("FAIL {}: {}", outcome.name, outcome.detail);
                    failed += 1;
                }
            }
            println!("{} checks, {} failed", outcomes.len(), failed);
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run_command(
    scenario_path: &std::path::Path,
    out: Option<PathBuf>,
    schemes: Option<Vec<String>>,
    coarse: bool,
    dump_every: usize,
) -> ExitCode {
    let scenario = match Scenario::load(scenario_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let schemes = match schemes {
        Some(labels) => {
            let mut kinds = Vec::new();
            for label in &labels {
                match SchemeKind::parse(label) {
                    Some(k) => kinds.push(k),
                    None => {
                        eprintln!("error: unknown scheme {label:?}; expected coupled, d, l, or u");
                        return ExitCode::from(2);
                    }
                }
            }
            Some(kinds)
        }
        None => None,
    };
    let options = RunOptions {
        schemes,
        include_coarse: coarse,
        dump_every,
        output_dir: out,
    };
    match run_scenario(&scenario, &options) {
        Ok(report) => {
            print_level(&report.fine);
            if let Some(level) = &report.coarse {
                print_level(level);
            }
            println!("reports in {}", report.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_level(level: &experiments::LevelReport) {
    println!("[{}] {} unknowns", level.label, level.n_dofs);
    for outcome in &level.runs {
        let stats = outcome.record.target_stats();
        let iters: Vec<String> = stats
            .iter()
            .map(|s| format!("{} {:.1}", s.target, s.avg_iterations()))
            .collect();
        let error = match outcome.final_error_percent() {
            Some(e) => format!("{e:.4}%"),
            None => "reference".into(),
        };
        println!(
            "  {:<8} {:>8.3}s  error {:<10} avg iterations: {}",
            outcome.scheme.label(),
            outcome.record.seconds_total,
            error,
            iters.join(", ")
        );
    }
}
