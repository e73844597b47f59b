//! `krein solve <problem.toml>`: runs a problem file and writes its report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use krein_core::problem::{parse_spec, Format, Solver};
use krein_core::runner::{emit, run, RunError};

#[derive(Parser)]
#[command(name = "krein", version, about = "Krein's method for matrix Fredholm equations of the second kind")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem described in a TOML file.
    Solve {
        /// Problem file.
        spec_file: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format, csv or json (overrides `output.format`).
        #[arg(long)]
        format: Option<Format>,
        /// Comma-separated node counts (overrides `grids`).
        #[arg(long, value_delimiter = ',')]
        grids: Option<Vec<usize>>,
        /// nystrom, resolvent_35, krein_34, theorem_4_1 or theorem_4_2 (overrides `solver`).
        #[arg(long)]
        solver: Option<Solver>,
    },
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let Command::Solve {
        spec_file,
        out,
        format,
        grids,
        solver,
    } = Cli::parse().command;

    let text = match std::fs::read_to_string(&spec_file) {
        Ok(t) => t,
        Err(source) => {
            return fail(&RunError::Io {
                path: spec_file,
                source,
            })
        }
    };
    let mut spec = match parse_spec(&text) {
        Ok(s) => s,
        Err(e) => return fail(&e.into()),
    };
    if let Some(g) = grids {
        spec.grids = g;
    }
    if let Some(s) = solver {
        spec.solver = s;
    }
    if let Some(f) = format {
        spec.output.format = f;
    }
    let dir = out
        .or_else(|| spec.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("krein_out"));

    let (report, solve_error) = match run(&spec) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let written = match emit(&report, spec.output.format, &dir) {
        Ok(w) => w,
        Err(e) => return fail(&e),
    };
    for rec in &report.records {
        let gap = rec.oracle_gap.map_or("-".to_string(), |g| format!("{:.3e}", g.0));
        println!("n = {:>4}  {:<6}  oracle gap {gap}", rec.n_nodes, rec.status);
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    match solve_error {
        Some(e) => fail(&e),
        None => ExitCode::SUCCESS,
    }
}
