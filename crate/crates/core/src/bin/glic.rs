use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use glic::accel::AcceleratorKind;
use glic::harness::{self, CaseFile, HarnessError, RunOptions};

/// Global-local iterative coupling driver.
#[derive(Parser)]
#[command(name = "glic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one case. Exit code 0 when converged, 2 when the run aborted.
    Run {
        /// Case file, or the name of a bundled case.
        #[arg(long)]
        case: String,
        #[arg(long)]
        accelerator: Option<AcceleratorKind>,
        /// Constant relaxation factor.
        #[arg(long)]
        omega: Option<f64>,
        /// Inexact inner solves with this alpha.
        #[arg(long)]
        inexact: Option<f64>,
        /// Also solve the monolithic reference and report the accuracy.
        #[arg(long)]
        reference: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one case with several accelerators and tabulate the counters.
    Compare {
        #[arg(long)]
        case: String,
        #[arg(long, value_delimiter = ',', default_values_t = AcceleratorKind::ALL.to_vec())]
        accelerators: Vec<AcceleratorKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a case file without solving.
    Validate {
        #[arg(long)]
        case: String,
    },
    /// List the bundled cases.
    Cases,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(command: Command) -> Result<u8, HarnessError> {
    match command {
        Command::Run {
            case,
            accelerator,
            omega,
            inexact,
            reference,
            out,
        } => {
            let case = CaseFile::load(&case)?;
            let opts = RunOptions {
                accelerator,
                omega,
                inexact,
                reference,
                out,
            };
            let run = harness::run_case(&case, &opts)?;
            let s = &run.summary;
            let json = serde_json::to_string_pretty(s).expect("summary serializes");
            // a closed pipe (`| head`) is not an error
            let _ = writeln!(io::stdout(), "{json}");
            eprintln!("wall time {:.3} s", s.wall_seconds);
            Ok(s.exit_code() as u8)
        }
        Command::Compare {
            case,
            accelerators,
            out,
        } => {
            let case = CaseFile::load(&case)?;
            let rows = harness::compare_accelerators(&case, &accelerators, out.as_deref())?;
            println!(
                "{:<10} {:>10} {:>7} {:>8} {:>8} {:>6} {:>9} {:>12}",
                "method", "status", "N_inc", "N_G_it", "N_L_it", "N_GL", "cutbacks", "max eqps"
            );
            for (r, _) in &rows {
                println!(
                    "{:<10} {:>10} {:>7} {:>8} {:>8} {:>6} {:>9} {:>12.6e}",
                    r.accelerator.name(),
                    format!("{:?}", r.status).to_lowercase(),
                    r.n_g_inc,
                    r.n_g_iter,
                    r.n_l_iter,
                    r.n_gl,
                    r.cutbacks,
                    r.max_patch_eqps
                );
            }
            Ok(0)
        }
        Command::Validate { case } => {
            let case = CaseFile::load(&case)?;
            harness::validate_case(&case)?;
            println!("{}: ok", case.name);
            Ok(0)
        }
        Command::Cases => {
            for (name, _) in harness::BUILTIN_CASES {
                println!("{name}");
            }
            Ok(0)
        }
    }
}
