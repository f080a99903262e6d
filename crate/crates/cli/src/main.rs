use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use timeslice_cli::context::build_cache;
use timeslice_cli::{run, CliError, LoadedConfig, RunOptions};

#[derive(Parser)]
#[command(name = "timeslice", version, about = "Verify free and interacting lattice field identities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite (or `all` for the suites listed in the config).
    Verify {
        suite: String,
        #[arg(long)]
        config: PathBuf,
        /// Truncation order of the perturbative series.
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Kernel cache maintenance.
    Kernels {
        #[command(subcommand)]
        action: KernelsAction,
    },
}

#[derive(Subcommand)]
enum KernelsAction {
    /// Precompute the retarded, advanced and two-point kernels.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "kernel-cache")]
        cache_dir: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Verify { suite, config, order, seed, report, cache_dir } => {
            let loaded = LoadedConfig::from_path(&config)?;
            let result = run(&loaded, &suite, &RunOptions { order, seed, cache_dir })?;
            for r in result.records() {
                eprintln!(
                    "{} {:<48} deviation {:.3e} tolerance {:.1e}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.check_id,
                    r.deviation,
                    r.tolerance
                );
            }
            match report {
                Some(path) => result.emit(&path)?,
                None => print!("{}", result.to_json()),
            }
            Ok(result.exit_code())
        }
        Command::Kernels { action: KernelsAction::Build { config, cache_dir } } => {
            let loaded = LoadedConfig::from_path(&config)?;
            for path in build_cache(&loaded.config, &cache_dir)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
