use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use sli_cli::{parse_config, run_subcommand, RunConfig, Subcommand, DEFAULTS};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Sweep,
    Scratch,
    Render,
    Patterns,
    VerifyOracle,
}

/// Structured-light inspection simulator.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum, required_unless_present = "print_defaults")]
    command: Option<Command>,
    /// Configuration file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_defaults: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.print_defaults {
        print!("{DEFAULTS}");
        return ExitCode::SUCCESS;
    }
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let cfg = match &args.config {
        None => RunConfig::default(),
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match parse_config(&text) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: config: {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            },
            Err(e) => {
                eprintln!("error: io: {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
        },
    };
    let cmd = match args.command.expect("clap enforces a command") {
        Command::Sweep => Subcommand::Sweep,
        Command::Scratch => Subcommand::Scratch,
        Command::Render => Subcommand::Render,
        Command::Patterns => Subcommand::Patterns,
        Command::VerifyOracle => Subcommand::VerifyOracle,
    };
    match run_subcommand(cmd, &cfg, &args.out) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {} failed: {e}", cmd.name());
            ExitCode::FAILURE
        }
    }
}
