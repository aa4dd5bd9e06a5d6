use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedshuffle::harness::{cli_run, cli_sweep, cli_theory, parse_check, CliOptions};

#[derive(Parser)]
#[command(name = "fedshuffle", version, about = "Federated compressed random reshuffling experiments")]
struct Cli {
    /// Override the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress parameter-validity warnings.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single configuration and write its trace and theory report.
    Run { config: PathBuf },
    /// Run every grid point of a config with list-valued algorithm, gamma or k.
    Sweep { config: PathBuf },
    /// Write the theory report without training.
    Theory { config: PathBuf },
    /// Parse a LIBSVM file and report its shape.
    ParseCheck { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "warn" }))
        .init();
    let opts = CliOptions { seed: cli.seed, quiet: cli.quiet };
    let result = match &cli.command {
        Command::Run { config } => cli_run(config, opts).map(|o| {
            o.prefixes.iter().for_each(|p| println!("wrote {}.trace.csv", p.display()));
        }),
        Command::Sweep { config } => cli_sweep(config, opts).map(|o| println!("wrote {} grid points", o.prefixes.len())),
        Command::Theory { config } => cli_theory(config, opts).map(|p| println!("wrote {}", p.display())),
        Command::ParseCheck { file } => parse_check(file).map(|s| println!("{s}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
