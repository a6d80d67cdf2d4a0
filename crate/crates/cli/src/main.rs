use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use starwave::scenario::{load_config, parse_config};
use starwave::{run, Command, Error, RunOptions};

#[derive(Parser, Debug)]
#[command(
    name = "starwave",
    version,
    about = "Driven wave packets on quantum star graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON run configuration or a previous run's manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named scenario; fields in --config override it.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps and assembly (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Fail instead of substituting quadrature values when an analytic
    /// coupling entry disagrees with the oracle.
    #[arg(long)]
    strict_oracle: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Eigenvalues and normalizations.
    Spectrum(Common),
    /// Full oracle check of every coupling matrix.
    Verify(Common),
    /// Time evolution with norms, densities and the configured analysis.
    Evolve(Common),
    /// Phase sweep of final partial norms.
    Sweep(Common),
}

fn execute(command: Command, args: &Common) -> Result<(), Error> {
    if let Some(n) = args.threads {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let config = match &args.config {
        Some(path) => load_config(path, args.preset.as_deref())?,
        None => parse_config("", args.preset.as_deref())?,
    };
    let manifest = run(
        &config,
        command,
        &args.out,
        RunOptions {
            strict_oracle: args.strict_oracle,
        },
    )?;
    log::info!(
        "{} finished in {:.1}s; {} files in {}",
        command.name(),
        manifest.wall_clock_seconds,
        manifest.outputs.len() + 1,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Spectrum(a) => (Command::Spectrum, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Evolve(a) => (Command::Evolve, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
