use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sst_cli::commands::*;
use sst_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "sst", version, about = "Hyperspectral denoising with a spatial-spectral transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Add noise to clean cubes (--input file or directory, --output).
    Simulate,
    /// Train on clean cubes (--input directory, --checkpoint).
    Train,
    /// Denoise cubes with a trained model (--checkpoint, --input, --output).
    Denoise,
    /// Compare clean cubes (--input) against cubes under test (--test).
    Eval,
    /// Verify analytic gradients against finite differences.
    Gradcheck,
    /// Write a pseudo-color PPM of three bands (--input, --output, --rgb).
    Render,
    /// Generate synthetic clean cubes (--output directory, --count, --height, --width, --bands).
    Synth,
    /// Print the resolved configuration as TOML.
    Config,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &mut out),
        Command::Train => cmd_train(&cfg, &mut out).map(drop),
        Command::Denoise => cmd_denoise(&cfg, &mut out),
        Command::Eval => cmd_eval(&cfg, &mut out).map(drop),
        Command::Gradcheck => cmd_gradcheck(&cfg, &mut out).map(drop),
        Command::Render => cmd_render(&cfg, &mut out),
        Command::Synth => cmd_synth(&cfg, &mut out),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
