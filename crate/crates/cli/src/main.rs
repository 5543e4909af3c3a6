//! `chord-atlas`: contact checks, chord searches, family continuation and
//! gradient-flow experiments driven by a TOML config.
//!
//! Exit codes: 0 success, 1 a check or monitor failed, 2 usage or config
//! error, 3 solver failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::Context;

#[derive(Parser)]
#[command(name = "chord-atlas", version, about = "Chord families on energy hypersurfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// JSON-lines file of `{mu, u, tau[, direction]}` seeds.
    #[arg(long)]
    seed_file: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the contact function on a parameter grid.
    ContactCheck(Common),
    /// Shoot chords from guesses or from an axis-crossing scan.
    FindChord(Common),
    /// Continue families, locate events, probe them and plot.
    Continue(Common),
    /// Flow lines of the time-dependent action and the stretching experiment.
    GradientFlow(Common),
}

fn main() {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&Context) -> Result<i32, commands::CliError>) = match &cli.command {
        Command::ContactCheck(c) => (c, commands::cmd_contact_check),
        Command::FindChord(c) => (c, commands::cmd_find_chord),
        Command::Continue(c) => (c, commands::cmd_continue),
        Command::GradientFlow(c) => (c, commands::cmd_gradient_flow),
    };
    let ctx = match Context::new(&common.config, common.seed_file.as_deref(), common.out.as_deref(), common.verbose) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    };
    let code = match run(&ctx) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
