use aniscert_cli::{cmd_certify, cmd_pattern_dump, cmd_predict, cmd_train, cmd_verify};
use aniscert_cli::{CliError, Config};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "aniscert",
    about = "Randomized-smoothing certification with anisotropic noise",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Campaign configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set n=5000 (repeatable; beats file
    /// keys, beaten by ANISCERT_SEED for the seed).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for the sampling fan-out.
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base classifier and noise-parameter generator jointly.
    Train(CommonArgs),
    /// Run a certification campaign; writes results and curve CSVs.
    Certify(CommonArgs),
    /// Run abstaining prediction over a dataset.
    Predict(CommonArgs),
    /// Run the oracle verification suite.
    Verify {
        /// Suite seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a pattern sigma map as CSV.
    PatternDump(CommonArgs),
}

fn build_config(common: &CommonArgs) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    cfg.apply_overrides(&common.set)?;
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.apply_env()?;
    Ok(cfg)
}

fn run() -> Result<(), CliError> {
    let args = Args::parse();
    match &args.command {
        Command::Train(c) => cmd_train(&build_config(c)?),
        Command::Certify(c) => cmd_certify(&build_config(c)?),
        Command::Predict(c) => cmd_predict(&build_config(c)?),
        Command::Verify { seed } => cmd_verify(*seed),
        Command::PatternDump(c) => cmd_pattern_dump(&build_config(c)?),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("aniscert: {e}");
        std::process::exit(e.exit_code());
    }
}
