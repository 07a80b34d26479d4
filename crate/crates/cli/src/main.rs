//! `brainalign`: runs the attribution pipeline one stage at a time, with
//! every artifact written to the configured output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use brainalign_cli::commands;
use brainalign_cli::config::{LayerChoice, MethodName, Overrides, RunConfig};
use brainalign_cli::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "brainalign", version, about = "Word-level attribution for brain alignment and next-word prediction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true, value_enum)]
    method: Option<MethodName>,

    /// `auto` or a comma-separated list of layer ids.
    #[arg(long, global = true)]
    layers: Option<LayerChoice>,

    /// Comma-separated attribution-mass thresholds in percent.
    #[arg(long, global = true, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Train the toy language model on the corpus.
    Train,
    /// Build per-layer design matrices (and synthetic responses).
    Embed,
    /// Fit nested-CV encoding models for every layer.
    Fit,
    /// Attribute the brain and next-word losses to context words.
    Attribute,
    /// Compute attribution metrics.
    Analyze,
    /// Run the masking experiments.
    Mask,
    /// Write the report tables.
    Report,
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the full default configuration.
    Init {
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a configuration and print it with every default filled in.
    Show,
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(jobs) = g.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot size the worker pool: {e}")))?;
    }
    let overrides = Overrides {
        seed: g.seed,
        method: g.method,
        layers: g.layers.clone(),
        thresholds: g.thresholds.clone(),
    };
    if let Command::Config {
        action: ConfigAction::Init { out },
    } = &cli.command
    {
        let mut cfg = RunConfig::default();
        cfg.apply(&overrides);
        let text = cfg.to_toml();
        return match out {
            Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io { path: p.clone(), source }),
            None => {
                print!("{text}");
                Ok(())
            }
        };
    }
    let cfg = RunConfig::load(g.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Embed => commands::cmd_embed(&cfg),
        Command::Fit => commands::cmd_fit(&cfg),
        Command::Attribute => commands::cmd_attribute(&cfg),
        Command::Analyze => commands::cmd_analyze(&cfg),
        Command::Mask => commands::cmd_mask(&cfg),
        Command::Report => commands::cmd_report(&cfg),
        Command::Config {
            action: ConfigAction::Show,
        } => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Config { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
