use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use npmixer::commands;
use npmixer::config::RunConfig;
use npmixer::error::Result;

#[derive(Parser)]
#[command(
    name = "npmixer",
    about = "Multivariate time-series forecasting with learnable wavelet \
             decomposition and hierarchical patch mixing",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (sectioned key = value)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. --set model.d_ff=128 (repeatable)
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.set_override(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, logs and plots to a run directory
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output run directory
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val or test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Forecast one test window and render it to SVG
    Forecast {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Window index within the test split
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Channel index to plot
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long, default_value = "forecast.svg")]
        out: PathBuf,
    },
    /// Train and compare architecture variants
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Variants to run (default: all)
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Seeds to average over
        #[arg(long, value_delimiter = ',', default_values_t = [1u64])]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs/ablation")]
        out: PathBuf,
    },
    /// Print the effective config, parameter count and FLOPs
    Inspect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Inspect a saved checkpoint instead of a config
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, out } => commands::cmd_train(&cfg.resolve()?, &out),
        Command::Eval { cfg, checkpoint, split } => {
            commands::cmd_eval(&cfg.resolve()?, &checkpoint, &split)
        }
        Command::Forecast { cfg, checkpoint, window, channel, out } => {
            commands::cmd_forecast(&cfg.resolve()?, &checkpoint, window, channel, &out)
        }
        Command::Ablate { cfg, variants, seeds, out } => {
            let variants = if variants.is_empty() {
                commands::ABLATION_VARIANTS.iter().map(|s| s.to_string()).collect()
            } else {
                variants
            };
            commands::cmd_ablate(&cfg.resolve()?, &variants, &seeds, &out)
        }
        Command::Inspect { cfg, checkpoint } => {
            commands::cmd_inspect(&cfg.resolve()?, checkpoint.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
