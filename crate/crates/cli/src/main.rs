mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Grid-cell and region embeddings for urban regions.
#[derive(Parser, Debug)]
#[command(name = "flexireg", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, env = "FLEXIREG_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Input data directory; overrides the config file.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic city into the data directory.
    Synth,
    /// Build the cell grid over the study area.
    Grid,
    /// Bin inputs into per-cell features and encode them.
    Features,
    /// Train stage-1 cell embeddings.
    TrainCells {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Aggregate cell embeddings into region embeddings.
    Aggregate {
        /// Region GeoJSON; defaults to the data directory's regions.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
    /// Train the prompt enhancer for one task on all regions.
    TrainTask {
        #[arg(long)]
        task: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Ten-fold evaluation of one variant.
    Eval {
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long)]
        task: Option<String>,
    },
    /// Evaluate every configured ablation variant.
    Ablate,
    /// Re-evaluate on successively merged region formations.
    MergeEval,
    /// Render a loss curve CSV as PNG.
    Plot {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let name = commands::name(&cli.command);
    match commands::run(&cli.global, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "command": name, "error": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
