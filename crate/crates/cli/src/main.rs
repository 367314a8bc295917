use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use filmedgan_cli::service::{self, AppState};
use filmedgan_cli::{stages, Bundle, PipelineConfig};

const CHECKPOINT_ENV: &str = "FILMEDGAN_CHECKPOINT";

#[derive(Parser)]
#[command(name = "filmedgan", version, about = "Language-guided outfit editing with FiLM-conditioned GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural sprite dataset.
    MakeSynthetic {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the joint text/image embedding.
    TrainEmbedding {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train generator and discriminator.
    TrainGan {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory holding the trained embedding model.
        #[arg(long, env = CHECKPOINT_ENV)]
        checkpoint: PathBuf,
        /// Defaults to the checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Next-image protocol report (JSON).
    Evaluate {
        #[arg(long, env = CHECKPOINT_ENV)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Edit one image; also writes four attention heatmaps next to `--out`.
    Edit {
        #[arg(long, env = CHECKPOINT_ENV)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Comparison sheet over checkpoints and captions.
    Grid {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long = "text", required = true)]
        texts: Vec<String>,
        /// Source images come from its test split; synthetic otherwise.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// HTTP inference service.
    Serve {
        #[arg(long, env = CHECKPOINT_ENV)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Gallery pool for /api/samples.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn config(common: &Common) -> Result<PipelineConfig> {
    Ok(PipelineConfig::load(common.config.as_deref())?.with_seed(common.seed))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeSynthetic { n, out, common } => {
            let cfg = config(&common)?;
            stages::make_synthetic(&cfg, n, common.seed.unwrap_or(0), &out)?;
        }
        Command::TrainEmbedding { dataset, out, common } => {
            stages::train_embedding(&config(&common)?, &dataset, &out)?;
        }
        Command::TrainGan { dataset, checkpoint, out, common } => {
            let out = out.unwrap_or_else(|| checkpoint.clone());
            stages::train_gan(&config(&common)?, &dataset, &checkpoint, &out)?;
        }
        Command::Evaluate { checkpoint, dataset, out, common } => {
            let report = stages::evaluate(&config(&common)?, &checkpoint, &dataset)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
        }
        Command::Edit { checkpoint, image, text, out, .. } => {
            for p in stages::edit(&checkpoint, &image, &text, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Grid { checkpoints, texts, dataset, n, out, common } => {
            stages::grid(&checkpoints, &texts, dataset.as_deref(), n, common.seed.unwrap_or(0), &out)?;
        }
        Command::Serve { checkpoint, port, host, dataset, .. } => {
            let bundle = Bundle::load(&checkpoint)?;
            let gallery = match dataset.as_deref() {
                Some(d) => Some(stages::source_samples(Some(d), usize::MAX, 0, bundle.resolution())?),
                None => None,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(AppState { bundle, gallery }, &host, port))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

