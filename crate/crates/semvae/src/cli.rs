use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use semvae_core::latent::EditOp;
use semvae_core::toy::ToyConfig;
use semvae_core::ClassPalette;

use crate::commands::{self, AblationGrid, EditFlags, EvalSplit};
use crate::config::RunConfig;
use crate::dataset::SisLayout;
use crate::error::{CliError, Result};
use crate::io::load_palette;
use crate::server::{self, AppState, CHECKPOINT_ENV};

#[derive(Debug, Parser)]
#[command(name = "semvae", version, about = "Class-wise variational autoencoder for semantic masks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic face-layout label maps.
    SynthData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a run configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the newest checkpoint of the run.
        #[arg(long)]
        resume: bool,
        /// Discard existing checkpoints of the run.
        #[arg(long, conflicts_with = "resume")]
        force: bool,
    },
    /// Reconstruction metrics of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
        /// Directory for `metrics.json` and `per_class_iou.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and compare architecture and loss variants.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = AblationGrid::Full)]
        grid: AblationGrid,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate, perturb or interpolate parts of a mask.
    Edit(EditArgs),
    /// Write a mask as per-part binary images or a single label map.
    ExportSis {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        palette: PathBuf,
        #[arg(long, value_enum, default_value_t = SisLayout::PartFiles)]
        layout: SisLayout,
        /// File-name id; defaults to the input file stem.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge `<id>_<part>.png` part images into label maps.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Palette file; the CelebAMask-HQ class table when omitted.
        #[arg(long)]
        palette: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the editing API over HTTP.
    Serve {
        /// Checkpoint directory; falls back to the SEMVAE_CHECKPOINT variable.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// JSON edit plan; alternative to --op/--class.
    #[arg(long, conflicts_with_all = ["op", "class"])]
    pub plan: Option<PathBuf>,
    #[arg(long, value_parser = parse_op)]
    pub op: Option<EditOp>,
    /// Class name or index.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Label map supplying the interpolation target.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub truncation: Option<f64>,
    /// Number of seeded variants to write.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_op(s: &str) -> std::result::Result<EditOp, String> {
    match s {
        "generate" => Ok(EditOp::Generate),
        "perturb" => Ok(EditOp::Perturb),
        "interpolate" => Ok(EditOp::Interpolate),
        _ => Err(format!("unknown op `{s}` (generate, perturb, interpolate)")),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { n, classes, size, seed, out } => {
            commands::synth_data(&out, n, &ToyConfig { class_count: classes, height: size, width: size }, seed)
        }
        Command::Train { config, resume, force } => {
            let cfg = RunConfig::load(&config)?;
            let summary = commands::train(&cfg, resume, force)?;
            println!("{}", serde_json::to_string_pretty(&summary.final_metrics).unwrap_or_default());
            Ok(())
        }
        Command::Eval { checkpoint, data, split, out } => {
            let m = commands::eval(&checkpoint, &data, split, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?);
            Ok(())
        }
        Command::Ablation { config, seeds, grid, out } => {
            let cfg = RunConfig::load(&config)?;
            let rows = commands::ablation(&cfg, &seeds, grid, &out)?;
            print!("{}", semvae_core::train::ablation_markdown(&rows));
            Ok(())
        }
        Command::Edit(a) => {
            let plan = match &a.plan {
                Some(p) => commands::load_plan(p)?,
                None => EditFlags {
                    op: a.op,
                    class: a.class,
                    noise_scale: a.noise_scale,
                    alpha: a.alpha,
                    target: a.target,
                    truncation: a.truncation,
                }
                .into_plan()?,
            };
            let files = commands::edit(&a.checkpoint, &a.input, plan, a.seed, a.batch, &a.out)?;
            println!("{}", serde_json::to_string_pretty(&files).map_err(|e| CliError::Runtime(e.to_string()))?);
            Ok(())
        }
        Command::ExportSis { input, palette, layout, id, out } => {
            for p in commands::export_sis(&input, &palette, layout, id.as_deref(), &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Ingest { input, palette, size, out } => {
            let palette = match palette {
                Some(p) => load_palette(&p)?,
                None => ClassPalette::celebamask_hq(),
            };
            let ids = commands::ingest(&input, &palette, size, &out)?;
            eprintln!("ingested {} masks into {}", ids.len(), out.display());
            Ok(())
        }
        Command::Serve { checkpoint, addr } => {
            let state = match checkpoint {
                Some(p) => AppState::from_path(&p),
                None => AppState::from_env(),
            };
            if std::env::var_os(CHECKPOINT_ENV).is_none() && state_missing(&state) {
                eprintln!("warning: no model loaded; model endpoints will answer 503");
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            rt.block_on(server::serve(state, &addr))
        }
    }
}

fn state_missing(state: &AppState) -> bool {
    !state.has_model()
}
