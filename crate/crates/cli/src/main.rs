use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use platewise::intake::ReportFormat;
use platewise::pipeline::{self, EvalSplit, PipelineConfig, CHECKPOINT_FILE, COOCCURRENCE_FILE};
use platewise::synth::NoiseSpec;
use platewise::Result;

/// Food intake estimation from before/after RGB-D captures of meal trays.
#[derive(Parser, Debug)]
#[command(name = "platewise", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Pipeline configuration (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write intermediate maps and meshes for each meal.
    #[arg(long, global = true)]
    dump_stages: bool,
    /// Use annotation label maps instead of the network.
    #[arg(long, global = true)]
    use_gt_labels: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dataset root with meal directories.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    cooccurrence: Option<PathBuf>,
    /// Plate model library (JSON).
    #[arg(long, global = true)]
    plates: Option<PathBuf>,
    /// Report format: text or csv.
    #[arg(long, global = true)]
    format: Option<ReportFormat>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset with annotations and ground truth.
    Synth {
        #[arg(long)]
        n: usize,
        /// Depth noise standard deviation, meters.
        #[arg(long)]
        depth_noise: Option<f64>,
        /// Fraction of depth pixels dropped.
        #[arg(long)]
        dropout: Option<f64>,
        /// No depth noise or dropout.
        #[arg(long, conflicts_with_all = ["depth_noise", "dropout"])]
        noiseless: bool,
    },
    /// Train the segmentation network and the food/plate co-occurrence table.
    Train {
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Label the before and after frames of one meal.
    Segment { meal: PathBuf },
    /// Measure per-item volumes of one meal.
    Volume { meal: PathBuf },
    /// Estimate the nutrient intake of one meal.
    Intake { meal: PathBuf },
    /// Score intake and segmentation against ground truth.
    Eval {
        /// Evaluate all meals instead of the test split.
        #[arg(long)]
        all: bool,
    },
    /// Combine per-meal intake results into one report.
    Report {
        /// Directory whose subdirectories hold intake.json files.
        #[arg(long)]
        input: PathBuf,
    },
}

fn configure(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.dump_stages |= g.dump_stages;
    cfg.use_gt_labels |= g.use_gt_labels;
    if let Some(p) = &g.dataset {
        cfg.dataset = Some(p.clone());
    }
    if let Some(p) = &g.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
    if let Some(p) = &g.cooccurrence {
        cfg.cooccurrence = Some(p.clone());
    }
    if let Some(p) = &g.plates {
        cfg.plate_library = Some(p.clone());
    }
    if let Some(f) = g.format {
        cfg.report_format = f;
    }
    Ok(cfg)
}

/// Fills in model paths from a training output directory when unset.
fn default_models(cfg: &mut PipelineConfig, dir: &Path) {
    if cfg.checkpoint.is_none() && dir.join(CHECKPOINT_FILE).is_file() {
        cfg.checkpoint = Some(dir.join(CHECKPOINT_FILE));
    }
    if cfg.cooccurrence.is_none() && dir.join(COOCCURRENCE_FILE).is_file() {
        cfg.cooccurrence = Some(dir.join(COOCCURRENCE_FILE));
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = configure(&cli.global)?;
    let out = &cli.global.out;
    default_models(&mut cfg, out);
    match cli.command {
        Command::Synth {
            n,
            depth_noise,
            dropout,
            noiseless,
        } => {
            if noiseless {
                cfg.synth.noise = NoiseSpec::NONE;
            }
            if let Some(s) = depth_noise {
                cfg.synth.noise.depth_sigma = s;
            }
            if let Some(d) = dropout {
                cfg.synth.noise.dropout = d;
            }
            pipeline::cmd_synth(&cfg, n, out)?;
        }
        Command::Train { max_epochs } => {
            if let Some(e) = max_epochs {
                cfg.train.max_epochs = e;
            }
            cfg.validate()?;
            pipeline::cmd_train(&cfg, out)?;
        }
        Command::Segment { meal } => pipeline::cmd_segment(&cfg, &meal, out)?,
        Command::Volume { meal } => {
            pipeline::cmd_volume(&cfg, &meal, out)?;
        }
        Command::Intake { meal } => {
            pipeline::cmd_intake(&cfg, &meal, out)?;
        }
        Command::Eval { all } => {
            if all {
                cfg.eval_split = EvalSplit::All;
            }
            pipeline::cmd_eval(&cfg, out)?;
        }
        Command::Report { input } => {
            pipeline::cmd_report(&cfg, &input, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
