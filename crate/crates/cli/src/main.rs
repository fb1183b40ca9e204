use std::path::PathBuf;

use anyhow::Result;
use cfcn::commands::{self, SegmentInput, SegmentOptions};
use cfcn::config::{ExperimentConfig, Role};
use cfcn_core::phantom::Split;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cfcn", version, about = "Cascaded FCN liver and lesion segmentation on synthetic phantoms")]
struct Cli {
    /// Experiment config (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Liver,
    Lesion,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Liver => Role::Liver,
            RoleArg::Lesion => Role::Lesion,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the phantom dataset and its manifest.
    Phantom,
    /// Train the liver or the lesion network.
    Train {
        #[arg(long, value_enum)]
        role: RoleArg,
    },
    /// Run the cascade on the test split or on one volume.
    Segment {
        /// Single volume sidecar instead of the dataset split.
        #[arg(long)]
        volume: Option<PathBuf>,
        /// Reference labels for the single volume's overlays.
        #[arg(long, requires = "volume")]
        truth: Option<PathBuf>,
        /// Dataset split to segment.
        #[arg(long, value_enum, default_value = "test", conflicts_with = "volume")]
        split: SplitArg,
        /// Also write the CRF-refined labels.
        #[arg(long)]
        crf: bool,
        /// CRF settings file (defaults to the config's crf section).
        #[arg(long, requires = "crf")]
        crf_params: Option<PathBuf>,
        /// Also write the single-network lesion baseline.
        #[arg(long)]
        baseline: bool,
        /// Skip the PNG overlays.
        #[arg(long)]
        no_overlays: bool,
    },
    /// Score label volumes against references and write CSV tables.
    Evaluate {
        /// Directory of predicted `<case>.json` label volumes.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of reference label volumes (defaults to the dataset's).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Expected case list from this dataset split.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Random search of per-stage CRF parameters on the training split.
    CrfSearch,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    match cli.command {
        Command::Phantom => {
            commands::phantom(&cfg)?;
        }
        Command::Train { role } => {
            let curve = commands::train(&cfg, role.into())?;
            if let Some(r) = curve.last() {
                let best = curve.records.iter().filter_map(|r| r.test_dice).fold(f64::NAN, f64::max);
                println!(
                    "iteration {} loss {:.4} train_dice {:.4} test_dice {} best_test_dice {best:.4}",
                    r.iteration,
                    r.loss,
                    r.train_dice,
                    r.test_dice.map_or("-".into(), |d| format!("{d:.4}"))
                );
            }
        }
        Command::Segment {
            volume,
            truth,
            split,
            crf,
            crf_params,
            baseline,
            no_overlays,
        } => {
            let input = match volume {
                Some(volume) => SegmentInput::File { volume, truth },
                None => match split {
                    SplitArg::Test => SegmentInput::TestSplit,
                    SplitArg::Train => SegmentInput::TrainSplit,
                },
            };
            let done = commands::segment(
                &cfg,
                &SegmentOptions {
                    input,
                    crf,
                    crf_params,
                    baseline,
                    overlays: !no_overlays,
                },
            )?;
            println!("segmented {} volumes into {}", done.len(), cfg.segment_dir().display());
        }
        Command::Evaluate { pred, truth, split } => {
            let truth = match truth {
                Some(t) => t,
                None => commands::reference_dir(&cfg)?,
            };
            let cases = split.map(|s| commands::split_cases(&cfg, s.into())).transpose()?;
            let out = commands::evaluate(&cfg, &pred, &truth, cases)?;
            for s in &out.summaries {
                if let Some(d) = &s.dice {
                    println!("label {} dice {:.4} ± {:.4} (n={})", s.label, d.mean, d.std, d.n);
                }
            }
            println!("wrote {} and {}", out.metrics_csv.display(), out.summary_csv.display());
        }
        Command::CrfSearch => {
            let out = commands::crf_search(&cfg)?;
            println!("wrote {}", cfg.crf_params_path().display());
            for (name, r) in [("liver", &out.liver), ("lesion", &out.lesion)] {
                if let Some(r) = r {
                    println!("{name}: best mean Dice {:.4} {:?}", r.best_score, r.best);
                }
            }
        }
    }
    Ok(())
}
