use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    Csv,
    #[default]
    Json,
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "volaug",
    version,
    about = "Deterministic volumetric augmentation and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Pipeline config (TOML).
    #[arg(long, global = true, env = "APP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the master seed of the pipeline or the split seed.
    #[arg(long, global = true, env = "APP_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "APP_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "APP_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, env = "APP_FORMAT", value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Scan a dataset directory and write index.json.
    Index {
        /// Dataset root; cases may sit under HGG/ and LGG/ subdirectories
        #[arg(long)]
        root: PathBuf,
        /// Accept cases without a segmentation.
        #[arg(long)]
        allow_missing_masks: bool,
    },
    /// Grade-stratified train/validation/test split of an index; writes split.json.
    Split {
        /// index.json written by `index`
        #[arg(long)]
        index: PathBuf,
        /// Train, validation and test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
        ratios: [f64; 3],
    },
    /// Run a pipeline over indexed cases; writes volumes and provenance.json.
    Augment {
        /// index.json written by `index`
        #[arg(long)]
        index: PathBuf,
        /// Shipped preset used when --config is absent.
        #[arg(long, default_value = "baseline")]
        preset: String,
        /// Restrict to one partition of a split manifest.
        #[arg(long, requires = "subset")]
        split: Option<PathBuf>,
        /// Partition to process; needs --split
        #[arg(long, value_enum, requires = "split")]
        subset: Option<Subset>,
    },
    /// Dice per case and region; writes dice.csv and dice.json.
    Evaluate {
        /// Directory of predicted label maps
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth label maps
        #[arg(long)]
        gt: PathBuf,
    },
    /// Repeated-measures ANOVA, paired t-tests and box-plot data per region.
    Analyze {
        /// `name=path/to/dice.csv`, one per condition.
        #[arg(long = "report", required = true, value_parser = parse_report)]
        reports: Vec<(String, PathBuf)>,
        /// Apply the Greenhouse-Geisser correction to the ANOVA p-values.
        #[arg(long)]
        greenhouse_geisser: bool,
    },
    /// Check the loss and schedule formulas against closed-form values.
    VerifyMath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Validation,
    Test,
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected three comma-separated fractions, got {s:?}"))
}

fn parse_report(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected name=path, got {s:?}")),
    }
}
