//! `roadfirst`: command-line front end. Each subcommand wraps one library
//! operation with file input and output; `run` executes the whole pipeline
//! from a config file.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 stage failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "roadfirst", version, about = "Systemic road-safety risk modeling")]
pub struct Cli {
    /// Master seed for every random draw (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline config supplying defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory (meaning depends on the subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Append JSON-lines log events to this file as well as stderr.
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FlavorArg {
    CombinedFeature,
    RoadFeature,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum VoteArg {
    Soft,
    Hard,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MissingArg {
    Impute,
    DropRow,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Geojson,
}

#[derive(Subcommand)]
pub enum Command {
    /// Validate a CSV file against its schema and write a canonical copy.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `<data stem>.schema.toml` next to the data file.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Join unit and person records onto crashes.
    Join {
        #[arg(long)]
        crash: PathBuf,
        #[arg(long)]
        unit: PathBuf,
        #[arg(long)]
        person: PathBuf,
        #[arg(long, value_delimiter = ',')]
        keys: Vec<String>,
    },
    /// Attach road-inventory segment features to crashes by route and milepost.
    Map {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        coords: Option<PathBuf>,
        #[arg(long)]
        begin: Option<String>,
        #[arg(long)]
        end: Option<String>,
    },
    /// Impute or drop missing cells.
    Clean {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        missing: Option<MissingArg>,
    },
    /// One-hot encode categorical columns.
    Encode {
        #[arg(long)]
        input: PathBuf,
    },
    /// Iteratively remove multicollinear features.
    Vif {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        corr_threshold: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Stratified train/test split; writes train.csv and test.csv.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// RUMC then SMOTE-NC on a training partition.
    Balance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        undersample_ratio: Option<f64>,
        #[arg(long)]
        target_ratio: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train a random forest; non-target factors, identifiers and location
    /// columns are dropped, and dynamic features too for road-feature models.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, value_enum)]
        flavor: FlavorArg,
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        min_samples_leaf: Option<usize>,
        #[arg(long)]
        max_features: Option<usize>,
        #[arg(long, value_enum)]
        vote: Option<VoteArg>,
        /// Held-out frame to report metrics on.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Shapley attributions for rows of a frame.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Frame to sample the background from (default: the input).
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long)]
        background_rows: Option<usize>,
        /// Rows of the input to explain.
        #[arg(long)]
        rows: Option<usize>,
        /// Enumerate all feature subsets instead of traversing trees.
        #[arg(long)]
        exact: bool,
    },
    /// Score road segments with a road-feature model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        coords: Option<PathBuf>,
        #[arg(long)]
        begin: Option<String>,
        #[arg(long)]
        end: Option<String>,
        #[arg(long, value_enum)]
        missing: Option<MissingArg>,
    },
    /// Export scores above the threshold as a heat map.
    Heatmap {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Render an SVG from a SHAP export.
    #[command(group(ArgGroup::new("source").required(true).args(["summary", "beeswarm", "shap"])))]
    Plot {
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        beeswarm: Option<PathBuf>,
        /// Long-format SHAP export; needs --feature.
        #[arg(long, requires = "feature")]
        shap: Option<PathBuf>,
        #[arg(long)]
        feature: Option<String>,
    },
    /// Generate synthetic crash and inventory data with planted effects.
    /// `--config` here names a generator config.
    Generate {
        #[arg(long)]
        crashes: Option<usize>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        segments_per_route: Option<usize>,
        /// Generate without the default planted effects.
        #[arg(long)]
        no_effects: bool,
    },
    /// Run every stage from a pipeline config.
    Run,
}

/// Why a command failed, which decides the exit code.
pub enum Failure {
    Usage(anyhow::Error),
    Stage(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Stage(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Stage(e) => e,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Failure::Usage(anyhow::anyhow!("--threads must be at least 1"))),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli)),
            Err(e) => Err(Failure::Usage(e.into())),
        },
        None => commands::dispatch(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
