//! `iccplan` command line: generate bands, summarize ICC, search for
//! required feature counts, fit planning equations and query them.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::PredictTarget;
use crate::config::{ConfigError, ConfigErrorKind, ExperimentConfig};
use crate::manifest::Run;

/// Default output directory when neither `--out` nor the config sets one.
pub const OUT_DIR_ENV: &str = "ICCPLAN_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "iccplan-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exit {
    Success = 0,
    Failure = 1,
    Config = 2,
    Resolution = 3,
    NotReachable = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Paper,
    Desk,
}

#[derive(Debug, Parser)]
#[command(name = "iccplan", version, about = "Feature-count planning from temporal persistence (ICC)")]
pub struct Cli {
    /// Experiment config (TOML). Without it the `--scale` preset is used.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Built-in preset; for reproduce-paper, desk also drops unresolvable targets.
    #[arg(long, global = true, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// Output directory [default: config output_dir, then $ICCPLAN_OUT_DIR, then ./iccplan-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write fits.svg.
    #[arg(long, global = true)]
    pub svg: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate band datasets and band_summary.csv.
    Generate,
    /// Per-feature ICC, band summaries and histograms.
    Icc,
    /// Staged search for the required feature count of every (band, target).
    Search,
    /// Fit log10(N) = intercept + slope * ICC per target.
    Fit {
        /// Counts table [default: <out>/required_features.csv].
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Predict a feature count from the bundled planning coefficients.
    Predict {
        #[arg(long)]
        icc: f64,
        /// EER target in percent, e.g. 5 for 5%.
        #[arg(long, conflicts_with_all = ["frr", "far"], required_unless_present = "frr")]
        eer: Option<f64>,
        /// FRR target in percent.
        #[arg(long, requires = "far")]
        frr: Option<f64>,
        /// FAR level in percent.
        #[arg(long, requires = "frr")]
        far: Option<f64>,
    },
    /// generate, icc, search and fit in one run.
    ReproducePaper,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Icc => "icc",
            Command::Search => "search",
            Command::Fit { .. } => "fit",
            Command::Predict { .. } => "predict",
            Command::ReproducePaper => "reproduce-paper",
        }
    }
}

impl Cli {
    pub fn load_config(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => match self.scale {
                Scale::Paper => ExperimentConfig::paper(),
                Scale::Desk => ExperimentConfig::desk(),
            },
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = Some(workers);
        }
        Ok(cfg)
    }

    pub fn output_dir(&self, cfg: Option<&ExperimentConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
    }
}

fn classify(err: &anyhow::Error) -> Exit {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<ConfigError>() {
            return match c.kind {
                ConfigErrorKind::Invalid => Exit::Config,
                ConfigErrorKind::Resolution => Exit::Resolution,
            };
        }
        if let Some(e) = cause.downcast_ref::<iccplan_core::Error>() {
            return match e {
                iccplan_core::Error::Resolution { .. } => Exit::Resolution,
                iccplan_core::Error::NotReachable { .. } => Exit::NotReachable,
                _ => Exit::Failure,
            };
        }
    }
    Exit::Failure
}

fn init_workers(n: Option<usize>) -> usize {
    let n = n.unwrap_or(0);
    // fails only if a pool already exists, e.g. in tests; results do not depend on it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    rayon::current_num_threads()
}

fn report_error(err: &anyhow::Error) -> Exit {
    eprintln!("error: {err:#}");
    classify(err)
}

/// Runs one invocation and returns its exit status.
pub fn run(cli: Cli) -> Exit {
    if let Command::Predict { icc, eer, frr, far } = cli.command {
        let target = match (eer, frr, far) {
            (Some(e), _, _) => PredictTarget::Eer(e),
            (None, Some(frr), Some(far)) => PredictTarget::FrrAtFar { frr, far },
            _ => unreachable!("clap enforces a target"),
        };
        return match commands::predict(icc, target) {
            Ok(text) => {
                println!("{text}");
                Exit::Success
            }
            Err(e) => report_error(&e),
        };
    }

    let cfg = if matches!(cli.command, Command::Fit { .. }) {
        None
    } else {
        match cli.load_config().and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => Some(c),
            Err(e) => return report_error(&e.into()),
        }
    };
    let workers = init_workers(cfg.as_ref().and_then(|c| c.workers).or(cli.workers));
    let out = cli.output_dir(cfg.as_ref());
    let mut run = match Run::start(cli.command.name(), &out, cfg.as_ref(), workers) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };

    let result = match (&cli.command, &cfg) {
        (Command::Generate, Some(c)) => commands::generate(&mut run, c),
        (Command::Icc, Some(c)) => commands::icc(&mut run, c),
        (Command::Search, Some(c)) => commands::search(&mut run, c),
        (Command::ReproducePaper, Some(c)) => commands::reproduce(&mut run, c, cli.scale == Scale::Desk, cli.svg),
        (Command::Fit { input }, _) => {
            let input = input.clone().unwrap_or_else(|| out.join(commands::REQUIRED_FEATURES));
            commands::fit(&mut run, &input, cli.svg)
        }
        _ => unreachable!("config loaded for every command but fit and predict"),
    };
    let (exit, error) = match result {
        Ok(exit) => (exit, None),
        Err(e) => (report_error(&e), Some(format!("{e:#}"))),
    };
    match run.finish(error) {
        Ok(_) => exit,
        Err(e) => report_error(&e).max(exit),
    }
}
