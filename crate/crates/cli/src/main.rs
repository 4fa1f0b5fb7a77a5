mod commands;
mod config;
mod failure;
mod ingest;
mod model;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{FileConfig, ForestArgs, Overrides, RunConfig};
use crate::failure::{Failure, Kind};

/// Conditional covariance estimation with covariance regression forests.
#[derive(Parser, Debug)]
#[command(name = "covrf", version, propagate_version = true)]
struct Cli {
    /// Seed for every random choice [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads [default: all cores]
    #[arg(long, global = true, env = "COVRF_THREADS")]
    threads: Option<usize>,

    /// TOML file with default settings; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct TrainingData {
    /// Covariate CSV with a header row
    #[arg(long = "x")]
    x: PathBuf,
    /// Response CSV with a header row
    #[arg(long = "y")]
    y: PathBuf,
    /// Covariate columns to treat as categorical (comma separated)
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Accuracy,
    Nodesize,
    Vimp,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a forest, save it, and write OOB covariance estimates
    Fit {
        #[command(flatten)]
        data: TrainingData,
        #[command(flatten)]
        forest: ForestArgs,
        /// Directory for model.covrf, oob_estimates.csv and summary.json
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Estimate covariance matrices for new covariate rows
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "x")]
        x: PathBuf,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Permutation test for the effect of covariates
    Test {
        #[command(flatten)]
        data: TrainingData,
        #[command(flatten)]
        forest: ForestArgs,
        /// Control covariates; omit for the global test
        #[arg(long, value_delimiter = ',')]
        control: Vec<String>,
        /// Number of permutations [default: 500]
        #[arg(long)]
        permutations: Option<usize>,
        /// Significance level [default: 0.05]
        #[arg(long)]
        alpha: Option<f64>,
        /// Output JSON; stdout if omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Variable importance from a saved model or from training data
    Vimp {
        #[arg(long, conflicts_with_all = ["x", "y"])]
        model: Option<PathBuf>,
        #[arg(long = "x", requires = "y")]
        x: Option<PathBuf>,
        #[arg(long = "y", requires = "x")]
        y: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        categorical: Vec<String>,
        #[command(flatten)]
        forest: ForestArgs,
        /// Output JSON; stdout if omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation experiment and write tidy result tables
    Simulate {
        /// Data generating process 1-4
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), conflicts_with = "scenario", required_unless_present = "scenario")]
        dgp: Option<u8>,
        /// Significance scenario: g-h0-1, g-h0-2, g-h1, g-h1-noise, p-h0, p-h1-weak, p-h1-strong
        #[arg(long)]
        scenario: Option<String>,
        /// Experiment run with --dgp
        #[arg(long, value_enum, default_value = "accuracy")]
        experiment: Experiment,
        /// Training sizes (comma separated)
        #[arg(long, value_delimiter = ',', default_value = "100")]
        ntrain: Vec<usize>,
        /// Test rows per replication
        #[arg(long, default_value_t = 500)]
        ntest: usize,
        /// Covariates entering the covariance (DGP4 only)
        #[arg(long)]
        p: Option<usize>,
        /// Responses (DGP3 and DGP4 only)
        #[arg(long)]
        q: Option<usize>,
        /// Replications per training size [default: 100]
        #[arg(long)]
        reps: Option<usize>,
        /// Permutations per test [default: 500]
        #[arg(long)]
        permutations: Option<usize>,
        /// Significance level [default: 0.05]
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let base = |forest, permutations, alpha, reps, out_dir| {
        RunConfig::resolve(
            &file,
            Overrides {
                seed: cli.seed,
                threads: cli.threads,
                forest,
                permutations,
                alpha,
                reps,
                out_dir,
            },
        )
    };
    let cfg = match &cli.command {
        Command::Fit {
            forest, out_dir, ..
        } => base(Some(forest), None, None, None, out_dir.clone())?,
        Command::Predict { .. } => base(None, None, None, None, None)?,
        Command::Test {
            forest,
            permutations,
            alpha,
            ..
        } => base(Some(forest), *permutations, *alpha, None, None)?,
        Command::Vimp { forest, .. } => base(Some(forest), None, None, None, None)?,
        Command::Simulate {
            forest,
            permutations,
            alpha,
            reps,
            out_dir,
            ..
        } => base(Some(forest), *permutations, *alpha, *reps, out_dir.clone())?,
    };
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::new(Kind::Other, e.to_string()))?;
    }
    let out_dir = || {
        cfg.out_dir.clone().ok_or_else(|| {
            Failure::new(
                Kind::Usage,
                "an output directory is required (--out-dir or out_dir in the config)",
            )
        })
    };

    match cli.command {
        Command::Fit { data, .. } => {
            commands::fit(&cfg, &data.x, &data.y, &data.categorical, &out_dir()?)
        }
        Command::Predict { model, x, out } => commands::predict(&model, &x, &out),
        Command::Test {
            data, control, out, ..
        } => commands::test(
            &cfg,
            &data.x,
            &data.y,
            &data.categorical,
            &control,
            out.as_deref(),
        ),
        Command::Vimp {
            model,
            x,
            y,
            categorical,
            out,
            ..
        } => {
            let source = match (model, x, y) {
                (Some(m), None, None) => commands::VimpSource::Model(m),
                (None, Some(x), Some(y)) => commands::VimpSource::Data { x, y, categorical },
                _ => {
                    return Err(Failure::new(
                        Kind::Usage,
                        "give either --model or both --x and --y",
                    ))
                }
            };
            commands::vimp(&cfg, source, out.as_deref())
        }
        Command::Simulate {
            dgp,
            scenario,
            experiment,
            ntrain,
            ntest,
            p,
            q,
            ..
        } => {
            let job = match (dgp, scenario) {
                (_, Some(s)) => commands::SimJob::Significance(
                    s.parse()
                        .map_err(|e: covrf::Error| Failure::new(Kind::Usage, e.to_string()))?,
                ),
                (Some(d), None) => commands::SimJob::Dgp {
                    dgp: covrf::simlab::Dgp::from_number(d)?,
                    experiment: match experiment {
                        Experiment::Accuracy => commands::DgpExperiment::Accuracy,
                        Experiment::Nodesize => commands::DgpExperiment::Nodesize,
                        Experiment::Vimp => commands::DgpExperiment::Vimp,
                    },
                    p,
                    q,
                },
                (None, None) => return Err(Failure::new(Kind::Usage, "give --dgp or --scenario")),
            };
            commands::simulate(&cfg, job, &ntrain, ntest, &out_dir()?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.kind.exit_code() as u8)
        }
    }
}
