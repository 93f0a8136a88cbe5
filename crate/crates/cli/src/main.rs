use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cprob::{DataFormat, ExperimentConfig, VerifyConfig};
use cprob_core::DRule;

#[derive(Parser)]
#[command(name = "cprob", version, about = "Conformal-type probabilistic prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the data, calibrate, predict and report losses.
    Run {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Also write the predictions, for use with `metrics`.
        #[arg(long, env = "CPROB_PREDICTIONS_OUT")]
        predictions_out: Option<PathBuf>,
    },
    /// Print the raw p-value matrix of the test objects.
    Pvalues {
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
    /// Check optimality of the conditional-probability measure on random finite spaces.
    VerifyTheorem1 {
        #[arg(long, default_value_t = 3, env = "CPROB_OBJECTS")]
        objects: usize,
        #[arg(long, default_value_t = 2, env = "CPROB_LABELS")]
        labels: usize,
        /// Number of random distributions to test.
        #[arg(long, default_value_t = 20, env = "CPROB_SPACES")]
        spaces: usize,
        /// Random challengers per distribution.
        #[arg(long, default_value_t = 500, env = "CPROB_TRIALS")]
        trials: usize,
        #[arg(long, default_value_t = 0, env = "CPROB_SEED")]
        seed: u64,
        #[arg(long, default_value_t = 0.01, env = "CPROB_MIN_PROB")]
        min_prob: f64,
        #[arg(long = "epsilon", value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.5])]
        epsilons: Vec<f64>,
        /// Use the uniform distribution instead of random ones.
        #[arg(long)]
        uniform: bool,
        #[arg(long, env = "CPROB_OUT")]
        out: Option<PathBuf>,
    },
    /// Score a predictions file written by `run --predictions-out`.
    Metrics {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, env = "CPROB_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Data file; repeat to concatenate (e.g. USPS train and test files).
    #[arg(long, required = true, env = "CPROB_DATA", value_delimiter = ',')]
    data: Vec<PathBuf>,
    #[arg(long, default_value = "csv", env = "CPROB_FORMAT")]
    format: DataFormat,
    /// CSV files start with a header line.
    #[arg(long, env = "CPROB_HEADER")]
    header: bool,
    #[arg(long, env = "CPROB_TRAIN_SIZE")]
    train_size: usize,
    #[arg(long, default_value_t = 0, env = "CPROB_SEED")]
    seed: u64,
    #[arg(long, default_value = "euclidean", env = "CPROB_DISTANCE")]
    distance: String,
    /// Neighbours summed in the ratio conformity measure.
    #[arg(long = "k", default_value_t = 1, env = "CPROB_K")]
    neighbours: usize,
    #[arg(long, default_value = "grenander", env = "CPROB_D_RULE")]
    d_rule: DRule,
    #[arg(long = "epsilon", value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1, 0.2])]
    epsilons: Vec<f64>,
    /// Separate unlabelled calibration objects; defaults to the test objects.
    #[arg(long, env = "CPROB_CALIBRATION")]
    calibration: Option<PathBuf>,
    #[arg(long, env = "CPROB_OUT")]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn split(self) -> (ExperimentConfig, Option<PathBuf>) {
        let config = ExperimentConfig {
            data: self.data,
            format: self.format,
            header: self.header,
            train_size: self.train_size,
            seed: self.seed,
            distance: self.distance,
            neighbours: self.neighbours,
            d_rule: self.d_rule,
            epsilons: self.epsilons,
            calibration: self.calibration,
        };
        (config, self.out)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { experiment, predictions_out } => {
            let (config, out) = experiment.split();
            let output = cprob::cmd_run(&config)?;
            if let Some(path) = predictions_out {
                cprob::write_output(&serde_json::to_value(&output.predictions)?, Some(&path))?;
            }
            cprob::write_output(&output.report, out.as_deref())?;
        }
        Command::Pvalues { experiment } => {
            let (config, out) = experiment.split();
            cprob::write_output(&cprob::cmd_pvalues(&config)?, out.as_deref())?;
        }
        Command::VerifyTheorem1 { objects, labels, spaces, trials, seed, min_prob, epsilons, uniform, out } => {
            let config = VerifyConfig { objects, labels, spaces, trials, seed, min_prob, epsilons, uniform };
            let output = cprob::cmd_verify_theorem1(&config)?;
            cprob::write_output(&output.report, out.as_deref())?;
            if !output.passed {
                eprintln!("error: a challenger beat the conditional-probability measure");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Metrics { predictions, out } => {
            cprob::write_output(&cprob::cmd_metrics(&predictions)?, out.as_deref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
