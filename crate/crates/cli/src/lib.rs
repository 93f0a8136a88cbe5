//! Experiment orchestration behind the `cprob` binary.
//!
//! Every command returns a JSON document that depends only on its
//! configuration and input files; nothing time- or host-dependent is
//! recorded.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cprob_core::calibration::{self, CalibratedPrediction, DRule, ProbabilisticPrediction};
use cprob_core::conformity::{distance_by_name, ConformityMeasure, KnnRatio, NnRatio};
use cprob_core::dataset::{self, Dataset};
use cprob_core::idealized::{self, FiniteDistribution, Theorem1Report};
use cprob_core::metrics::{self, LossReport};
use cprob_core::stats::{self, KsTest};
use cprob_core::transducer::{self, Criteria, TauSource, Transducer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Published losses of the conformal-type predictor on USPS with a 1-NN
/// conformity measure over tangent distance. Tangent distance is not
/// implemented here, so these are context for Euclidean runs, not targets.
pub const TANGENT_REFERENCE_LOG_LOSS: f64 = 0.04958;
pub const TANGENT_REFERENCE_BRIER_LOSS: f64 = 0.04359;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Usps,
}

impl std::str::FromStr for DataFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "usps" => Ok(DataFormat::Usps),
            other => bail!("unknown format {other:?} (expected csv or usps)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Input files, concatenated in order.
    pub data: Vec<PathBuf>,
    pub format: DataFormat,
    /// CSV files start with a header line.
    pub header: bool,
    pub train_size: usize,
    pub seed: u64,
    pub distance: String,
    /// Neighbours in the ratio conformity measure; 1 is the nearest-neighbour
    /// measure.
    pub neighbours: usize,
    pub d_rule: DRule,
    pub epsilons: Vec<f64>,
    /// Separate calibration objects; by default the test objects are used.
    pub calibration: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.data.is_empty(), "no data files given");
        ensure!(self.neighbours >= 1, "--k must be at least 1");
        for &e in &self.epsilons {
            ensure!(e > 0.0 && e < 1.0, "epsilon {e} is outside (0, 1)");
        }
        distance_by_name(&self.distance)?;
        Ok(())
    }

    fn measure(&self) -> Result<Box<dyn ConformityMeasure>> {
        let d = distance_by_name(&self.distance)?;
        Ok(if self.neighbours == 1 {
            Box::new(NnRatio::new(d))
        } else {
            Box::new(KnnRatio::new(d, self.neighbours)?)
        })
    }
}

fn load(paths: &[PathBuf], format: DataFormat, header: bool) -> Result<Dataset> {
    let mut out: Option<Dataset> = None;
    for p in paths {
        let d = match format {
            DataFormat::Csv => dataset::load_csv(p, header),
            DataFormat::Usps => dataset::load_usps(p),
        }
        .with_context(|| format!("loading {}", p.display()))?;
        out = Some(match out {
            None => d,
            Some(acc) => acc.concat(d)?,
        });
    }
    out.context("no data files given")
}

/// Loads and splits the data, returning (training, test).
fn prepare(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let all = load(&config.data, config.format, config.header)?;
    ensure!(
        config.train_size <= all.len(),
        "train size {} exceeds the {} available observations",
        config.train_size,
        all.len()
    );
    Ok(dataset::split(&all, config.train_size, config.seed)?)
}

fn calibration_objects(config: &ExperimentConfig, training: &Dataset, test: &Dataset) -> Result<Vec<Vec<f64>>> {
    match &config.calibration {
        None => Ok(test.objects().map(<[f64]>::to_vec).collect()),
        Some(path) => {
            let d = load(std::slice::from_ref(path), config.format, config.header)?;
            ensure!(
                d.dimension() == training.dimension(),
                "calibration objects have dimension {}, training has {}",
                d.dimension(),
                training.dimension()
            );
            Ok(d.objects().map(<[f64]>::to_vec).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumSummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// 5%, 25%, 50%, 75% and 95% empirical quantiles (lower order statistic).
    pub quantiles: Vec<Quantile>,
    /// Share of predictions whose sum is not within 1e-9 of 1.
    pub fraction_not_one: f64,
}

/// Distribution of the pre-normalisation sums over labels.
pub fn summarize_sums(preds: &[CalibratedPrediction]) -> Option<SumSummary> {
    if preds.is_empty() {
        return None;
    }
    let mut sums: Vec<f64> = preds.iter().map(CalibratedPrediction::unnormalized_sum).collect();
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let not_one = sums.iter().filter(|s| (*s - 1.0).abs() > 1e-9).count();
    sums.sort_by(f64::total_cmp);
    let n = sums.len();
    let quantiles = [0.05, 0.25, 0.5, 0.75, 0.95]
        .iter()
        .map(|&level| Quantile {
            level,
            value: sums[((level * n as f64).ceil() as usize).clamp(1, n) - 1],
        })
        .collect();
    Some(SumSummary {
        count: n,
        min: sums[0],
        max: sums[n - 1],
        mean,
        quantiles,
        fraction_not_one: not_one as f64 / n as f64,
    })
}

/// Predictions in the layout read by the `metrics` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub labels: Vec<String>,
    pub predictions: Vec<Vec<f64>>,
    pub true_labels: Vec<usize>,
}

pub struct RunOutput {
    pub report: Value,
    pub predictions: PredictionFile,
}

/// Split, calibrate on the test (or given) objects, predict and score.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunOutput> {
    let (training, test) = prepare(config)?;
    ensure!(!training.is_empty(), "training set is empty");
    ensure!(!test.is_empty(), "test set is empty");
    let measure = config.measure()?;
    let taus = TauSource::new(config.seed);
    let transducer = Transducer::new(&training, measure.as_ref())?;
    let cal_objects = calibration_objects(config, &training, &test)?;
    let model = calibration::build_model_with(&transducer, &training, &cal_objects, &taus, config.d_rule)?;
    let objects: Vec<&[f64]> = test.objects().collect();
    let preds = calibration::predict_batch_with(&model, &transducer, &objects, &taus)?;

    let true_labels: Vec<usize> = test.labels().collect();
    let n_labels = training.label_count();
    let probs: Vec<ProbabilisticPrediction> = preds.iter().map(|c| c.prediction.clone()).collect();
    let loss = metrics::report(&probs, &true_labels, n_labels)?;

    let baseline_pred = ProbabilisticPrediction::normalize(&calibration::label_frequencies(&training))?;
    let baseline = metrics::report(&vec![baseline_pred; probs.len()], &true_labels, n_labels)?;

    let errors = probs
        .iter()
        .zip(&true_labels)
        .filter(|(p, &y)| p.argmax() != y)
        .count();

    let criteria = config
        .epsilons
        .iter()
        .map(|&e| {
            let per: Vec<Criteria> = preds
                .iter()
                .zip(&true_labels)
                .map(|(c, &y)| transducer::criteria(&c.pvalues, y, e))
                .collect::<std::result::Result<_, _>>()?;
            let mean = transducer::aggregate_criteria(&per)?;
            Ok(json!({ "epsilon": e, "S": mean.s, "N": mean.n, "OF": mean.of, "OE": mean.oe }))
        })
        .collect::<Result<Vec<Value>>>()?;

    let names = training.label_space().names().to_vec();
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "run",
        "config": config,
        "data": {
            "dimension": training.dimension(),
            "labels": names,
            "train_size": training.len(),
            "test_size": test.len(),
            "calibration_size": cal_objects.len(),
            "calibration_source": if config.calibration.is_some() { "file" } else { "test" },
        },
        "loss": loss,
        "error_rate": errors as f64 / probs.len() as f64,
        "baseline_label_frequency": baseline,
        "beats_baseline": beats(&loss, &baseline),
        "reference_tangent_distance_1nn": {
            "average_log_loss": TANGENT_REFERENCE_LOG_LOSS,
            "standardized_brier_loss": TANGENT_REFERENCE_BRIER_LOSS,
            "note": "published USPS result with tangent distance; not reproducible with the distances implemented here",
        },
        "criteria": criteria,
        "unnormalized_sums": summarize_sums(&preds),
        "calibration": model.to_json(&names),
    });
    let predictions = PredictionFile {
        labels: names,
        predictions: probs.iter().map(|p| p.probabilities().to_vec()).collect(),
        true_labels,
    };
    Ok(RunOutput { report, predictions })
}

fn beats(loss: &LossReport, baseline: &LossReport) -> bool {
    match (loss.average_log_loss, baseline.average_log_loss) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Raw p-value matrix for the test objects, with per-label KS statistics of
/// the true-label p-values.
pub fn cmd_pvalues(config: &ExperimentConfig) -> Result<Value> {
    let (training, test) = prepare(config)?;
    let measure = config.measure()?;
    let taus = TauSource::new(config.seed).namespace(calibration::TEST_NAMESPACE);
    let transducer = Transducer::new(&training, measure.as_ref())?;
    let objects: Vec<&[f64]> = test.objects().collect();
    let systems = transducer.pvalues_batch(&objects, &taus)?;
    let true_labels: Vec<usize> = test.labels().collect();

    let names = training.label_space().names().to_vec();
    let ks: Vec<Value> = (0..training.label_count())
        .map(|y| {
            let v: Vec<f64> = systems
                .iter()
                .zip(&true_labels)
                .filter(|(_, &l)| l == y)
                .map(|(p, _)| p.values()[y])
                .collect();
            let test: Option<KsTest> = stats::ks_uniform(&v).ok();
            json!({ "label": names[y], "ks": test })
        })
        .collect();
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": "pvalues",
        "labels": names,
        "pvalues": systems,
        "true_labels": true_labels,
        "true_label_uniformity": ks,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub objects: usize,
    pub labels: usize,
    pub spaces: usize,
    pub trials: usize,
    pub seed: u64,
    pub min_prob: f64,
    pub epsilons: Vec<f64>,
    /// Use the uniform distribution instead of random ones.
    pub uniform: bool,
}

impl VerifyConfig {
    pub const MAX_CELLS: usize = 64;

    pub fn validate(&self) -> Result<()> {
        ensure!(self.objects >= 1 && self.labels >= 1, "space must be non-empty");
        ensure!(
            self.objects * self.labels <= Self::MAX_CELLS,
            "space of {}x{} cells exceeds the limit of {}",
            self.objects,
            self.labels,
            Self::MAX_CELLS
        );
        ensure!(self.spaces >= 1, "--spaces must be at least 1");
        ensure!(self.trials >= 1, "--trials must be at least 1");
        ensure!(!self.epsilons.is_empty(), "no epsilon values");
        ensure!(
            self.uniform || (self.min_prob > 0.0 && self.min_prob * ((self.objects * self.labels) as f64) < 1.0),
            "minimum probability {} is infeasible",
            self.min_prob
        );
        Ok(())
    }
}

pub struct VerifyOutput {
    pub report: Value,
    pub passed: bool,
}

/// Theorem-style optimality check of the conditional-probability measure on
/// random finite spaces. Space `i` uses distribution seed `seed + i` and
/// challenger seed `seed + i + 2^32`.
pub fn cmd_verify_theorem1(config: &VerifyConfig) -> Result<VerifyOutput> {
    config.validate()?;
    let mut spaces = Vec::with_capacity(config.spaces);
    let mut reports: Vec<Theorem1Report> = Vec::with_capacity(config.spaces);
    for i in 0..config.spaces as u64 {
        let q = if config.uniform {
            FiniteDistribution::uniform(config.objects, config.labels)?
        } else {
            FiniteDistribution::random(config.objects, config.labels, config.min_prob, config.seed.wrapping_add(i))?
        };
        let r = idealized::verify_theorem1(
            &q,
            config.trials,
            config.seed.wrapping_add(i).wrapping_add(1 << 32),
            &config.epsilons,
        )?;
        spaces.push(json!({ "distribution": q, "report": r }));
        reports.push(r);
    }
    let passed = reports.iter().all(|r| r.passed);
    let worst_margin = reports
        .iter()
        .flat_map(|r| r.criteria.values().map(|m| m.margin))
        .fold(f64::INFINITY, f64::min);
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "verify-theorem1",
        "config": config,
        "passed": passed,
        "worst_margin": worst_margin,
        "max_refinement_deviation": reports.iter().map(|r| r.max_refinement_deviation).fold(0.0, f64::max),
        "max_identity_error": reports.iter().map(|r| r.max_identity_error).fold(0.0, f64::max),
        "spaces": spaces,
    });
    Ok(VerifyOutput { report, passed })
}

/// Scores a prediction file written by `run --predictions-out`.
pub fn cmd_metrics(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: PredictionFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let preds = file
        .predictions
        .into_iter()
        .map(ProbabilisticPrediction::new)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let loss = metrics::report(&preds, &file.true_labels, file.labels.len())?;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": "metrics",
        "loss": loss,
    }))
}

/// Pretty JSON with a trailing newline.
pub fn render(value: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_output(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = render(value)?;
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
