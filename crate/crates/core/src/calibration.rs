//! Conformal-type probabilistic prediction.
//!
//! For each label `y` the transducer's p-values on an unlabelled calibration
//! sequence are summarised by a Grenander density `g_y`. A test object's
//! p-value `p` for `y` is then mapped to `D_y / g_y(p)`, which is
//! non-decreasing in `p`, and the results are normalised over labels.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformity::ConformityMeasure;
use crate::dataset::{Dataset, LabelId};
use crate::error::{Error, Result};
use crate::grenander::{self, AntitonicDensity};
use crate::transducer::{PValueSystem, TauSource, Transducer};

/// Tau namespace for calibration objects.
pub const CALIBRATION_NAMESPACE: u64 = 1;
/// Tau namespace for test objects.
pub const TEST_NAMESPACE: u64 = 2;

/// How the numerator `D_y` of the calibration function is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DRule {
    /// `D_y = g_y(1)`, so a p-value of 1 calibrates to 1.
    Grenander,
    /// `D_y` = fraction of training observations labelled `y`.
    LabelFrequency,
}

impl fmt::Display for DRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DRule::Grenander => "grenander",
            DRule::LabelFrequency => "label-frequency",
        })
    }
}

impl std::str::FromStr for DRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grenander" => Ok(DRule::Grenander),
            "label-frequency" => Ok(DRule::LabelFrequency),
            other => Err(Error::InvalidArgument(format!(
                "unknown D-rule {other:?} (expected grenander or label-frequency)"
            ))),
        }
    }
}

/// Fitted calibration for one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCalibration {
    pub density: AntitonicDensity,
    #[serde(rename = "D")]
    pub d: f64,
    /// Rule that actually produced `d`; differs from the requested rule when
    /// `g_y(1) = 0` forced the label-frequency fallback.
    pub rule: DRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    labels: Vec<LabelCalibration>,
    requested_rule: DRule,
    calibration_size: usize,
    floor: f64,
}

impl CalibrationModel {
    pub fn labels(&self) -> &[LabelCalibration] {
        &self.labels
    }

    pub fn label(&self, y: LabelId) -> Option<&LabelCalibration> {
        self.labels.get(y)
    }

    pub fn requested_rule(&self) -> DRule {
        self.requested_rule
    }

    pub fn calibration_size(&self) -> usize {
        self.calibration_size
    }

    /// Lower bound applied to `g_y(p)` before dividing.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Unnormalised probability `D_y / max(g_y(p), floor)`.
    pub fn calibrate(&self, y: LabelId, p: f64) -> Result<f64> {
        let cal = self
            .labels
            .get(y)
            .ok_or_else(|| Error::out_of_range("label", y, format!("< {}", self.labels.len())))?;
        let g = cal.density.evaluate(p)?;
        Ok(cal.d / g.max(self.floor))
    }

    /// JSON export keyed by label name.
    pub fn to_json(&self, names: &[String]) -> serde_json::Value {
        let labels: serde_json::Map<String, serde_json::Value> = self
            .labels
            .iter()
            .enumerate()
            .map(|(y, c)| {
                let key = names.get(y).cloned().unwrap_or_else(|| y.to_string());
                (
                    key,
                    serde_json::json!({
                        "breakpoints": c.density.breakpoints(),
                        "levels": c.density.levels(),
                        "D": c.d,
                        "rule": c.rule,
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "requested_rule": self.requested_rule,
            "calibration_size": self.calibration_size,
            "floor": self.floor,
            "labels": labels,
        })
    }
}

/// Probability measure on the label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilisticPrediction(Vec<f64>);

impl ProbabilisticPrediction {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidArgument("prediction needs at least one label".into()));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probabilities))
    }

    /// Normalises non-negative weights.
    pub fn normalize(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::DegeneratePrediction);
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegeneratePrediction);
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::normalize(&vec![1.0; n])
    }

    pub fn get(&self, y: LabelId) -> Option<f64> {
        self.0.get(y).copied()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable label (lowest index on ties).
    pub fn argmax(&self) -> LabelId {
        let mut best = 0;
        for (y, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = y;
            }
        }
        best
    }
}

/// A prediction together with the quantities it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPrediction {
    pub pvalues: PValueSystem,
    /// `D_y / max(g_y(p_y), floor)` before normalisation.
    pub unnormalized: Vec<f64>,
    pub prediction: ProbabilisticPrediction,
}

impl CalibratedPrediction {
    pub fn unnormalized_sum(&self) -> f64 {
        self.unnormalized.iter().sum()
    }
}

/// Builds the per-label calibration from the p-values of the calibration
/// objects. Labels of those objects are never consulted.
pub fn build_model<X, M>(
    training: &Dataset,
    calibration_objects: &[X],
    measure: &M,
    taus: &TauSource,
    rule: DRule,
) -> Result<CalibrationModel>
where
    X: AsRef<[f64]> + Sync,
    M: ConformityMeasure + ?Sized,
{
    let transducer = Transducer::new(training, measure)?;
    build_model_with(&transducer, training, calibration_objects, taus, rule)
}

/// As [`build_model`], reusing an existing transducer over `training`.
pub fn build_model_with<X: AsRef<[f64]> + Sync>(
    transducer: &Transducer<'_>,
    training: &Dataset,
    calibration_objects: &[X],
    taus: &TauSource,
    rule: DRule,
) -> Result<CalibrationModel> {
    if calibration_objects.is_empty() {
        return Err(Error::EmptyInput("calibration sequence is empty".into()));
    }
    let n_labels = transducer.label_count();
    let cal_taus = taus.namespace(CALIBRATION_NAMESPACE);
    let systems = transducer.pvalues_batch(calibration_objects, &cal_taus)?;

    let samples: Vec<Vec<f64>> = (0..n_labels)
        .map(|y| systems.iter().map(|p| p.values()[y]).collect())
        .collect();
    CalibrationModel::from_pvalues(&samples, &label_frequencies(training), rule)
}

/// Fraction of `training` carrying each label. A label absent from the
/// training sequence gets `1 / (l + 1)`, as if the test object carried it.
pub fn label_frequencies(training: &Dataset) -> Vec<f64> {
    let l = training.len();
    training
        .label_counts()
        .into_iter()
        .map(|c| {
            if c > 0 {
                c as f64 / l as f64
            } else {
                1.0 / (l + 1) as f64
            }
        })
        .collect()
}

impl CalibrationModel {
    /// Fits one density per label to that label's calibration p-values.
    /// All labels need the same, non-zero number of samples.
    pub fn from_pvalues(
        samples: &[Vec<f64>],
        label_frequencies: &[f64],
        rule: DRule,
    ) -> Result<Self> {
        if samples.len() != label_frequencies.len() {
            return Err(Error::Dimension {
                expected: samples.len(),
                found: label_frequencies.len(),
            });
        }
        let k = samples.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::EmptyInput("calibration sequence is empty".into()));
        }
        if samples.iter().any(|s| s.len() != k) {
            return Err(Error::InvalidArgument(
                "every label needs one p-value per calibration object".into(),
            ));
        }
        if let Some(f) = label_frequencies.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::out_of_range("label frequency", f, "(0, 1]"));
        }
        let labels = samples
            .par_iter()
            .zip(label_frequencies)
            .map(|(s, &frequency)| {
                let density = grenander::fit(s)?;
                let at_one = density.value_at(1.0);
                let (d, used) = match rule {
                    DRule::Grenander if at_one > 0.0 => (at_one, DRule::Grenander),
                    _ => (frequency, DRule::LabelFrequency),
                };
                Ok(LabelCalibration {
                    density,
                    d,
                    rule: used,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labels,
            requested_rule: rule,
            calibration_size: k,
            floor: 1.0 / (10.0 * k as f64),
        })
    }
}

/// Calibrates an existing p-value system.
pub fn calibrate_pvalues(model: &CalibrationModel, pvalues: PValueSystem) -> Result<CalibratedPrediction> {
    if pvalues.len() != model.labels.len() {
        return Err(Error::Dimension {
            expected: model.labels.len(),
            found: pvalues.len(),
        });
    }
    let unnormalized = pvalues
        .values()
        .iter()
        .enumerate()
        .map(|(y, &p)| model.calibrate(y, p))
        .collect::<Result<Vec<f64>>>()?;
    let prediction = ProbabilisticPrediction::normalize(&unnormalized)?;
    Ok(CalibratedPrediction {
        pvalues,
        unnormalized,
        prediction,
    })
}

/// Probabilistic prediction for test object `x0` at tau address `address`.
pub fn predict<M: ConformityMeasure + ?Sized>(
    model: &CalibrationModel,
    training: &Dataset,
    x0: &[f64],
    measure: &M,
    taus: &TauSource,
    address: u64,
) -> Result<CalibratedPrediction> {
    let transducer = Transducer::new(training, measure)?;
    let p = transducer.pvalues(x0, &taus.namespace(TEST_NAMESPACE), address)?;
    calibrate_pvalues(model, p)
}

/// Element-wise [`predict`]; object `i` uses tau address `i`.
pub fn predict_batch<X, M>(
    model: &CalibrationModel,
    training: &Dataset,
    objects: &[X],
    measure: &M,
    taus: &TauSource,
) -> Result<Vec<CalibratedPrediction>>
where
    X: AsRef<[f64]> + Sync,
    M: ConformityMeasure + ?Sized,
{
    let transducer = Transducer::new(training, measure)?;
    predict_batch_with(model, &transducer, objects, taus)
}

pub fn predict_batch_with<X: AsRef<[f64]> + Sync>(
    model: &CalibrationModel,
    transducer: &Transducer<'_>,
    objects: &[X],
    taus: &TauSource,
) -> Result<Vec<CalibratedPrediction>> {
    let systems = transducer.pvalues_batch(objects, &taus.namespace(TEST_NAMESPACE))?;
    systems
        .into_par_iter()
        .map(|p| calibrate_pvalues(model, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformity::NnRatio;
    use crate::dataset::{LabelSpace, Observation};

    fn model_with(labels: Vec<LabelCalibration>, k: usize) -> CalibrationModel {
        CalibrationModel {
            labels,
            requested_rule: DRule::Grenander,
            calibration_size: k,
            floor: 1.0 / (10.0 * k as f64),
        }
    }

    fn uniform_label() -> LabelCalibration {
        LabelCalibration {
            density: AntitonicDensity::uniform(),
            d: 1.0,
            rule: DRule::Grenander,
        }
    }

    #[test]
    fn uniform_densities_give_uniform_prediction() {
        let m = model_with(vec![uniform_label(); 4], 10);
        let p = PValueSystem::new(vec![0.1, 0.5, 0.7, 1.0]).unwrap();
        let c = calibrate_pvalues(&m, p).unwrap();
        assert_eq!(c.unnormalized, vec![1.0; 4]);
        assert_eq!(c.prediction.probabilities(), &[0.25; 4]);
    }

    #[test]
    fn normalization() {
        let p = ProbabilisticPrediction::normalize(&[0.2, 0.2]).unwrap();
        assert_eq!(p.probabilities(), &[0.5, 0.5]);
        assert!(matches!(
            ProbabilisticPrediction::normalize(&[0.0, 0.0]),
            Err(Error::DegeneratePrediction)
        ));
        assert!(ProbabilisticPrediction::normalize(&[f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn floor_bounds_ratio() {
        let g = grenander::fit(&[0.5]).unwrap(); // level 0 above 0.5
        let m = model_with(
            vec![LabelCalibration {
                density: g,
                d: 0.5,
                rule: DRule::LabelFrequency,
            }],
            4,
        );
        assert_eq!(m.calibrate(0, 0.9).unwrap(), 0.5 / m.floor());
        assert_eq!(m.calibrate(0, 0.2).unwrap(), 0.25);
    }

    fn line_data() -> Dataset {
        let obs = (0..12)
            .map(|i| Observation::new(vec![i as f64 + if i % 2 == 0 { 0.0 } else { 20.0 }], i % 2))
            .collect();
        Dataset::new(1, LabelSpace::numbered(2).unwrap(), obs).unwrap()
    }

    #[test]
    fn single_calibration_pvalue_of_one() {
        let m = CalibrationModel::from_pvalues(&[vec![1.0]], &[0.3], DRule::Grenander).unwrap();
        let c = m.label(0).unwrap();
        assert_eq!(c.density, AntitonicDensity::uniform());
        assert_eq!(c.d, 1.0);
        assert_eq!(c.rule, DRule::Grenander);
        assert_eq!(m.floor(), 0.1);
    }

    #[test]
    fn from_pvalues_validation() {
        assert!(CalibrationModel::from_pvalues(&[vec![]], &[0.5], DRule::Grenander).is_err());
        assert!(CalibrationModel::from_pvalues(&[vec![0.5], vec![0.2, 0.3]], &[0.5, 0.5], DRule::Grenander).is_err());
        assert!(CalibrationModel::from_pvalues(&[vec![0.5]], &[0.0], DRule::Grenander).is_err());
        assert!(CalibrationModel::from_pvalues(&[vec![0.5]], &[0.5, 0.5], DRule::Grenander).is_err());
    }

    #[test]
    fn label_frequency_rule_is_honoured() {
        let m = CalibrationModel::from_pvalues(&[vec![1.0], vec![0.4]], &[0.25, 0.75], DRule::LabelFrequency).unwrap();
        assert_eq!(m.label(0).unwrap().d, 0.25);
        assert_eq!(m.label(1).unwrap().d, 0.75);
        assert!(m.labels().iter().all(|c| c.rule == DRule::LabelFrequency));
    }

    #[test]
    fn grenander_rule_falls_back_when_density_vanishes_at_one() {
        let train = line_data();
        let objs: Vec<[f64; 1]> = (0..5).map(|i| [i as f64 * 0.5]).collect();
        let m = build_model(&train, &objs, &NnRatio::default(), &TauSource::new(3), DRule::Grenander)
            .unwrap();
        for c in m.labels() {
            if c.density.value_at(1.0) == 0.0 {
                assert_eq!(c.rule, DRule::LabelFrequency);
                assert_eq!(c.d, 0.5);
            } else {
                assert_eq!(c.rule, DRule::Grenander);
                assert_eq!(c.d, c.density.value_at(1.0));
            }
        }
    }

    #[test]
    fn empty_calibration_is_an_error() {
        let train = line_data();
        let none: Vec<[f64; 1]> = vec![];
        assert!(matches!(
            build_model(&train, &none, &NnRatio::default(), &TauSource::new(0), DRule::Grenander),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn batch_matches_single_and_handles_empty() {
        let train = line_data();
        let objs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 3.1]).collect();
        let taus = TauSource::new(11);
        let nn = NnRatio::default();
        let m = build_model(&train, &objs, &nn, &taus, DRule::Grenander).unwrap();
        let batch = predict_batch(&m, &train, &objs, &nn, &taus).unwrap();
        assert_eq!(batch.len(), objs.len());
        for (i, x) in objs.iter().enumerate() {
            assert_eq!(batch[i], predict(&m, &train, x, &nn, &taus, i as u64).unwrap());
        }
        let none: Vec<Vec<f64>> = vec![];
        assert!(predict_batch(&m, &train, &none, &nn, &taus).unwrap().is_empty());
    }

    #[test]
    fn d_rule_parsing() {
        assert_eq!("grenander".parse::<DRule>().unwrap(), DRule::Grenander);
        assert_eq!("label-frequency".parse::<DRule>().unwrap(), DRule::LabelFrequency);
        assert!("platt".parse::<DRule>().is_err());
        assert_eq!(DRule::LabelFrequency.to_string(), "label-frequency");
    }
}
