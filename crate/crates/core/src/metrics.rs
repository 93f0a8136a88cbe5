//! Log loss and Brier loss of probabilistic predictions, in nats.

use serde::{Deserialize, Serialize};

use crate::calibration::ProbabilisticPrediction;
use crate::dataset::LabelId;
use crate::error::{Error, Result};

fn prob_of(p: &ProbabilisticPrediction, y: LabelId) -> Result<f64> {
    p.get(y)
        .ok_or_else(|| Error::out_of_range("label", y, format!("< {}", p.len())))
}

/// `-ln P({y})`. A zero probability is an error, not an infinity.
pub fn log_loss(p: &ProbabilisticPrediction, y: LabelId) -> Result<f64> {
    let py = prob_of(p, y)?;
    if py <= 0.0 {
        return Err(Error::InfiniteLoss { label: y });
    }
    Ok(-py.ln())
}

/// `sum_y' (1{y' = y} - P({y'}))^2`.
pub fn brier_loss(p: &ProbabilisticPrediction, y: LabelId) -> Result<f64> {
    prob_of(p, y)?;
    Ok(p.probabilities()
        .iter()
        .enumerate()
        .map(|(l, &q)| {
            let hit = if l == y { 1.0 } else { 0.0 };
            (hit - q) * (hit - q)
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean log loss; `None` when some true label got probability 0.
    pub average_log_loss: Option<f64>,
    pub standardized_brier_loss: f64,
    pub count: usize,
    /// Positions whose true label had probability 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub infinite_log_loss: Vec<usize>,
}

/// Average log loss and standardized Brier loss
/// `sqrt(sum_i brier_i / (k |Y|))` over a test sequence.
pub fn report(
    predictions: &[ProbabilisticPrediction],
    true_labels: &[LabelId],
    label_count: usize,
) -> Result<LossReport> {
    if predictions.len() != true_labels.len() {
        return Err(Error::Dimension {
            expected: predictions.len(),
            found: true_labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    if let Some(p) = predictions.iter().find(|p| p.len() != label_count) {
        return Err(Error::Dimension {
            expected: label_count,
            found: p.len(),
        });
    }
    let k = predictions.len();
    let mut log_sum = 0.0;
    let mut brier_sum = 0.0;
    let mut infinite = Vec::new();
    for (i, (p, &y)) in predictions.iter().zip(true_labels).enumerate() {
        match log_loss(p, y) {
            Ok(v) => log_sum += v,
            Err(Error::InfiniteLoss { .. }) => infinite.push(i),
            Err(e) => return Err(e),
        }
        brier_sum += brier_loss(p, y)?;
    }
    Ok(LossReport {
        average_log_loss: infinite.is_empty().then(|| log_sum / k as f64),
        standardized_brier_loss: (brier_sum / (k * label_count) as f64).sqrt(),
        count: k,
        infinite_log_loss: infinite,
    })
}
