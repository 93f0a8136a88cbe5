//! Label-conditional conformal transducer and predictor.
//!
//! For a training sequence, a test object `x` and a candidate label `y`, the
//! p-value ranks the test observation's conformity score among the scores of
//! the observations labelled `y` in `training ++ [(x, y)]`, splitting ties
//! with a uniform random `tau`.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformity::{ConformityMeasure, ExtendedScorer};
use crate::dataset::{Dataset, LabelId};
use crate::error::{Error, Result};
use crate::rng;

/// Seeded source of tie-breaking uniforms addressed by
/// `(object index, label index)`.
///
/// Each draw is read from a fixed position of a ChaCha8 stream, so the value
/// depends only on the seed, the namespace and the address, never on the
/// order in which draws are requested. Values lie in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauSource {
    seed: u64,
    namespace: u64,
}

impl TauSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, namespace: 0 }
    }

    /// An independent source sharing the seed.
    pub fn namespace(self, namespace: u64) -> Self {
        Self { namespace, ..self }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw(&self, index: u64, label: LabelId) -> f64 {
        let label = u32::try_from(label).expect("label index exceeds u32");
        let mut gen: ChaCha8Rng = rng::seeded(self.seed);
        gen.set_stream(self.namespace);
        // Two 32-bit words per draw.
        gen.set_word_pos((((index as u128) << 32) | label as u128) * 2);
        rng::open_unit(&mut gen)
    }
}

/// One p-value per label, each in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PValueSystem(Vec<f64>);

impl PValueSystem {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("p-value system needs at least one label".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::out_of_range("p-value", v, "(0, 1]"));
        }
        Ok(Self(values))
    }

    pub fn get(&self, label: LabelId) -> Option<f64> {
        self.0.get(label).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Smoothed label-conditional p-value of the observation at `target_index`:
///
/// `(#{i: y_i = y, a_i < a_t} + tau * #{i: y_i = y, a_i = a_t}) / #{i: y_i = y}`
///
/// where the counts run over the whole sequence, target included. Scores are
/// compared exactly.
pub fn label_conditional_pvalue(
    scores: &[f64],
    labels: &[LabelId],
    target_index: usize,
    y: LabelId,
    tau: f64,
) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if target_index >= scores.len() {
        return Err(Error::out_of_range(
            "target index",
            target_index,
            format!("< {}", scores.len()),
        ));
    }
    if labels[target_index] != y {
        return Err(Error::InvalidArgument(format!(
            "target observation has label {} but p-value requested for label {y}",
            labels[target_index]
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::out_of_range("tau", tau, "[0, 1]"));
    }
    let target = scores[target_index];
    let (mut below, mut ties, mut total) = (0usize, 0usize, 0usize);
    for (&a, &l) in scores.iter().zip(labels) {
        if l != y {
            continue;
        }
        total += 1;
        if a < target {
            below += 1;
        } else if a == target {
            ties += 1;
        }
    }
    Ok((below as f64 + tau * ties as f64) / total as f64)
}

/// The conformal transducer for a fixed training sequence and conformity
/// measure.
pub struct Transducer<'a> {
    scorer: Box<dyn ExtendedScorer + 'a>,
    labels: Vec<LabelId>,
    n_labels: usize,
    dimension: usize,
}

impl<'a> Transducer<'a> {
    pub fn new<M: ConformityMeasure + ?Sized>(training: &'a Dataset, measure: &'a M) -> Result<Self> {
        let scorer = measure.extend(training.observations())?;
        let mut labels: Vec<LabelId> = training.labels().collect();
        labels.push(0);
        Ok(Self {
            scorer,
            labels,
            n_labels: training.label_count(),
            dimension: training.dimension(),
        })
    }

    pub fn label_count(&self) -> usize {
        self.n_labels
    }

    /// p-values of test object `x` for every label, with `tau` drawn from
    /// `taus` at `(address, y)`.
    pub fn pvalues(&self, x: &[f64], taus: &TauSource, address: u64) -> Result<PValueSystem> {
        if x.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                found: x.len(),
            });
        }
        let all = self.scorer.extended_scores(x, self.n_labels)?;
        let target = self.labels.len() - 1;
        let mut labels = self.labels.clone();
        let values = all
            .iter()
            .enumerate()
            .map(|(y, scores)| {
                labels[target] = y;
                label_conditional_pvalue(scores, &labels, target, y, taus.draw(address, y))
            })
            .collect::<Result<Vec<f64>>>()?;
        PValueSystem::new(values)
    }

    /// p-values for each object in turn; object `i` uses address `i`.
    pub fn pvalues_batch<X: AsRef<[f64]> + Sync>(
        &self,
        objects: &[X],
        taus: &TauSource,
    ) -> Result<Vec<PValueSystem>> {
        objects
            .par_iter()
            .enumerate()
            .map(|(i, x)| self.pvalues(x.as_ref(), taus, i as u64))
            .collect()
    }
}

/// Convenience wrapper building a one-off [`Transducer`].
pub fn pvalue_system<M: ConformityMeasure + ?Sized>(
    training: &Dataset,
    x: &[f64],
    measure: &M,
    taus: &TauSource,
    address: u64,
) -> Result<PValueSystem> {
    Transducer::new(training, measure)?.pvalues(x, taus, address)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::out_of_range("significance level", epsilon, "(0, 1)"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub epsilon: f64,
    /// Labels in increasing order.
    pub labels: Vec<LabelId>,
}

impl PredictionSet {
    pub fn contains(&self, y: LabelId) -> bool {
        self.labels.binary_search(&y).is_ok()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labels whose p-value exceeds `epsilon`.
pub fn prediction_set(p: &PValueSystem, epsilon: f64) -> Result<PredictionSet> {
    check_epsilon(epsilon)?;
    Ok(PredictionSet {
        epsilon,
        labels: p
            .values()
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v > epsilon)
            .map(|(y, _)| y)
            .collect(),
    })
}

/// Efficiency criteria of one prediction; smaller is better for all four.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Criteria {
    /// Sum of p-values.
    #[serde(rename = "S")]
    pub s: f64,
    /// Prediction set size.
    #[serde(rename = "N")]
    pub n: f64,
    /// Observed fuzziness: sum of false-label p-values.
    #[serde(rename = "OF")]
    pub of: f64,
    /// Observed excess: false labels in the prediction set.
    #[serde(rename = "OE")]
    pub oe: f64,
}

pub fn criteria(p: &PValueSystem, true_label: LabelId, epsilon: f64) -> Result<Criteria> {
    check_epsilon(epsilon)?;
    let p_true = p
        .get(true_label)
        .ok_or_else(|| Error::out_of_range("true label", true_label, format!("< {}", p.len())))?;
    let set = prediction_set(p, epsilon)?;
    let s: f64 = p.values().iter().sum();
    let of: f64 = p
        .values()
        .iter()
        .enumerate()
        .filter(|&(y, _)| y != true_label)
        .map(|(_, v)| v)
        .sum();
    let n = set.len();
    let oe = n - usize::from(p_true > epsilon);
    Ok(Criteria {
        s,
        n: n as f64,
        of,
        oe: oe as f64,
    })
}

/// Arithmetic mean of each criterion.
pub fn aggregate_criteria(records: &[Criteria]) -> Result<Criteria> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no criteria records to aggregate".into()));
    }
    let k = records.len() as f64;
    let sum = records.iter().fold(Criteria::default(), |acc, c| Criteria {
        s: acc.s + c.s,
        n: acc.n + c.n,
        of: acc.of + c.of,
        oe: acc.oe + c.oe,
    });
    Ok(Criteria {
        s: sum.s / k,
        n: sum.n / k,
        of: sum.of / k,
        oe: sum.oe / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformity::NnRatio;
    use crate::dataset::{LabelSpace, Observation};

    #[test]
    fn full_tie_gives_tau() {
        let p = label_conditional_pvalue(&[2.0; 5], &[0; 5], 4, 0, 0.3).unwrap();
        assert!((p - 0.3).abs() < 1e-15);
    }

    #[test]
    fn hand_counted_example() {
        // labels [a,a,b,a], scores [3,1,5,2], target is the last a.
        let p = label_conditional_pvalue(&[3.0, 1.0, 5.0, 2.0], &[0, 0, 1, 0], 3, 0, 0.5).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn strictly_largest_with_tau_one() {
        let p = label_conditional_pvalue(&[1.0, 2.0, 9.0], &[0, 0, 0], 2, 0, 1.0).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn pvalue_argument_errors() {
        assert!(label_conditional_pvalue(&[1.0], &[0], 1, 0, 0.5).is_err());
        assert!(label_conditional_pvalue(&[1.0], &[0], 0, 1, 0.5).is_err());
        assert!(label_conditional_pvalue(&[1.0], &[0, 0], 0, 0, 0.5).is_err());
        assert!(label_conditional_pvalue(&[1.0], &[0], 0, 0, 1.5).is_err());
    }

    #[test]
    fn tau_source_is_addressed() {
        let t = TauSource::new(7);
        let a = t.draw(3, 1);
        assert_eq!(a, TauSource::new(7).draw(3, 1));
        assert_ne!(a, t.draw(3, 2));
        assert_ne!(a, t.draw(4, 1));
        assert_ne!(a, t.namespace(1).draw(3, 1));
        assert_ne!(a, TauSource::new(8).draw(3, 1));
        for i in 0..200 {
            let v = t.draw(i, (i % 3) as usize);
            assert!(v > 0.0 && v < 1.0);
        }
    }

    fn two_labels() -> LabelSpace {
        LabelSpace::numbered(2).unwrap()
    }

    #[test]
    fn empty_training_gives_tau_per_label() {
        let train = Dataset::new(1, two_labels(), vec![]).unwrap();
        let taus = TauSource::new(1);
        let p = pvalue_system(&train, &[0.5], &NnRatio::default(), &taus, 4).unwrap();
        assert_eq!(p.values(), &[taus.draw(4, 0), taus.draw(4, 1)]);
    }

    #[test]
    fn single_twin_training_gives_tau() {
        let train =
            Dataset::new(1, two_labels(), vec![Observation::new(vec![2.0], 1)]).unwrap();
        let taus = TauSource::new(2);
        let p = pvalue_system(&train, &[2.0], &NnRatio::default(), &taus, 0).unwrap();
        assert_eq!(p.get(1).unwrap(), taus.draw(0, 1));
    }

    #[test]
    fn prediction_set_threshold() {
        let p = PValueSystem::new(vec![0.9, 0.04]).unwrap();
        assert_eq!(prediction_set(&p, 0.05).unwrap().labels, vec![0]);
        assert_eq!(prediction_set(&p, 0.039).unwrap().labels, vec![0, 1]);
        assert!(prediction_set(&p, 0.0).is_err());
        assert!(prediction_set(&p, 1.0).is_err());
    }

    #[test]
    fn criteria_examples() {
        let p = PValueSystem::new(vec![0.9, 0.04]).unwrap();
        let c = criteria(&p, 0, 0.05).unwrap();
        assert!((c.s - 0.94).abs() < 1e-15);
        assert_eq!(c.n, 1.0);
        assert_eq!(c.of, 0.04);
        assert_eq!(c.oe, 0.0);

        let ones = PValueSystem::new(vec![1.0; 10]).unwrap();
        let c = criteria(&ones, 6, 0.5).unwrap();
        assert_eq!((c.s, c.n, c.of, c.oe), (10.0, 10.0, 9.0, 9.0));

        assert!(criteria(&p, 2, 0.05).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = Criteria { s: 1.0, n: 1.0, of: 0.5, oe: 0.0 };
        let b = Criteria { s: 3.0, n: 2.0, of: 1.5, oe: 1.0 };
        assert_eq!(aggregate_criteria(&[a]).unwrap(), a);
        let m = aggregate_criteria(&[a, b]).unwrap();
        assert_eq!((m.s, m.n, m.of, m.oe), (2.0, 1.5, 1.0, 0.5));
        assert!(aggregate_criteria(&[]).is_err());
    }

    #[test]
    fn pvalue_system_validation() {
        assert!(PValueSystem::new(vec![]).is_err());
        assert!(PValueSystem::new(vec![0.0]).is_err());
        assert!(PValueSystem::new(vec![1.2]).is_err());
    }
}
