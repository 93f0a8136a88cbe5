//! Invariant checks that count violations instead of panicking, so the same
//! code can back unit-style assertions and summary reporting.

use cprob_core::calibration::ProbabilisticPrediction;
use cprob_core::conformity::ConformityMeasure;
use cprob_core::dataset::{Dataset, Observation};
use cprob_core::rng;
use cprob_core::transducer::{prediction_set, PValueSystem, TauSource, Transducer};

/// Permutations `pi` for which `scores(pi(seq)) != pi(scores(seq))` exactly.
pub fn equivariance_violations<M: ConformityMeasure + ?Sized>(
    measure: &M,
    observations: &[Observation],
    permutations: usize,
    seed: u64,
) -> usize {
    let base = measure.scores(observations).unwrap();
    (0..permutations as u64)
        .filter(|&t| {
            let perm = rng::permutation(observations.len(), seed.wrapping_add(t));
            let shuffled: Vec<Observation> = perm.iter().map(|&i| observations[i].clone()).collect();
            let scores = measure.scores(&shuffled).unwrap();
            perm.iter().enumerate().any(|(j, &i)| scores[j].to_bits() != base[i].to_bits())
        })
        .count()
}

/// Pairs `eps_a < eps_b` from `grid` and systems where the set at `eps_b`
/// is not contained in the set at `eps_a`.
pub fn nestedness_violations(systems: &[PValueSystem], grid: &[f64]) -> usize {
    let mut violations = 0;
    for p in systems {
        for &a in grid {
            for &b in grid.iter().filter(|&&b| b > a) {
                let wide = prediction_set(p, a).unwrap();
                let narrow = prediction_set(p, b).unwrap();
                if !narrow.labels.iter().all(|y| wide.contains(*y)) {
                    violations += 1;
                }
            }
        }
    }
    violations
}

/// Training shuffles that change any p-value of any test object.
pub fn training_permutation_violations<M: ConformityMeasure + ?Sized>(
    measure: &M,
    training: &Dataset,
    objects: &[Vec<f64>],
    taus: &TauSource,
    shuffles: usize,
    seed: u64,
) -> usize {
    let base = Transducer::new(training, measure).unwrap().pvalues_batch(objects, taus).unwrap();
    (0..shuffles as u64)
        .filter(|&t| {
            let perm = rng::permutation(training.len(), seed.wrapping_add(t));
            let shuffled = Dataset::new(
                training.dimension(),
                training.label_space().clone(),
                perm.iter().map(|&i| training.observations()[i].clone()).collect(),
            )
            .unwrap();
            let p = Transducer::new(&shuffled, measure).unwrap().pvalues_batch(objects, taus).unwrap();
            p != base
        })
        .count()
}

/// Predictions that are not probability measures over `label_count` labels.
pub fn probability_violations(predictions: &[ProbabilisticPrediction], label_count: usize) -> usize {
    predictions
        .iter()
        .filter(|p| {
            let v = p.probabilities();
            let total: f64 = v.iter().sum();
            v.len() != label_count
                || v.iter().any(|x| !(x.is_finite() && *x >= 0.0))
                || (total - 1.0).abs() > 1e-12
        })
        .count()
}
