mod support {
    pub mod invariants;
}

use std::sync::Arc;

use cprob_core::calibration::{self, DRule};
use cprob_core::conformity::{nn_ratio_scores, ConformityMeasure, Distance, Euclidean, KnnRatio, Manhattan, NnRatio};
use cprob_core::dataset::{Dataset, LabelSpace, Observation};
use cprob_core::rng;
use cprob_core::synthetic::GaussianClasses;
use cprob_core::transducer::{TauSource, Transducer};
use proptest::prelude::*;
use rand::Rng;
use support::invariants::*;

fn three_classes(n: usize, seed: u64) -> Dataset {
    GaussianClasses::new(
        vec![vec![0.0, 0.0], vec![1.5, 0.0], vec![0.0, 1.5]],
        1.0,
        vec![0.3, 0.3, 0.4],
    )
    .unwrap()
    .sample(n, seed)
}

/// Small integer coordinates: many exact distance and score ties.
fn gridded(n: usize, seed: u64) -> Dataset {
    let mut gen = rng::seeded(seed);
    let obs = (0..n)
        .map(|_| {
            let f = vec![gen.gen_range(0..4) as f64, gen.gen_range(0..4) as f64];
            Observation::new(f, gen.gen_range(0..3))
        })
        .collect();
    Dataset::new(2, LabelSpace::numbered(3).unwrap(), obs).unwrap()
}

struct Scaled(f64);

impl Distance for Scaled {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.0 * Manhattan.distance(a, b)
    }

    fn name(&self) -> &'static str {
        "scaled-manhattan"
    }
}

#[test]
fn scores_are_equivariant_under_permutations() {
    for data in [three_classes(60, 1), gridded(60, 2)] {
        let measures: Vec<Box<dyn ConformityMeasure>> = vec![
            Box::new(NnRatio::new(Euclidean)),
            Box::new(NnRatio::new(Manhattan)),
            Box::new(KnnRatio::new(Euclidean, 4).unwrap()),
        ];
        for m in &measures {
            assert_eq!(equivariance_violations(m.as_ref(), data.observations(), 100, 7), 0);
        }
    }
}

#[test]
fn pvalues_ignore_training_order() {
    let taus = TauSource::new(3);
    for data in [three_classes(80, 4), gridded(80, 5)] {
        let (training, test) = cprob_core::dataset::split(&data, 60, 0).unwrap();
        let objects: Vec<Vec<f64>> = test.objects().map(<[f64]>::to_vec).collect();
        let nn = NnRatio::new(Euclidean);
        assert_eq!(training_permutation_violations(&nn, &training, &objects, &taus, 10, 9), 0);
        let knn = KnnRatio::new(Manhattan, 3).unwrap();
        assert_eq!(training_permutation_violations(&knn, &training, &objects, &taus, 10, 9), 0);
    }
}

#[test]
fn prediction_sets_are_nested_and_predictions_are_measures() {
    let data = gridded(150, 6);
    let (training, test) = cprob_core::dataset::split(&data, 100, 1).unwrap();
    let measure = NnRatio::new(Euclidean);
    let taus = TauSource::new(8);
    let objects: Vec<Vec<f64>> = test.objects().map(<[f64]>::to_vec).collect();
    let systems = Transducer::new(&training, &measure).unwrap().pvalues_batch(&objects, &taus).unwrap();
    assert_eq!(nestedness_violations(&systems, &[0.01, 0.05, 0.1, 0.2, 0.5]), 0);

    for rule in [DRule::Grenander, DRule::LabelFrequency] {
        let model = calibration::build_model(&training, &objects, &measure, &taus, rule).unwrap();
        let preds = calibration::predict_batch(&model, &training, &objects, &measure, &taus).unwrap();
        let probs: Vec<_> = preds.into_iter().map(|c| c.prediction).collect();
        assert_eq!(probability_violations(&probs, 3), 0);
    }
}

#[test]
fn scaling_the_distance_leaves_ratio_scores_unchanged() {
    let data = gridded(50, 10);
    let base = nn_ratio_scores(data.observations(), &Manhattan).unwrap();
    for c in [0.5, 3.0, 1024.0] {
        let scaled = nn_ratio_scores(data.observations(), &Scaled(c)).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b} at scale {c}");
        }
    }
    let data = three_classes(50, 11);
    let base = KnnRatio::new(Manhattan, 3).unwrap().scores(data.observations()).unwrap();
    let scaled = KnnRatio::new(Arc::new(Scaled(4.0)), 3).unwrap().scores(data.observations()).unwrap();
    assert_eq!(base, scaled);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nestedness_holds_for_arbitrary_pvalues(values in prop::collection::vec(1e-9f64..=1.0, 1..8)) {
        let p = cprob_core::transducer::PValueSystem::new(values).unwrap();
        prop_assert_eq!(nestedness_violations(&[p], &[0.01, 0.05, 0.2, 0.5, 0.9]), 0);
    }

    #[test]
    fn equivariance_holds_on_random_data(seed in any::<u64>(), n in 2usize..25) {
        let data = gridded(n, seed);
        prop_assert_eq!(equivariance_violations(&NnRatio::new(Euclidean), data.observations(), 5, seed), 0);
    }
}
