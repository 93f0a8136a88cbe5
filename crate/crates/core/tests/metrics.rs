use cprob_core::calibration::ProbabilisticPrediction;
use cprob_core::metrics::{self, brier_loss, log_loss};
use cprob_core::rng;
use rand::Rng;

#[test]
fn binary_losses_equal_mean_log_error_and_rmse() {
    let mut gen = rng::seeded(99);
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..1000 {
        let p1: f64 = gen.gen_range(0.001..0.999);
        preds.push(ProbabilisticPrediction::new(vec![1.0 - p1, p1]).unwrap());
        labels.push(gen.gen_range(0..2usize));
    }
    let r = metrics::report(&preds, &labels, 2).unwrap();

    let n = preds.len() as f64;
    let mean_log_error = -preds
        .iter()
        .zip(&labels)
        .map(|(p, &y)| p.probabilities()[y].ln())
        .sum::<f64>()
        / n;
    let rmse = (preds
        .iter()
        .zip(&labels)
        .map(|(p, &y)| (p.probabilities()[1] - y as f64).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    assert!((r.average_log_loss.unwrap() - mean_log_error).abs() <= 1e-12);
    assert!((r.standardized_brier_loss - rmse).abs() <= 1e-12);
}

#[test]
fn point_mass_on_the_truth_is_the_unique_minimizer() {
    let truth = ProbabilisticPrediction::new(vec![0.0, 1.0, 0.0]).unwrap();
    assert_eq!(log_loss(&truth, 1).unwrap(), 0.0);
    assert_eq!(brier_loss(&truth, 1).unwrap(), 0.0);
    let mut gen = rng::seeded(5);
    for _ in 0..200 {
        let w: Vec<f64> = (0..3).map(|_| gen.gen_range(0.0..1.0)).collect();
        let p = ProbabilisticPrediction::normalize(&w).unwrap();
        assert!(brier_loss(&p, 1).unwrap() > 0.0);
        assert!(log_loss(&p, 1).unwrap() > 0.0);
    }
}

#[test]
fn report_is_invariant_under_reordering() {
    let mut gen = rng::seeded(6);
    let preds: Vec<_> = (0..50)
        .map(|_| {
            let w: Vec<f64> = (0..4).map(|_| gen.gen_range(0.01..1.0)).collect();
            ProbabilisticPrediction::normalize(&w).unwrap()
        })
        .collect();
    let labels: Vec<usize> = (0..50).map(|_| gen.gen_range(0..4)).collect();
    let base = metrics::report(&preds, &labels, 4).unwrap();
    let perm = rng::permutation(50, 1);
    let p2: Vec<_> = perm.iter().map(|&i| preds[i].clone()).collect();
    let l2: Vec<_> = perm.iter().map(|&i| labels[i]).collect();
    let shuffled = metrics::report(&p2, &l2, 4).unwrap();
    assert!((base.average_log_loss.unwrap() - shuffled.average_log_loss.unwrap()).abs() <= 1e-12);
    assert!((base.standardized_brier_loss - shuffled.standardized_brier_loss).abs() <= 1e-12);
}

#[test]
fn standardized_brier_never_exceeds_sqrt_two() {
    let worst = ProbabilisticPrediction::new(vec![1.0, 0.0]).unwrap();
    let r = metrics::report(&[worst], &[1], 2).unwrap();
    assert!(r.standardized_brier_loss <= 2f64.sqrt());
    assert_eq!(r.average_log_loss, None);
    assert_eq!(r.infinite_log_loss, vec![0]);
}
