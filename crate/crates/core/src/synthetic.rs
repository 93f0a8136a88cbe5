//! Synthetic data with known conditional label probabilities: isotropic
//! Gaussian classes with shared standard deviation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelSpace, Observation};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianClasses {
    means: Vec<Vec<f64>>,
    sd: f64,
    priors: Vec<f64>,
}

impl GaussianClasses {
    pub fn new(means: Vec<Vec<f64>>, sd: f64, priors: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.len() != priors.len() {
            return Err(Error::InvalidArgument(
                "need one prior per class and at least one class".into(),
            ));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidArgument("class means must share a positive dimension".into()));
        }
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::out_of_range("standard deviation", sd, "(0, inf)"));
        }
        let total: f64 = priors.iter().sum();
        if priors.iter().any(|p| !(*p > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("priors must be positive and sum to 1".into()));
        }
        Ok(Self { means, sd, priors })
    }

    /// Two equiprobable classes centred at `(0, 0)` and `(separation, 0)`
    /// with unit standard deviation.
    pub fn two_class_2d(separation: f64) -> Self {
        Self::new(
            vec![vec![0.0, 0.0], vec![separation, 0.0]],
            1.0,
            vec![0.5, 0.5],
        )
        .expect("valid parameters")
    }

    pub fn dimension(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    /// Draws `n` labelled observations.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut gen = rng::seeded(seed);
        let observations = (0..n)
            .map(|_| {
                let u: f64 = rng::open_unit(&mut gen);
                let mut label = self.priors.len() - 1;
                let mut acc = 0.0;
                for (y, p) in self.priors.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        label = y;
                        break;
                    }
                }
                let features = self.means[label]
                    .iter()
                    .map(|m| m + self.sd * gen.sample::<f64, _>(StandardNormal))
                    .collect();
                Observation::new(features, label)
            })
            .collect();
        Dataset::new(
            self.dimension(),
            LabelSpace::numbered(self.n_classes()).expect("non-empty"),
            observations,
        )
        .expect("consistent by construction")
    }

    /// True conditional probabilities `Q(y | x)`.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = self
            .means
            .iter()
            .zip(&self.priors)
            .map(|(m, p)| {
                let d2: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                p.ln() - d2 / (2.0 * self.sd * self.sd)
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }
}
