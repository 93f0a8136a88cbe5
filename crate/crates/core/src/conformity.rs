//! Conformity measures and distances.
//!
//! A conformity measure maps a finite sequence of observations to a
//! same-length sequence of scores, larger meaning more typical, and must be
//! equivariant under permutations of the sequence.
//!
//! The transducer evaluates a measure on `training ++ [(x, y)]` for every
//! test object and every candidate label. [`ConformityMeasure::extend`] lets
//! a measure precompute whatever depends on the training sequence alone;
//! [`NaiveExtension`] is the fallback that rebuilds the extended sequence
//! each time.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::{LabelId, Observation};
use crate::error::{Error, Result};

/// A symmetric, non-negative dissimilarity on feature vectors of equal
/// length. Callers check lengths before calling [`Distance::distance`].
pub trait Distance: Send + Sync {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;

    fn name(&self) -> &'static str;
}

impl<D: Distance + ?Sized> Distance for Arc<D> {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (**self).distance(a, b)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

impl<D: Distance + ?Sized> Distance for Box<D> {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (**self).distance(a, b)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl Distance for Euclidean {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    fn name(&self) -> &'static str {
        "euclidean"
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Manhattan;

impl Distance for Manhattan {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    }

    fn name(&self) -> &'static str {
        "manhattan"
    }
}

/// Euclidean distance with a length check.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(Euclidean.distance(a, b))
}

/// Looks up a distance by the name used on the command line.
pub fn distance_by_name(name: &str) -> Result<Arc<dyn Distance>> {
    match name {
        "euclidean" => Ok(Arc::new(Euclidean)),
        "manhattan" => Ok(Arc::new(Manhattan)),
        other => Err(Error::InvalidArgument(format!(
            "unknown distance {other:?} (expected euclidean or manhattan)"
        ))),
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { expected, found });
    }
    Ok(())
}

fn check_dims(observations: &[Observation]) -> Result<()> {
    if let Some(first) = observations.first() {
        let d = first.features.len();
        for o in observations {
            check_len(d, o.features.len())?;
        }
    }
    Ok(())
}

/// Score sequences for a fixed training sequence extended by one test
/// observation.
pub trait ExtendedScorer: Send + Sync {
    /// For each label `y` in `0..n_labels`, the scores of
    /// `training ++ [(x, y)]`; the last entry belongs to the test object.
    fn extended_scores(&self, x: &[f64], n_labels: usize) -> Result<Vec<Vec<f64>>>;
}

pub trait ConformityMeasure: Send + Sync {
    fn scores(&self, observations: &[Observation]) -> Result<Vec<f64>>;

    /// Prepares repeated evaluation on `training ++ [(x, y)]`. The result
    /// must agree exactly with [`ConformityMeasure::scores`] on the
    /// extended sequence.
    fn extend<'a>(&'a self, training: &'a [Observation]) -> Result<Box<dyn ExtendedScorer + 'a>>;
}

/// Evaluates the measure from scratch on every extended sequence.
pub struct NaiveExtension<'a, M: ?Sized> {
    measure: &'a M,
    training: &'a [Observation],
}

impl<'a, M: ConformityMeasure + ?Sized> NaiveExtension<'a, M> {
    pub fn new(measure: &'a M, training: &'a [Observation]) -> Self {
        Self { measure, training }
    }
}

impl<M: ConformityMeasure + ?Sized> ExtendedScorer for NaiveExtension<'_, M> {
    fn extended_scores(&self, x: &[f64], n_labels: usize) -> Result<Vec<Vec<f64>>> {
        let mut seq = self.training.to_vec();
        seq.push(Observation::new(x.to_vec(), 0));
        (0..n_labels)
            .map(|y| {
                seq.last_mut().expect("non-empty").label = y;
                self.measure.scores(&seq)
            })
            .collect()
    }
}

/// Stands in for an infinite ratio. Larger than every finite ratio score
/// the nearest-neighbour measure can produce in practice.
pub const RATIO_SENTINEL: f64 = f64::MAX;

/// Ratio of the nearest other-label distance to the nearest same-label
/// distance, with fixed conventions for empty minima (`+inf`) and zeros.
pub fn nn_ratio(nearest_other: f64, nearest_same: f64) -> f64 {
    match (nearest_other, nearest_same) {
        (n, d) if d == f64::INFINITY => {
            if n == f64::INFINITY {
                1.0
            } else {
                0.0
            }
        }
        (n, 0.0) => {
            if n == 0.0 {
                1.0
            } else {
                RATIO_SENTINEL
            }
        }
        (n, d) => (n / d).min(RATIO_SENTINEL),
    }
}

/// Nearest-neighbour ratio scores for `observations` under `d`:
/// for each i, the smallest distance to an observation with another label
/// divided by the smallest distance to another observation with the same
/// label. Computed by a full pairwise scan.
pub fn nn_ratio_scores<D: Distance + ?Sized>(
    observations: &[Observation],
    d: &D,
) -> Result<Vec<f64>> {
    check_dims(observations)?;
    Ok(observations
        .par_iter()
        .enumerate()
        .map(|(i, oi)| {
            let mut other = f64::INFINITY;
            let mut same = f64::INFINITY;
            for (j, oj) in observations.iter().enumerate() {
                if j == i {
                    continue;
                }
                let dist = d.distance(&oi.features, &oj.features);
                if oj.label == oi.label {
                    same = same.min(dist);
                } else {
                    other = other.min(dist);
                }
            }
            nn_ratio(other, same)
        })
        .collect())
}

/// The nearest-neighbour ratio conformity measure over a pluggable distance.
#[derive(Debug, Clone)]
pub struct NnRatio<D> {
    distance: D,
}

impl<D: Distance> NnRatio<D> {
    pub fn new(distance: D) -> Self {
        Self { distance }
    }

    pub fn distance(&self) -> &D {
        &self.distance
    }
}

impl Default for NnRatio<Euclidean> {
    fn default() -> Self {
        Self::new(Euclidean)
    }
}

impl<D: Distance> ConformityMeasure for NnRatio<D> {
    fn scores(&self, observations: &[Observation]) -> Result<Vec<f64>> {
        nn_ratio_scores(observations, &self.distance)
    }

    fn extend<'a>(&'a self, training: &'a [Observation]) -> Result<Box<dyn ExtendedScorer + 'a>> {
        Ok(Box::new(NnRatioExtension::new(&self.distance, training)?))
    }
}

/// Training-only nearest distances, so that adding one test observation
/// costs a single pass over the training sequence.
struct NnRatioExtension<'a, D: ?Sized> {
    distance: &'a D,
    training: &'a [Observation],
    nearest_same: Vec<f64>,
    nearest_other: Vec<f64>,
    label_bound: usize,
}

impl<'a, D: Distance + ?Sized> NnRatioExtension<'a, D> {
    fn new(distance: &'a D, training: &'a [Observation]) -> Result<Self> {
        check_dims(training)?;
        let (nearest_same, nearest_other) = training
            .par_iter()
            .enumerate()
            .map(|(i, oi)| {
                let mut other = f64::INFINITY;
                let mut same = f64::INFINITY;
                for (j, oj) in training.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let dist = distance.distance(&oi.features, &oj.features);
                    if oj.label == oi.label {
                        same = same.min(dist);
                    } else {
                        other = other.min(dist);
                    }
                }
                (same, other)
            })
            .unzip();
        Ok(Self {
            distance,
            training,
            nearest_same,
            nearest_other,
            label_bound: training.iter().map(|o| o.label + 1).max().unwrap_or(0),
        })
    }
}

impl<D: Distance + ?Sized> ExtendedScorer for NnRatioExtension<'_, D> {
    fn extended_scores(&self, x: &[f64], n_labels: usize) -> Result<Vec<Vec<f64>>> {
        if let Some(first) = self.training.first() {
            check_len(first.features.len(), x.len())?;
        }
        let dists: Vec<f64> = self
            .training
            .iter()
            .map(|o| self.distance.distance(&o.features, x))
            .collect();

        // Nearest training distance per label, for the test object's score.
        let mut nearest_by_label = vec![f64::INFINITY; n_labels.max(self.label_bound)];
        for (o, &dist) in self.training.iter().zip(&dists) {
            nearest_by_label[o.label] = nearest_by_label[o.label].min(dist);
        }

        Ok((0..n_labels)
            .map(|y: LabelId| {
                let mut scores = Vec::with_capacity(self.training.len() + 1);
                for (i, o) in self.training.iter().enumerate() {
                    let (mut same, mut other) = (self.nearest_same[i], self.nearest_other[i]);
                    if o.label == y {
                        same = same.min(dists[i]);
                    } else {
                        other = other.min(dists[i]);
                    }
                    scores.push(nn_ratio(other, same));
                }
                let same = nearest_by_label[y];
                let other = nearest_by_label
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != y)
                    .map(|(_, &v)| v)
                    .fold(f64::INFINITY, f64::min);
                scores.push(nn_ratio(other, same));
                scores
            })
            .collect())
    }
}

/// The `k` smallest values seen so far, ascending.
#[derive(Debug, Clone)]
struct Smallest {
    k: usize,
    values: Vec<f64>,
}

impl Smallest {
    fn new(k: usize) -> Self {
        Self {
            k,
            values: Vec::with_capacity(k + 1),
        }
    }

    fn insert(&mut self, v: f64) {
        if self.values.len() == self.k {
            if v >= self.values[self.k - 1] {
                return;
            }
            self.values.pop();
        }
        let at = self.values.partition_point(|&x| x <= v);
        self.values.insert(at, v);
    }

    /// Sum in ascending order; `+inf` when empty.
    fn sum(&self) -> f64 {
        if self.values.is_empty() {
            f64::INFINITY
        } else {
            self.values.iter().sum()
        }
    }
}

/// Generalisation of [`NnRatio`] to `k` neighbours: the sum of the `k`
/// smallest other-label distances over the sum of the `k` smallest
/// same-label distances (fewer when fewer exist). `k = 1` coincides with
/// [`NnRatio`].
#[derive(Debug, Clone)]
pub struct KnnRatio<D> {
    distance: D,
    k: usize,
}

impl<D: Distance> KnnRatio<D> {
    pub fn new(distance: D, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(Self { distance, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn neighbour_lists(&self, observations: &[Observation]) -> Vec<(Smallest, Smallest)> {
        observations
            .par_iter()
            .enumerate()
            .map(|(i, oi)| {
                let mut same = Smallest::new(self.k);
                let mut other = Smallest::new(self.k);
                for (j, oj) in observations.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let dist = self.distance.distance(&oi.features, &oj.features);
                    if oj.label == oi.label {
                        same.insert(dist);
                    } else {
                        other.insert(dist);
                    }
                }
                (same, other)
            })
            .collect()
    }
}

impl<D: Distance> ConformityMeasure for KnnRatio<D> {
    fn scores(&self, observations: &[Observation]) -> Result<Vec<f64>> {
        check_dims(observations)?;
        Ok(self
            .neighbour_lists(observations)
            .iter()
            .map(|(same, other)| nn_ratio(other.sum(), same.sum()))
            .collect())
    }

    fn extend<'a>(&'a self, training: &'a [Observation]) -> Result<Box<dyn ExtendedScorer + 'a>> {
        check_dims(training)?;
        Ok(Box::new(KnnRatioExtension {
            measure: self,
            training,
            lists: self.neighbour_lists(training),
            label_bound: training.iter().map(|o| o.label + 1).max().unwrap_or(0),
        }))
    }
}

struct KnnRatioExtension<'a, D> {
    measure: &'a KnnRatio<D>,
    training: &'a [Observation],
    lists: Vec<(Smallest, Smallest)>,
    label_bound: usize,
}

impl<D: Distance> ExtendedScorer for KnnRatioExtension<'_, D> {
    fn extended_scores(&self, x: &[f64], n_labels: usize) -> Result<Vec<Vec<f64>>> {
        if let Some(first) = self.training.first() {
            check_len(first.features.len(), x.len())?;
        }
        let k = self.measure.k;
        let dists: Vec<f64> = self
            .training
            .iter()
            .map(|o| self.measure.distance.distance(&o.features, x))
            .collect();
        let mut by_label = vec![Smallest::new(k); n_labels.max(self.label_bound)];
        for (o, &dist) in self.training.iter().zip(&dists) {
            by_label[o.label].insert(dist);
        }
        Ok((0..n_labels)
            .map(|y: LabelId| {
                let mut scores = Vec::with_capacity(self.training.len() + 1);
                for (i, o) in self.training.iter().enumerate() {
                    let (same, other) = &self.lists[i];
                    let score = if o.label == y {
                        let mut same = same.clone();
                        same.insert(dists[i]);
                        nn_ratio(other.sum(), same.sum())
                    } else {
                        let mut other = other.clone();
                        other.insert(dists[i]);
                        nn_ratio(other.sum(), same.sum())
                    };
                    scores.push(score);
                }
                let mut other = Smallest::new(k);
                for (l, list) in by_label.iter().enumerate() {
                    if l != y {
                        list.values.iter().for_each(|&v| other.insert(v));
                    }
                }
                scores.push(nn_ratio(other.sum(), by_label[y].sum()));
                scores
            })
            .collect())
    }
}
