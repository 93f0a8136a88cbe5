//! Grenander estimator of a non-increasing density on [0, 1].
//!
//! The estimate is the left derivative of the least concave majorant of the
//! empirical distribution function, anchored at the origin and continued
//! flat at height 1 up to x = 1. The majorant is the upper convex hull of
//! the ECDF vertices `(0, 0), (x_(j), F(x_(j))), (1, 1)`, built with one
//! monotone-chain pass after sorting. Collinear vertices are dropped, so
//! consecutive levels are strictly decreasing.
//!
//! A density cannot hold an atom at 0, so samples equal to 0 are counted as
//! if they sat at the smallest positive sample (at 1 when there is none).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant non-increasing density on [0, 1].
///
/// Piece `k` covers `(breakpoints[k], breakpoints[k + 1]]`; the first piece
/// also owns 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntitonicDensity {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl AntitonicDensity {
    /// Density 1 on [0, 1].
    pub fn uniform() -> Self {
        Self {
            breakpoints: vec![0.0, 1.0],
            levels: vec![1.0],
        }
    }

    /// Validates and wraps explicit pieces.
    pub fn from_parts(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != levels.len() + 1 || levels.is_empty() {
            return Err(Error::InvalidArgument(
                "need one more breakpoint than levels and at least one level".into(),
            ));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument("breakpoints must run from 0 to 1".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        if levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument("levels must be finite and non-negative".into()));
        }
        if levels.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("levels must be non-increasing".into()));
        }
        let d = Self { breakpoints, levels };
        let mass = d.integral();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("density integrates to {mass}, not 1")));
        }
        Ok(d)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn integral(&self) -> f64 {
        self.levels
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(l, w)| l * (w[1] - w[0]))
            .sum()
    }

    /// Level of the piece containing `p`.
    pub fn evaluate(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::out_of_range("density argument", p, "[0, 1]"));
        }
        Ok(self.value_at(p))
    }

    pub(crate) fn value_at(&self, p: f64) -> f64 {
        // First interior breakpoint >= p picks the piece ending there.
        let k = self.breakpoints[1..].partition_point(|&b| b < p);
        self.levels[k.min(self.levels.len() - 1)]
    }
}

/// Fits the Grenander estimator to `samples`, all of which must lie in
/// [0, 1]. Duplicates are allowed.
pub fn fit(samples: &[f64]) -> Result<AntitonicDensity> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("Grenander fit needs at least one sample".into()));
    }
    if let Some(bad) = samples.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::out_of_range("sample", bad, "[0, 1]"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;

    // ECDF vertices at distinct positive sample values.
    let mut vertices: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
        if v > 0.0 {
            vertices.push((v, i as f64 / n));
        }
    }
    if vertices.last().unwrap().0 < 1.0 {
        vertices.push((1.0, 1.0));
    }

    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(vertices.len());
    for &p in &vertices {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b unless it lies strictly above the chord from a to p.
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }

    let breakpoints: Vec<f64> = hull.iter().map(|v| v.0).collect();
    let levels: Vec<f64> = hull
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    Ok(AntitonicDensity { breakpoints, levels })
}
