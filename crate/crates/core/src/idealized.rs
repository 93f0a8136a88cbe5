//! Idealized label-conditional conformal prediction on a small finite
//! observation space with a known distribution `Q`.
//!
//! With `Q` known, the p-value of `(x, y)` under an idealized conformity
//! measure `A` is
//!
//! ```text
//! p(x, y) = [ Q{(x', y): A(x', y) < A(x, y)} + tau * Q{(x', y): A(x', y) = A(x, y)} ] / Q_Y(y)
//! ```
//!
//! which is affine in `tau`, so all four efficiency criteria have exact
//! expectations over `tau ~ U(0, 1)`. The conditional-probability measure
//! `A(x, y) = Q(y | x)` and every per-label refinement of it minimise all four;
//! [`verify_theorem1`] checks that claim against sampled and hand-built
//! challengers.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::transducer::Criteria;

/// Strictly positive probability table on `objects x labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    n_objects: usize,
    n_labels: usize,
    /// Row-major: `table[x * n_labels + y]`.
    table: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(n_objects: usize, n_labels: usize, table: Vec<f64>) -> Result<Self> {
        if n_objects == 0 || n_labels == 0 {
            return Err(Error::InvalidDistribution("empty object or label set".into()));
        }
        if table.len() != n_objects * n_labels {
            return Err(Error::InvalidDistribution(format!(
                "table has {} entries, expected {}",
                table.len(),
                n_objects * n_labels
            )));
        }
        if let Some(p) = table.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "probability {p} is not strictly positive"
            )));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        Ok(Self {
            n_objects,
            n_labels,
            table,
        })
    }

    pub fn uniform(n_objects: usize, n_labels: usize) -> Result<Self> {
        let n = n_objects * n_labels;
        Self::new(n_objects, n_labels, vec![1.0 / n as f64; n])
    }

    /// Random table with every entry at least `min_prob`: the spare mass is
    /// split in proportion to independent uniforms.
    pub fn random(n_objects: usize, n_labels: usize, min_prob: f64, seed: u64) -> Result<Self> {
        let n = n_objects * n_labels;
        let spare = 1.0 - n as f64 * min_prob;
        if !(min_prob >= 0.0 && spare > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "minimum probability {min_prob} is infeasible for {n} cells"
            )));
        }
        let mut gen = rng::seeded(seed);
        let weights: Vec<f64> = (0..n).map(|_| rng::open_unit(&mut gen)).collect();
        let total: f64 = weights.iter().sum();
        let table = weights.iter().map(|w| min_prob + spare * w / total).collect();
        Self::new(n_objects, n_labels, table)
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.table[x * self.n_labels + y]
    }

    pub fn object_marginal(&self, x: usize) -> f64 {
        (0..self.n_labels).map(|y| self.prob(x, y)).sum()
    }

    pub fn label_marginal(&self, y: usize) -> f64 {
        (0..self.n_objects).map(|x| self.prob(x, y)).sum()
    }

    fn check(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.n_objects {
            return Err(Error::out_of_range("object", x, format!("< {}", self.n_objects)));
        }
        if y >= self.n_labels {
            return Err(Error::out_of_range("label", y, format!("< {}", self.n_labels)));
        }
        Ok(())
    }
}

/// Scores `A(x, y)` on a finite space, `Q` being fixed per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealizedConformityMeasure {
    n_objects: usize,
    n_labels: usize,
    scores: Vec<f64>,
}

impl IdealizedConformityMeasure {
    pub fn new(n_objects: usize, n_labels: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != n_objects * n_labels {
            return Err(Error::Dimension {
                expected: n_objects * n_labels,
                found: scores.len(),
            });
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidArgument("conformity scores must not be NaN".into()));
        }
        Ok(Self {
            n_objects,
            n_labels,
            scores,
        })
    }

    pub fn from_fn(n_objects: usize, n_labels: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let scores = (0..n_objects)
            .flat_map(|x| (0..n_labels).map(move |y| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(n_objects, n_labels, scores)
    }

    /// Independent U(0, 1) scores, almost surely free of ties.
    pub fn random<R: RngCore>(n_objects: usize, n_labels: usize, gen: &mut R) -> Self {
        let scores = (0..n_objects * n_labels).map(|_| rng::open_unit(gen)).collect();
        Self {
            n_objects,
            n_labels,
            scores,
        }
    }

    pub fn score(&self, x: usize, y: usize) -> f64 {
        self.scores[x * self.n_labels + y]
    }

    /// Applies `f(y, score)` to every score.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        Self::from_fn(self.n_objects, self.n_labels, |x, y| f(y, self.score(x, y)))
    }

    fn same_space(&self, n_objects: usize, n_labels: usize) -> Result<()> {
        if self.n_objects != n_objects || self.n_labels != n_labels {
            return Err(Error::InvalidArgument(format!(
                "space mismatch: measure on {}x{}, expected {n_objects}x{n_labels}",
                self.n_objects, self.n_labels
            )));
        }
        Ok(())
    }
}

/// The conditional-probability measure `A(x, y) = Q(y | x)`.
pub fn cp_measure(q: &FiniteDistribution) -> IdealizedConformityMeasure {
    IdealizedConformityMeasure::from_fn(q.n_objects, q.n_labels, |x, y| {
        q.prob(x, y) / q.object_marginal(x)
    })
    .expect("a valid distribution yields finite scores")
}

/// `true` iff `B(x1, y) < B(x2, y)` implies `A(x1, y) < A(x2, y)` for all
/// objects and every label.
pub fn is_refinement(a: &IdealizedConformityMeasure, b: &IdealizedConformityMeasure) -> Result<bool> {
    a.same_space(b.n_objects, b.n_labels)?;
    for y in 0..a.n_labels {
        for x1 in 0..a.n_objects {
            for x2 in 0..a.n_objects {
                if b.score(x1, y) < b.score(x2, y) && !(a.score(x1, y) < a.score(x2, y)) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// `(below, tie)` with `p = below + tau * tie`.
fn pvalue_terms(q: &FiniteDistribution, a: &IdealizedConformityMeasure, x: usize, y: usize) -> (f64, f64) {
    let target = a.score(x, y);
    let (mut below, mut tie) = (0.0, 0.0);
    for x2 in 0..q.n_objects {
        let s = a.score(x2, y);
        if s < target {
            below += q.prob(x2, y);
        } else if s == target {
            tie += q.prob(x2, y);
        }
    }
    let qy = q.label_marginal(y);
    (below / qy, tie / qy)
}

pub fn idealized_pvalue(
    q: &FiniteDistribution,
    a: &IdealizedConformityMeasure,
    x: usize,
    y: usize,
    tau: f64,
) -> Result<f64> {
    q.check(x, y)?;
    a.same_space(q.n_objects, q.n_labels)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::out_of_range("tau", tau, "[0, 1]"));
    }
    let (below, tie) = pvalue_terms(q, a, x, y);
    Ok(below + tau * tie)
}

/// Precomputed p-value terms for every `(x, y)`.
struct IdealizedPValues<'a> {
    q: &'a FiniteDistribution,
    terms: Vec<(f64, f64)>,
}

impl<'a> IdealizedPValues<'a> {
    fn new(q: &'a FiniteDistribution, a: &IdealizedConformityMeasure) -> Self {
        let terms = (0..q.n_objects)
            .flat_map(|x| (0..q.n_labels).map(move |y| (x, y)))
            .map(|(x, y)| pvalue_terms(q, a, x, y))
            .collect();
        Self { q, terms }
    }

    fn terms(&self, x: usize, y: usize) -> (f64, f64) {
        self.terms[x * self.q.n_labels + y]
    }

    fn mean_p(&self, x: usize, y: usize) -> f64 {
        let (b, t) = self.terms(x, y);
        b + t / 2.0
    }

    /// `Pr_tau[p > eps]`.
    fn prob_above(&self, x: usize, y: usize, eps: f64) -> f64 {
        let (b, t) = self.terms(x, y);
        if t == 0.0 {
            return if b > eps { 1.0 } else { 0.0 };
        }
        ((b + t - eps) / t).clamp(0.0, 1.0)
    }

    /// `E_{x ~ Q_X} sum_y E_tau p(x, y)`.
    fn s(&self) -> f64 {
        (0..self.q.n_objects)
            .map(|x| {
                self.q.object_marginal(x) * (0..self.q.n_labels).map(|y| self.mean_p(x, y)).sum::<f64>()
            })
            .sum()
    }

    /// `E_{(x, y) ~ Q} sum_{y' != y} E_tau p(x, y')`.
    fn of(&self) -> f64 {
        let mut total = 0.0;
        for x in 0..self.q.n_objects {
            for y in 0..self.q.n_labels {
                let others: f64 = (0..self.q.n_labels)
                    .filter(|&y2| y2 != y)
                    .map(|y2| self.mean_p(x, y2))
                    .sum();
                total += self.q.prob(x, y) * others;
            }
        }
        total
    }

    fn n(&self, eps: f64) -> f64 {
        (0..self.q.n_objects)
            .map(|x| {
                self.q.object_marginal(x)
                    * (0..self.q.n_labels).map(|y| self.prob_above(x, y, eps)).sum::<f64>()
            })
            .sum()
    }

    fn oe(&self, eps: f64) -> f64 {
        let mut total = 0.0;
        for x in 0..self.q.n_objects {
            for y in 0..self.q.n_labels {
                let others: f64 = (0..self.q.n_labels)
                    .filter(|&y2| y2 != y)
                    .map(|y2| self.prob_above(x, y2, eps))
                    .sum();
                total += self.q.prob(x, y) * others;
            }
        }
        total
    }

    fn criteria(&self, eps: f64) -> Criteria {
        Criteria {
            s: self.s(),
            n: self.n(eps),
            of: self.of(),
            oe: self.oe(eps),
        }
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::out_of_range("significance level", eps, "(0, 1)"));
    }
    Ok(())
}

/// Exact expectations of S, N, OF and OE at significance level `epsilon`.
/// S and N average over `x ~ Q_X`; OF and OE over `(x, y) ~ Q`; all over
/// `tau ~ U(0, 1)`.
pub fn expected_criteria(
    q: &FiniteDistribution,
    a: &IdealizedConformityMeasure,
    epsilon: f64,
) -> Result<Criteria> {
    check_epsilon(epsilon)?;
    a.same_space(q.n_objects, q.n_labels)?;
    Ok(IdealizedPValues::new(q, a).criteria(epsilon))
}

/// Largest of `|S - OF - 1/2|` and `|N - OE - (1 - eps)|` for criteria
/// evaluated at `eps`.
pub fn identity_error(c: &Criteria, eps: f64) -> f64 {
    (c.s - c.of - 0.5).abs().max((c.n - c.oe - (1.0 - eps)).abs())
}

/// Compares `sum_y phi(p(x, y))` with a midpoint-rule value of
/// `int_0^1 |Gamma^{phi^{-1}(e)}(x)| de` for `phi(t) = t^2`, at a fixed
/// object and tau. Returns the absolute difference.
pub fn squared_mean_gap(
    q: &FiniteDistribution,
    a: &IdealizedConformityMeasure,
    x: usize,
    tau: f64,
    quadrature_points: usize,
) -> Result<f64> {
    q.check(x, 0)?;
    if quadrature_points == 0 {
        return Err(Error::InvalidArgument("need at least one quadrature point".into()));
    }
    let p: Vec<f64> = (0..q.n_labels)
        .map(|y| idealized_pvalue(q, a, x, y, tau))
        .collect::<Result<_>>()?;
    let direct: f64 = p.iter().map(|v| v * v).sum();
    let h = 1.0 / quadrature_points as f64;
    let mut integral = 0.0;
    for j in 0..quadrature_points {
        let level = ((j as f64 + 0.5) * h).sqrt();
        integral += p.iter().filter(|&&v| v > level).count() as f64;
    }
    Ok((direct - integral * h).abs())
}

/// Criterion value of CP and of its strongest challenger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionMargin {
    pub cp_value: f64,
    pub best_challenger_value: f64,
    /// `best_challenger_value - cp_value`; negative beyond tolerance means
    /// CP was beaten.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialOutcome {
    pub name: String,
    /// Excess S over CP.
    pub s_excess: f64,
    pub strictly_worse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub epsilons: Vec<f64>,
    pub challengers: usize,
    pub refinements: usize,
    /// Keys `S`, `OF`, `N@eps`, `OE@eps`.
    pub criteria: BTreeMap<String, CriterionMargin>,
    /// Largest criterion difference between CP and a refinement of it.
    pub max_refinement_deviation: f64,
    /// Largest violation of `S = OF + 1/2` or `N = OE + 1 - eps` over every
    /// evaluated measure.
    pub max_identity_error: f64,
    pub adversarial: Vec<AdversarialOutcome>,
    pub passed: bool,
}

/// Tolerance for a challenger beating CP.
pub const OPTIMALITY_TOLERANCE: f64 = 1e-9;
/// Tolerance for a CP refinement differing from CP.
pub const REFINEMENT_TOLERANCE: f64 = 1e-12;

/// Strictly increasing per-label transforms of CP scores in (0, 1].
fn refinement_family(cp: &IdealizedConformityMeasure) -> Result<Vec<IdealizedConformityMeasure>> {
    let transforms: [fn(usize, f64) -> f64; 6] = [
        |_, s| 2.0 * s + 7.0,
        |_, s| s * s * s,
        |_, s| s.exp(),
        |_, s| s.ln(),
        |y, s| s + 10.0 * y as f64,
        |y, s| match y % 3 {
            0 => -1.0 / s,
            1 => s.sqrt(),
            _ => 5.0 * s - 3.0,
        },
    ];
    let mut out = vec![cp.clone()];
    for t in transforms {
        out.push(cp.map(t)?);
    }
    Ok(out)
}

/// Checks that CP attains the minimum of every criterion.
///
/// Challengers are `trials` random measures with i.i.d. uniform scores plus
/// hand-built ones (a constant measure and, for each label, CP with its order
/// reversed within that label). A fixed family of strictly increasing
/// per-label transforms of CP must tie CP.
pub fn verify_theorem1(
    q: &FiniteDistribution,
    trials: usize,
    seed: u64,
    epsilon_grid: &[f64],
) -> Result<Theorem1Report> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if epsilon_grid.is_empty() {
        return Err(Error::InvalidArgument("epsilon grid is empty".into()));
    }
    for &e in epsilon_grid {
        check_epsilon(e)?;
    }
    let (nx, ny) = (q.n_objects, q.n_labels);
    let cp = cp_measure(q);
    let evaluate = |a: &IdealizedConformityMeasure| -> Vec<Criteria> {
        let pv = IdealizedPValues::new(q, a);
        epsilon_grid.iter().map(|&e| pv.criteria(e)).collect()
    };
    let cp_values = evaluate(&cp);

    let mut identity = 0.0f64;
    let mut track_identities = |values: &[Criteria]| {
        for (c, &e) in values.iter().zip(epsilon_grid) {
            identity = identity.max(identity_error(c, e));
        }
    };
    track_identities(&cp_values);

    let mut refinement_dev = 0.0f64;
    let refinements = refinement_family(&cp)?;
    for r in &refinements {
        debug_assert!(is_refinement(r, &cp)?);
        let values = evaluate(r);
        track_identities(&values);
        for (c, base) in values.iter().zip(&cp_values) {
            refinement_dev = refinement_dev
                .max((c.s - base.s).abs())
                .max((c.n - base.n).abs())
                .max((c.of - base.of).abs())
                .max((c.oe - base.oe).abs());
        }
    }

    let mut adversarial_measures = vec![(
        "constant".to_string(),
        IdealizedConformityMeasure::from_fn(nx, ny, |_, _| 0.0)?,
    )];
    for flipped in 0..ny {
        adversarial_measures.push((
            format!("cp_reversed_in_label_{flipped}"),
            cp.map(|y, s| if y == flipped { -s } else { s })?,
        ));
    }

    let mut gen = rng::seeded(seed);
    let mut best: Vec<Criteria> = vec![
        Criteria {
            s: f64::INFINITY,
            n: f64::INFINITY,
            of: f64::INFINITY,
            oe: f64::INFINITY,
        };
        epsilon_grid.len()
    ];
    let mut consider = |values: &[Criteria]| {
        for (b, c) in best.iter_mut().zip(values) {
            b.s = b.s.min(c.s);
            b.n = b.n.min(c.n);
            b.of = b.of.min(c.of);
            b.oe = b.oe.min(c.oe);
        }
    };

    let mut adversarial = Vec::new();
    for (name, a) in &adversarial_measures {
        let values = evaluate(a);
        track_identities(&values);
        consider(&values);
        let s_excess = values[0].s - cp_values[0].s;
        adversarial.push(AdversarialOutcome {
            name: name.clone(),
            s_excess,
            strictly_worse: s_excess > REFINEMENT_TOLERANCE,
        });
    }
    for _ in 0..trials {
        let a = IdealizedConformityMeasure::random(nx, ny, &mut gen);
        let values = evaluate(&a);
        track_identities(&values);
        consider(&values);
    }

    let mut criteria = BTreeMap::new();
    let margin = |cp_value: f64, best: f64| CriterionMargin {
        cp_value,
        best_challenger_value: best,
        margin: best - cp_value,
    };
    criteria.insert("S".to_string(), margin(cp_values[0].s, best[0].s));
    criteria.insert("OF".to_string(), margin(cp_values[0].of, best[0].of));
    for (i, &e) in epsilon_grid.iter().enumerate() {
        criteria.insert(format!("N@{e}"), margin(cp_values[i].n, best[i].n));
        criteria.insert(format!("OE@{e}"), margin(cp_values[i].oe, best[i].oe));
    }
    let passed = criteria.values().all(|m| m.margin >= -OPTIMALITY_TOLERANCE)
        && refinement_dev <= REFINEMENT_TOLERANCE;

    Ok(Theorem1Report {
        epsilons: epsilon_grid.to_vec(),
        challengers: trials + adversarial_measures.len(),
        refinements: refinements.len(),
        criteria,
        max_refinement_deviation: refinement_dev,
        max_identity_error: identity,
        adversarial,
        passed,
    })
}
