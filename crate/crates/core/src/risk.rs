//! Exact CVaR / VaR on finite discrete distributions and the two empirical
//! CVaR estimators (inf-form and sorted-sample form), plus the Brown
//! concentration radii for the empirical estimator.
//!
//! CVaR is the Rockafellar-Uryasev functional
//!
//! ```text
//! CVaR_a(X) = inf_w { w + E[(X - w)^+] / a }  =  (1/a) * integral_{1-a}^{1} F^{-1}(t) dt
//! ```
//!
//! i.e. the mean of the worst (largest) `a` probability mass. It is well defined
//! for atomic distributions, so no smoothness assumption is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total probability of a distribution.
pub const PROB_TOL: f64 = 1e-12;
/// Atoms whose values differ by at most this much are merged.
pub const VALUE_MERGE_TOL: f64 = 1e-12;

/// A confidence level `alpha` strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConfidenceLevel(f64);

impl ConfidenceLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidConfidence(alpha))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ConfidenceLevel {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ConfidenceLevel> for f64 {
    fn from(value: ConfidenceLevel) -> f64 {
        value.0
    }
}

/// Exact finite distribution over the reals.
///
/// Canonical form: values strictly increasing, every probability positive,
/// total mass within [`PROB_TOL`] of one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    /// Builds a canonical distribution from `(value, probability)` pairs.
    ///
    /// Zero-probability atoms are dropped and atoms closer than
    /// [`VALUE_MERGE_TOL`] are merged (keeping the first value).
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut raw: Vec<(f64, f64)> = Vec::new();
        for (v, p) in atoms {
            if !v.is_finite() {
                return Err(Error::InvalidDistribution(format!("non-finite value {v}")));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "probability {p} at value {v} is negative or non-finite"
                )));
            }
            if p > 0.0 {
                raw.push((v, p));
            }
        }
        if raw.is_empty() {
            return Err(Error::InvalidDistribution("no atom carries positive mass".into()));
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (v, p) in raw {
            match merged.last_mut() {
                Some(last) if (v - last.0).abs() <= VALUE_MERGE_TOL => last.1 += p,
                _ => merged.push((v, p)),
            }
        }

        let total: f64 = merged.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total:.17}, expected 1"
            )));
        }
        Ok(Self { atoms: merged })
    }

    /// Like [`DiscreteDistribution::new`] but rescales the masses to sum to one first.
    pub fn normalized(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let atoms: Vec<(f64, f64)> = atoms.into_iter().collect();
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidDistribution(format!("total mass {total} cannot be normalized")));
        }
        Self::new(atoms.into_iter().map(|(v, p)| (v, p / total)))
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new([(value, 1.0)])
    }

    /// Uniform distribution over the given values (repeats add mass).
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let p = 1.0 / values.len() as f64;
        Self::normalized(values.iter().map(|&v| (v, p)))
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn max(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * p).sum()
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &(v, p) in &self.atoms {
            if v > x {
                break;
            }
            acc += p;
        }
        acc.min(1.0)
    }

    /// Distribution of `scale * X + shift`; `scale` must be positive.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale {scale} must be positive")));
        }
        Self::new(self.atoms.iter().map(|&(v, p)| (scale * v + shift, p)))
    }

    /// `integral_{1-mass}^{1} F^{-1}(t) dt` for `mass` in [0, 1]; equals
    /// `mass * CVaR_mass(X)` and vanishes at `mass = 0`.
    pub fn upper_tail_integral(&self, mass: f64) -> f64 {
        let mass = mass.clamp(0.0, 1.0);
        if mass >= 1.0 {
            return self.mean();
        }
        let mut remaining = mass;
        let mut acc = 0.0;
        for &(v, p) in self.atoms.iter().rev() {
            if remaining <= 0.0 {
                break;
            }
            let take = p.min(remaining);
            acc += v * take;
            remaining -= take;
        }
        if remaining > 0.0 {
            // rounding residue when the atoms sum to slightly under one
            acc += self.min() * remaining;
        }
        acc
    }
}

/// A non-empty sample of iid draws; the ascending order is cached.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    values: Vec<f64>,
    sorted: Vec<f64>,
}

impl EmpiricalSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::EmptySample);
        }
        let mut sorted = values.clone();
        // stable; equal values contribute zero increments either way
        sorted.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { values, sorted })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Deviation radii of the empirical CVaR estimator for a sample of size `n`
/// supported on an interval of width `support_range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationRadii {
    /// `P(CVaR - estimate > upper) <= delta`.
    pub upper: f64,
    /// `P(CVaR - estimate < -lower) <= delta`.
    pub lower: f64,
    pub n: usize,
    pub alpha: ConfidenceLevel,
    pub delta: f64,
    pub support_range: f64,
}

/// Exact CVaR of a discrete distribution: mean of its worst `alpha` mass.
pub fn cvar_exact(dist: &DiscreteDistribution, alpha: ConfidenceLevel) -> f64 {
    let a = alpha.value();
    // weights take/a rather than a final division keep constants exact
    let mut remaining = a;
    let mut acc = 0.0;
    for &(v, p) in dist.atoms().iter().rev() {
        if remaining <= 0.0 {
            break;
        }
        let take = p.min(remaining);
        acc += v * (take / a);
        remaining -= take;
    }
    if remaining > 0.0 {
        acc += dist.min() * (remaining / a);
    }
    acc
}

/// `sup { x in supp(X) : F(x) <= 1 - alpha }`, falling back to the smallest
/// atom when no atom satisfies the inequality.
pub fn var_exact(dist: &DiscreteDistribution, alpha: ConfidenceLevel) -> f64 {
    let level = 1.0 - alpha.value();
    let mut cum = 0.0;
    let mut best = dist.min();
    for &(v, p) in dist.atoms() {
        cum += p;
        if cum <= level + PROB_TOL {
            best = v;
        } else {
            break;
        }
    }
    best
}

/// Sorted-sample CVaR estimator.
///
/// `X(n) - (1/a) * sum_{i=1}^{n-1} (X(i+1) - X(i)) * (i/n - (1 - a))^+`, which is
/// algebraically identical to [`cvar_estimate_inf`].
pub fn cvar_estimate_sorted(sample: &EmpiricalSample, alpha: ConfidenceLevel) -> f64 {
    cvar_estimate_ascending(sample.sorted(), alpha.value())
}

pub(crate) fn cvar_estimate_ascending(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let nf = n as f64;
    let floor = 1.0 - alpha;
    let mut acc = 0.0;
    for i in 1..n {
        let weight = i as f64 / nf - floor;
        if weight > 0.0 {
            acc += (sorted[i] - sorted[i - 1]) * weight;
        }
    }
    sorted[n - 1] - acc / alpha
}

/// Sorted-sample estimator for a sample given as ascending distinct values
/// with multiplicities; equal to [`cvar_estimate_sorted`] on the expanded sample.
pub fn cvar_estimate_from_counts(values: &[f64], counts: &[u64], alpha: ConfidenceLevel) -> Result<f64> {
    if values.len() != counts.len() {
        return Err(Error::InvalidParameter("values and counts differ in length".into()));
    }
    let pairs: Vec<(f64, u64)> = values
        .iter()
        .copied()
        .zip(counts.iter().copied())
        .filter(|&(_, c)| c > 0)
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptySample);
    }
    if pairs.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidParameter("values must be strictly increasing".into()));
    }
    let n: u64 = pairs.iter().map(|p| p.1).sum();
    let nf = n as f64;
    let a = alpha.value();
    let floor = 1.0 - a;
    let mut below = 0u64;
    let mut acc = 0.0;
    for j in 1..pairs.len() {
        below += pairs[j - 1].1;
        let weight = below as f64 / nf - floor;
        if weight > 0.0 {
            acc += (pairs[j].0 - pairs[j - 1].0) * weight;
        }
    }
    Ok(pairs[pairs.len() - 1].0 - acc / a)
}

/// Inf-form CVaR estimator `inf_x { x + sum (X_i - x)^+ / (n a) }`.
///
/// The objective is piecewise linear and convex with kinks at the sample
/// points, so the infimum is the minimum over those points.
pub fn cvar_estimate_inf(sample: &EmpiricalSample, alpha: ConfidenceLevel) -> f64 {
    let xs = sample.values();
    let scale = 1.0 / (xs.len() as f64 * alpha.value());
    xs.iter()
        .map(|&x| x + scale * xs.iter().map(|&xi| (xi - x).max(0.0)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Brown's two-sided deviation radii for the empirical CVaR.
pub fn brown_radii(n: usize, alpha: ConfidenceLevel, delta: f64, support_range: f64) -> Result<DeviationRadii> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta {delta} must lie in (0, 1]")));
    }
    if !(support_range >= 0.0 && support_range.is_finite()) {
        return Err(Error::InvalidParameter(format!("support range {support_range} must be non-negative")));
    }
    let a = alpha.value();
    let nf = n as f64;
    Ok(DeviationRadii {
        upper: support_range * (5.0 * (3.0 / delta).ln() / (a * nf)).sqrt(),
        lower: support_range / a * ((1.0 / delta).ln() / (2.0 * nf)).sqrt(),
        n,
        alpha,
        delta,
        support_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(x: f64) -> ConfidenceLevel {
        ConfidenceLevel::new(x).unwrap()
    }

    /// Evaluates the inf-form on the distribution itself by scanning `w` over atoms.
    fn inf_form_oracle(dist: &DiscreteDistribution, alpha: f64) -> f64 {
        dist.atoms()
            .iter()
            .map(|&(w, _)| {
                w + dist.atoms().iter().map(|&(v, p)| p * (v - w).max(0.0)).sum::<f64>() / alpha
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn confidence_rejects_boundaries() {
        assert!(ConfidenceLevel::new(0.0).is_err());
        assert!(ConfidenceLevel::new(1.0).is_err());
        assert!(ConfidenceLevel::new(f64::NAN).is_err());
        assert!(ConfidenceLevel::new(0.3).is_ok());
    }

    #[test]
    fn distribution_canonicalizes() {
        let d = DiscreteDistribution::new([(2.0, 0.25), (1.0, 0.5), (2.0 + 1e-13, 0.25), (5.0, 0.0)]).unwrap();
        assert_eq!(d.atoms(), &[(1.0, 0.5), (2.0, 0.5)]);
        assert!(DiscreteDistribution::new([(1.0, 0.6)]).is_err());
        assert!(DiscreteDistribution::new([(1.0, -0.1), (2.0, 1.1)]).is_err());
        assert!(DiscreteDistribution::new([(f64::INFINITY, 1.0)]).is_err());
    }

    #[test]
    fn cvar_point_mass_is_constant() {
        let d = DiscreteDistribution::point_mass(-3.5).unwrap();
        for alpha in [0.01, 0.3, 0.99] {
            assert_eq!(cvar_exact(&d, a(alpha)), -3.5);
            assert_eq!(var_exact(&d, a(alpha)), -3.5);
        }
    }

    #[test]
    fn cvar_uniform_four_points() {
        let d = DiscreteDistribution::uniform(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let oracle = inf_form_oracle(&d, 0.5);
        assert!((oracle - 3.5).abs() < 1e-12);
        assert!((cvar_exact(&d, a(0.5)) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn cvar_matches_inf_form_on_random_tables() {
        let d = DiscreteDistribution::normalized([(-1.0, 0.3), (0.5, 0.1), (2.0, 0.45), (7.0, 0.15)]).unwrap();
        for alpha in [0.05, 0.1, 0.15, 0.2, 0.5, 0.6, 0.9] {
            assert!((cvar_exact(&d, a(alpha)) - inf_form_oracle(&d, alpha)).abs() < 1e-12, "alpha {alpha}");
        }
    }

    #[test]
    fn cvar_tends_to_mean() {
        let d = DiscreteDistribution::uniform(&[1.0, 2.0, 3.0, 10.0]).unwrap();
        let near_one = cvar_exact(&d, a(1.0 - 1e-12));
        assert!((near_one - d.mean()).abs() < 1e-9);
    }

    #[test]
    fn var_scan() {
        let d = DiscreteDistribution::uniform(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(var_exact(&d, a(0.5)), 2.0);
        assert_eq!(var_exact(&d, a(0.25)), 3.0);
        assert_eq!(var_exact(&d, a(0.9)), 1.0);
    }

    #[test]
    fn estimators_trivial_cases() {
        let s = EmpiricalSample::new(vec![4.0, 4.0, 4.0]).unwrap();
        assert_eq!(cvar_estimate_sorted(&s, a(0.2)), 4.0);
        assert_eq!(cvar_estimate_inf(&s, a(0.2)), 4.0);
        let s = EmpiricalSample::new(vec![5.0]).unwrap();
        assert_eq!(cvar_estimate_sorted(&s, a(0.7)), 5.0);
        let s = EmpiricalSample::new(vec![3.0, 1.0, 4.0, 2.0]).unwrap();
        assert!((cvar_estimate_sorted(&s, a(0.5)) - 3.5).abs() < 1e-12);
        assert!((cvar_estimate_inf(&s, a(0.5)) - 3.5).abs() < 1e-12);
        let s = EmpiricalSample::new(vec![0.0, 10.0]).unwrap();
        assert!((cvar_estimate_inf(&s, a(0.5)) - 10.0).abs() < 1e-12);
        assert!((cvar_estimate_sorted(&s, a(0.5)) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn estimator_is_translation_equivariant() {
        // a sample that does not contain zero
        let base = vec![3.0, 7.5, 9.0, 11.0, 2.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 100.0).collect();
        let s0 = EmpiricalSample::new(base).unwrap();
        let s1 = EmpiricalSample::new(shifted).unwrap();
        for alpha in [0.1, 0.3, 0.77] {
            let d = cvar_estimate_sorted(&s1, a(alpha)) - cvar_estimate_sorted(&s0, a(alpha));
            assert!((d - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_sample_rejected() {
        assert_eq!(EmpiricalSample::new(vec![]), Err(Error::EmptySample));
        assert_eq!(EmpiricalSample::new(vec![f64::NAN]), Err(Error::EmptySample));
    }

    #[test]
    fn counts_form_matches_expanded_sample() {
        let values = [-2.0, 0.5, 1.0, 3.0];
        let counts = [3u64, 0, 5, 2];
        let expanded: Vec<f64> = values
            .iter()
            .zip(counts)
            .flat_map(|(&v, c)| std::iter::repeat_n(v, c as usize))
            .collect();
        let s = EmpiricalSample::new(expanded).unwrap();
        for alpha in [0.05, 0.2, 0.5, 0.95] {
            let c = cvar_estimate_from_counts(&values, &counts, a(alpha)).unwrap();
            assert!((c - cvar_estimate_sorted(&s, a(alpha))).abs() < 1e-12);
        }
    }

    #[test]
    fn brown_radii_formula() {
        let r = brown_radii(1000, a(0.1), 0.05, 1.0).unwrap();
        let expected = (5.0 * 60f64.ln() / 100.0).sqrt();
        assert!((r.upper - expected).abs() < 1e-12);
        assert!((r.upper - 0.4525).abs() < 5e-4);
        let zero = brown_radii(10, a(0.1), 0.05, 0.0).unwrap();
        assert_eq!((zero.upper, zero.lower), (0.0, 0.0));
        let bigger = brown_radii(2000, a(0.1), 0.05, 1.0).unwrap();
        assert!(bigger.upper < r.upper && bigger.lower < r.lower);
        assert!(brown_radii(0, a(0.1), 0.05, 1.0).is_err());
        assert!(brown_radii(5, a(0.1), 0.0, 1.0).is_err());
    }
}
