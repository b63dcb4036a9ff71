use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use super::{
    binned_h, estimate_delta, multinomial_counts, n_delta_for_certify_tight, n_delta_for_certify_uniform,
    rollouts_from_belief, stream_rng, tags, BinGrid, BinnedH, DeltaEstimates, DeltaEstimator, ProposalQ0,
    RolloutConfig,
};
use crate::bounds::dominated_cdf;
use crate::error::{Error, Result};
use crate::pomdp::{Model, Policy, SimplifiedPair};
use crate::risk::{cvar_estimate_ascending, cvar_estimate_from_counts, ConfidenceLevel, DiscreteDistribution};
use crate::value::ValueQuery;

/// Which certified bound a record carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Lower bound for `eps_hat + alpha < 1`.
    L1,
    /// Lower bound for `eps_hat + alpha >= 1`.
    L2,
    /// Upper bound, defined when `alpha > eps_hat`.
    U,
    /// Lower bound from the estimated dominated CDF.
    TightLower,
}

impl BoundKind {
    pub fn label(self) -> &'static str {
        match self {
            BoundKind::L1 => "l1",
            BoundKind::L2 => "l2",
            BoundKind::U => "u",
            BoundKind::TightLower => "tight_lower",
        }
    }

    /// Lower bounds are violated from above, upper bounds from below.
    pub fn is_lower(self) -> bool {
        !matches!(self, BoundKind::U)
    }
}

/// A bound value with the parameters its finite-sample guarantee refers to.
/// With probability at least `1 - delta` the bound is off by at most `radius`
/// in its unfavourable direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifiedBound {
    pub kind: BoundKind,
    pub value: f64,
    pub alpha: f64,
    pub delta: f64,
    pub v: Option<f64>,
    pub eta: Option<f64>,
    pub n_delta_used: u64,
    pub n_delta_required: u64,
    pub c_used: usize,
    pub nx_used: usize,
    pub epsilon_hat: f64,
    pub b_bound: f64,
    pub radii: BTreeMap<&'static str, f64>,
    pub radius: f64,
}

impl CertifiedBound {
    /// Whether the guarantee event fails against the true value.
    pub fn violated_by(&self, q_true: f64) -> bool {
        if self.kind.is_lower() {
            self.value - q_true > self.radius
        } else {
            q_true - self.value > self.radius
        }
    }
}

/// A bound that could not be formed, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmittedBound {
    pub kind: BoundKind,
    pub reason: String,
    /// `true` when the formula itself is undefined (rather than the case
    /// simply not applying).
    pub inapplicable: bool,
}

/// Uniform certified bounds for one confidence level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformCertificate {
    pub bounds: Vec<CertifiedBound>,
    pub omitted: Vec<OmittedBound>,
    pub estimates: DeltaEstimates,
}

impl UniformCertificate {
    /// Fails when a lower-bound formula was undefined for these estimates.
    pub fn require_applicable(&self) -> Result<()> {
        match self.omitted.iter().find(|o| o.inapplicable) {
            Some(o) => Err(Error::InapplicableCase(o.reason.clone())),
            None => Ok(()),
        }
    }

    pub fn bound(&self, kind: BoundKind) -> Option<&CertifiedBound> {
        self.bounds.iter().find(|b| b.kind == kind)
    }
}

/// Certified tight lower bound plus the estimated CDF it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightCertificate {
    pub bound: CertifiedBound,
    pub f_hat: DiscreteDistribution,
    pub h: BinnedH,
    pub estimates: DeltaEstimates,
}

/// Sorted-sample CVaR of `sorted` at an arbitrary level in `(0, 1)`.
fn c_hat(sorted: &[f64], level: f64, what: &str) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InapplicableCase(format!(
            "CVaR level {what} = {level} lies outside (0, 1)"
        )));
    }
    Ok(cvar_estimate_ascending(sorted, level))
}

fn delta_estimates(q0: &ProposalQ0, n_delta: u64, seed: u64) -> Result<DeltaEstimates> {
    let mut rng = stream_rng(seed, tags::DELTA, 0);
    estimate_delta(q0, n_delta, &mut rng, DeltaEstimator::Exact)
}

fn simplified_returns(
    pair: &SimplifiedPair,
    policy: &Policy,
    query: &ValueQuery,
    config: &RolloutConfig,
) -> Result<Vec<f64>> {
    let mut r = rollouts_from_belief(pair, policy, &query.belief, query.action, config, Model::Simplified)?;
    r.sort_by(|a, b| a.total_cmp(b));
    Ok(r)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("delta = {delta} must lie in (0, 1)")))
    }
}

/// Uniform certified bounds from simplified-model rollouts and an estimated
/// `eps_hat`. The lower bound is `L1` when `eps_hat + alpha < 1` and `L2`
/// otherwise; `U` is formed only when `alpha > eps_hat`. `L1` is recorded as
/// inapplicable when its second CVaR level `eps_hat - 4v` leaves `(0, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn certify_uniform(
    pair: &SimplifiedPair,
    policy: &Policy,
    query: &ValueQuery,
    config: &RolloutConfig,
    q0: &ProposalQ0,
    n_delta: u64,
    v: f64,
    delta: f64,
) -> Result<UniformCertificate> {
    check_delta(delta)?;
    let pomdp = pair.original();
    let required = n_delta_for_certify_uniform(v, delta, q0.b_bound(), pomdp.horizon_t(), pomdp.start_k())?;
    if n_delta < required {
        return Err(Error::InvalidParameter(format!(
            "N_delta = {n_delta} is below the required {required} for v = {v}, delta = {delta}"
        )));
    }
    let estimates = delta_estimates(q0, n_delta, config.seed)?;
    let returns = simplified_returns(pair, policy, query, config)?;
    Ok(uniform_from_parts(query.alpha, &returns, estimates, pomdp.return_bound(), config, v, delta, required))
}

#[allow(clippy::too_many_arguments)]
fn uniform_from_parts(
    alpha: ConfidenceLevel,
    sorted: &[f64],
    estimates: DeltaEstimates,
    rb: f64,
    config: &RolloutConfig,
    v: f64,
    delta: f64,
    required: u64,
) -> UniformCertificate {
    let a = alpha.value();
    let eh = estimates.epsilon_hat;
    let c = sorted.len() as f64;
    let base = |kind, value, radii: BTreeMap<&'static str, f64>| {
        let radius = radii.values().sum();
        CertifiedBound {
            kind,
            value,
            alpha: a,
            delta,
            v: Some(v),
            eta: None,
            n_delta_used: estimates.n_delta,
            n_delta_required: required,
            c_used: sorted.len(),
            nx_used: config.num_particles,
            epsilon_hat: eh,
            b_bound: estimates.b_bound,
            radii,
            radius,
        }
    };
    let mut bounds = Vec::new();
    let mut omitted = Vec::new();

    if eh + a < 1.0 {
        let l1 = c_hat(sorted, a + eh, "alpha + eps_hat").and_then(|hi| {
            let lo = c_hat(sorted, eh - 4.0 * v, "eps_hat - 4v")?;
            Ok((a + eh - 4.0 * v) / a * hi - eh / a * lo)
        });
        match l1 {
            Ok(value) => {
                let lambda1 = -(2.0 * rb / a) * ((4.0 / delta).ln() / (2.0 * c)).sqrt();
                let lambda2 = eh.sqrt() / a * 2.0 * rb * (5.0 * (12.0 / delta).ln() / c).sqrt();
                bounds.push(base(
                    BoundKind::L1,
                    value,
                    BTreeMap::from([("lambda1", lambda1), ("lambda2", lambda2)]),
                ));
            }
            Err(e) => omitted.push(OmittedBound {
                kind: BoundKind::L1,
                reason: e.to_string(),
                inapplicable: true,
            }),
        }
    } else {
        let mean = sorted.iter().sum::<f64>() / c;
        let value = (mean - (eh + 4.0 * v) * cvar_estimate_ascending(sorted, a) - (a + eh + 4.0 * v - 1.0) * rb) / a;
        let eta1 = (-(delta / 4.0).ln() * rb / (c * c * a * a)).sqrt();
        let eta2 = 2.0 * (eh + 4.0 * v).sqrt() / a * rb * (5.0 * (12.0 / delta).ln() / c).sqrt();
        bounds.push(base(BoundKind::L2, value, BTreeMap::from([("eta1", eta1), ("eta2", eta2)])));
    }

    if a > eh {
        let value = (a - eh + 4.0 * v) / a * cvar_estimate_ascending(sorted, a - eh) + eh / a * rb;
        let lambda = 2.0 * rb * (a - eh).sqrt() / a * (5.0 * (6.0 / delta).ln() / c).sqrt();
        bounds.push(base(BoundKind::U, value, BTreeMap::from([("lambda", lambda)])));
    } else {
        omitted.push(OmittedBound {
            kind: BoundKind::U,
            reason: format!("alpha = {a} does not exceed eps_hat = {eh}"),
            inapplicable: false,
        });
    }
    UniformCertificate {
        bounds,
        omitted,
        estimates,
    }
}

/// First value `l` with `F(l) >= u`.
pub fn inverse_transform(dist: &DiscreteDistribution, u: f64) -> f64 {
    let mut acc = 0.0;
    for &(x, p) in dist.atoms() {
        acc += p;
        if acc >= u {
            return x;
        }
    }
    dist.max()
}

/// `n` iid draws from `dist` by inverse transform.
pub fn sample_inverse_transform<R: Rng>(dist: &DiscreteDistribution, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| inverse_transform(dist, rng.random())).collect()
}

/// Whether `dist` is a valid step CDF: positive atoms, strictly increasing
/// support, total mass one.
pub fn is_valid_step_cdf(dist: &DiscreteDistribution) -> bool {
    let atoms = dist.atoms();
    !atoms.is_empty()
        && atoms.iter().all(|a| a.1 > 0.0 && a.0.is_finite())
        && atoms.windows(2).all(|w| w[0].0 < w[1].0)
        && (atoms.iter().map(|a| a.1).sum::<f64>() - 1.0).abs() <= 1e-9
}

/// `min(1, F_C + h_plus + eta 1{l >= k_0})` where `F_C` is the empirical CDF
/// of simplified rollout returns.
pub fn estimated_dominated_cdf(
    sorted_returns: &[f64],
    h: &BinnedH,
    eta: f64,
) -> Result<DiscreteDistribution> {
    let c = sorted_returns.len() as f64;
    let ecdf = DiscreteDistribution::new(sorted_returns.iter().map(|&r| (r, 1.0 / c)))?;
    let env = h.h_plus.add_constant_from(h.grid.edges()[0], eta)?;
    dominated_cdf(&ecdf, &env)
}

/// Certified lower bound from `N_delta` draws of the estimated dominated CDF.
///
/// Draw counts per atom are multinomial, which has the same law as `N_delta`
/// iid inverse-transform draws; only the counts enter the estimator.
#[allow(clippy::too_many_arguments)]
pub fn certify_tight_lower(
    pair: &SimplifiedPair,
    policy: &Policy,
    query: &ValueQuery,
    config: &RolloutConfig,
    q0: &ProposalQ0,
    n_delta: u64,
    eta: f64,
    delta: f64,
    grid: &BinGrid,
) -> Result<TightCertificate> {
    check_delta(delta)?;
    let pomdp = pair.original();
    let rb = pomdp.return_bound();
    if !grid.covers(rb) {
        return Err(Error::InvalidParameter(format!(
            "bin edges must span the return range [-{rb}, {rb}]"
        )));
    }
    let required = n_delta_for_certify_tight(eta, delta, q0.b_bound(), pomdp.horizon_t(), pomdp.start_k(), grid.bins())?;
    if n_delta < required {
        return Err(Error::InvalidParameter(format!(
            "N_delta = {n_delta} is below the required {required} for eta = {eta}, delta = {delta}"
        )));
    }
    let estimates = delta_estimates(q0, n_delta, config.seed)?;
    let g_on_edges: Vec<f64> = grid.edges().iter().map(|&e| estimates.g_hat.eval(e)).collect();
    let h = binned_h(&g_on_edges, grid)?;
    let returns = simplified_returns(pair, policy, query, config)?;
    let f_hat = estimated_dominated_cdf(&returns, &h, eta)?;
    let mut rng = stream_rng(config.seed, tags::INVERSE, 0);
    let probs: Vec<f64> = f_hat.atoms().iter().map(|a| a.1).collect();
    let counts = multinomial_counts(&probs, n_delta, &mut rng);
    let values: Vec<f64> = f_hat.atoms().iter().map(|a| a.0).collect();
    let a = query.alpha.value();
    let value = cvar_estimate_from_counts(&values, &counts, query.alpha)?;
    let radius = 2.0 * rb / a * ((4.0 / delta).ln() / (2.0 * n_delta as f64)).sqrt();
    let bound = CertifiedBound {
        kind: BoundKind::TightLower,
        value,
        alpha: a,
        delta,
        v: None,
        eta: Some(eta),
        n_delta_used: n_delta,
        n_delta_required: required,
        c_used: returns.len(),
        nx_used: config.num_particles,
        epsilon_hat: estimates.epsilon_hat,
        b_bound: estimates.b_bound,
        radii: BTreeMap::from([("v", radius)]),
        radius,
    };
    Ok(TightCertificate {
        bound,
        f_hat,
        h,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_transform_takes_jump_location() {
        let d = DiscreteDistribution::new([(0.0, 0.25), (1.0, 0.5), (3.0, 0.25)]).unwrap();
        assert_eq!(inverse_transform(&d, 0.1), 0.0);
        assert_eq!(inverse_transform(&d, 0.25), 0.0);
        assert_eq!(inverse_transform(&d, 0.26), 1.0);
        assert_eq!(inverse_transform(&d, 0.999), 3.0);
        let mut rng = stream_rng(0, 0, 0);
        let draws = sample_inverse_transform(&d, 40_000, &mut rng);
        let ones = draws.iter().filter(|&&x| x == 1.0).count() as f64 / 40_000.0;
        assert!((ones - 0.5).abs() < 0.02);
    }

    #[test]
    fn uniform_case_selection() {
        let sorted: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let cfg = RolloutConfig::new(100, 1, 0).unwrap();
        let est = |eh: f64| DeltaEstimates {
            n_delta: 10,
            b_bound: 1.0,
            m_hat: vec![eh],
            epsilon_hat: eh,
            g_hat: crate::bounds::PointwiseEnvelope::zero(),
        };
        let a = ConfidenceLevel::new(0.25).unwrap();
        let c = uniform_from_parts(a, &sorted, est(0.3), 10.0, &cfg, 0.05, 0.1, 1);
        assert!(c.bound(BoundKind::L1).is_some());
        assert!(c.bound(BoundKind::U).is_none());
        assert!(c.require_applicable().is_ok());
        assert!(c.bound(BoundKind::L1).unwrap().radii["lambda1"] < 0.0);
        let c = uniform_from_parts(a, &sorted, est(0.1), 10.0, &cfg, 0.05, 0.1, 1);
        assert!(c.bound(BoundKind::U).is_some());
        assert!(matches!(c.require_applicable(), Err(Error::InapplicableCase(_))));
        let c = uniform_from_parts(a, &sorted, est(0.9), 10.0, &cfg, 0.05, 0.1, 1);
        assert!(c.bound(BoundKind::L2).is_some());
    }

    #[test]
    fn zero_envelope_reduces_to_empirical() {
        let sorted = vec![1.0, 2.0, 2.0, 5.0];
        let grid = BinGrid::for_return_range(10.0, 4).unwrap();
        let h = binned_h(&[0.0; 5], &grid).unwrap();
        let f = estimated_dominated_cdf(&sorted, &h, 0.0).unwrap();
        assert_eq!(f.atoms(), &[(1.0, 0.25), (2.0, 0.5), (5.0, 0.25)]);
        let f = estimated_dominated_cdf(&sorted, &h, 0.1).unwrap();
        assert!(is_valid_step_cdf(&f));
        assert_eq!(f.atoms()[0], (-10.0, 0.1));
    }
}
