//! Exact CVaR value functions and their bounds from the simplified model,
//! computed by enumeration. These are the oracle values the Monte-Carlo
//! estimators are validated against.

use serde::Serialize;

use crate::bounds::{
    lower_case, tight_lower, uniform_lower, uniform_upper, upper_case, LowerCase, SupportBounds, UniformEnvelope,
    UpperCase,
};
use crate::error::Result;
use crate::pomdp::{
    enumerate_return_distribution, enumerate_trajectory_expectations, Belief, EnumerationOptions, Model, Policy,
    SimplifiedPair, TrajectoryExpectations,
};
use crate::risk::{cvar_exact, ConfidenceLevel, DiscreteDistribution};

/// A value (`action == None`) or Q-value query at a belief.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueQuery {
    pub belief: Belief,
    pub action: Option<usize>,
    pub alpha: ConfidenceLevel,
}

/// Exact CVaR of the return from `query.belief` under `model`.
pub fn q_exact(
    pair: &SimplifiedPair,
    policy: &Policy,
    query: &ValueQuery,
    model: Model,
    opts: EnumerationOptions,
) -> Result<f64> {
    let d = enumerate_return_distribution(pair, policy, &query.belief, query.action, model, opts)?;
    Ok(cvar_exact(&d, query.alpha))
}

/// Uniform bounds `(lower, upper, epsilon)` with support `±R_max (T-k+1)`.
pub fn q_bounds_uniform(
    pair: &SimplifiedPair,
    policy: &Policy,
    query: &ValueQuery,
    opts: EnumerationOptions,
) -> Result<(f64, f64, f64)> {
    let analysis = ExactAnalysis::new(pair, policy, &query.belief, query.action, &[], opts)?;
    let r = analysis.report(query.alpha, false)?;
    Ok((r.lower_uniform, r.upper_uniform, r.epsilon))
}

/// Lower bound from the dominated CDF `min(1, F_{P_s} + g)`.
pub fn q_lower_tight(
    pair: &SimplifiedPair,
    policy: &Policy,
    query: &ValueQuery,
    opts: EnumerationOptions,
) -> Result<f64> {
    let analysis = ExactAnalysis::new(pair, policy, &query.belief, query.action, &[], opts)?;
    tight_lower(&analysis.dist_simplified, &analysis.expectations.envelope, query.alpha)
}

/// All exact bounds for one confidence level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub alpha: f64,
    pub q_true: f64,
    pub q_simplified: f64,
    pub lower_uniform: f64,
    pub upper_uniform: f64,
    pub lower_tight: f64,
    pub epsilon: f64,
    pub upper_case: UpperCase,
    pub lower_case: LowerCase,
    /// `lower_tight - lower_uniform`; diagnostic only.
    pub tight_gap: f64,
    /// Uniform bounds with the enumerated support of the original return.
    pub lower_uniform_enumerated: Option<f64>,
    pub upper_uniform_enumerated: Option<f64>,
    pub sandwich_ok: bool,
}

/// Tolerance of the sandwich verdicts.
pub const BOUND_TOL: f64 = 1e-9;

/// Return distributions under both models plus the exact envelope for one
/// `(b_k, a_k)`; reused across confidence levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactAnalysis {
    pub dist_original: DiscreteDistribution,
    pub dist_simplified: DiscreteDistribution,
    pub expectations: TrajectoryExpectations,
    pub support: SupportBounds,
    pub grid: Vec<f64>,
}

impl ExactAnalysis {
    /// With an empty `grid_l` the default grid (all atoms of both return
    /// distributions and the midpoints between consecutive ones) is used.
    pub fn new(
        pair: &SimplifiedPair,
        policy: &Policy,
        belief: &Belief,
        action: Option<usize>,
        grid_l: &[f64],
        opts: EnumerationOptions,
    ) -> Result<Self> {
        let dist_original = enumerate_return_distribution(pair, policy, belief, action, Model::Original, opts)?;
        let dist_simplified = enumerate_return_distribution(pair, policy, belief, action, Model::Simplified, opts)?;
        let grid = if grid_l.is_empty() {
            default_grid(&dist_original, &dist_simplified)
        } else {
            grid_l.to_vec()
        };
        let expectations = enumerate_trajectory_expectations(pair, policy, belief, action, &grid, opts)?;
        let support = SupportBounds::symmetric(pair.original().return_bound())?;
        Ok(Self {
            dist_original,
            dist_simplified,
            expectations,
            support,
            grid,
        })
    }

    pub fn report(&self, alpha: ConfidenceLevel, enumerated_support: bool) -> Result<BoundReport> {
        let eps = self.expectations.epsilon;
        let env = UniformEnvelope::new(eps)?;
        let q_true = cvar_exact(&self.dist_original, alpha);
        let q_simplified = cvar_exact(&self.dist_simplified, alpha);
        let lower_uniform = uniform_lower(&self.dist_simplified, alpha, env, self.support);
        let upper_uniform = uniform_upper(&self.dist_simplified, alpha, env, self.support);
        let lower_tight = tight_lower(&self.dist_simplified, &self.expectations.envelope, alpha)?;
        let (lower_uniform_enumerated, upper_uniform_enumerated) = if enumerated_support {
            let s = SupportBounds::new(self.dist_original.min(), self.dist_original.max())?;
            (
                Some(uniform_lower(&self.dist_simplified, alpha, env, s)),
                Some(uniform_upper(&self.dist_simplified, alpha, env, s)),
            )
        } else {
            (None, None)
        };
        let sandwich_ok = lower_uniform <= q_true + BOUND_TOL
            && q_true <= upper_uniform + BOUND_TOL
            && lower_tight <= q_true + BOUND_TOL;
        Ok(BoundReport {
            alpha: alpha.value(),
            q_true,
            q_simplified,
            lower_uniform,
            upper_uniform,
            lower_tight,
            epsilon: eps,
            upper_case: upper_case(eps, alpha),
            lower_case: lower_case(eps, alpha),
            tight_gap: lower_tight - lower_uniform,
            lower_uniform_enumerated,
            upper_uniform_enumerated,
            sandwich_ok,
        })
    }
}

/// Atoms of both distributions plus midpoints between consecutive values.
pub fn default_grid(a: &DiscreteDistribution, b: &DiscreteDistribution) -> Vec<f64> {
    let mut xs: Vec<f64> = a.atoms().iter().chain(b.atoms()).map(|x| x.0).collect();
    xs.sort_by(|p, q| p.total_cmp(q));
    xs.dedup();
    let mids: Vec<f64> = xs.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    xs.extend(mids);
    xs.sort_by(|p, q| p.total_cmp(q));
    xs
}
