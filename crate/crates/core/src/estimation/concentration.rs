use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{
    certify_tight_lower, certify_uniform, estimate_delta, is_valid_step_cdf, sample_inverse_transform, seed_for,
    stream_rng, tags, BinGrid, BoundKind, DeltaEstimator, ProposalQ0, RolloutConfig,
};
use crate::bounds::PointwiseEnvelope;
use crate::error::{Error, Result};
use crate::pomdp::{Policy, SimplifiedPair};
use crate::risk::{brown_radii, cvar_estimate_sorted, cvar_exact, ConfidenceLevel, DiscreteDistribution, EmpiricalSample};
use crate::value::ValueQuery;

/// p-values below this flag a violation count as inconsistent with `delta`.
pub const BINOMIAL_LEVEL: f64 = 0.01;

/// Observed violation frequency of one probabilistic guarantee.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationRate {
    pub guarantee: String,
    pub event: String,
    pub trials: usize,
    pub violations: usize,
    pub delta: f64,
    pub frequency: f64,
    /// `P(Binomial(trials, delta) >= violations)`.
    pub binomial_p_value: f64,
    /// `frequency <= delta`.
    pub frequency_pass: bool,
    /// `binomial_p_value >= BINOMIAL_LEVEL`.
    pub binomial_pass: bool,
}

impl ViolationRate {
    pub fn new(guarantee: &str, event: &str, trials: usize, violations: usize, delta: f64) -> Self {
        let frequency = if trials == 0 { 0.0 } else { violations as f64 / trials as f64 };
        let binomial_p_value = if violations == 0 {
            1.0
        } else {
            Binomial::new(delta, trials as u64)
                .map(|b| b.sf(violations as u64 - 1))
                .unwrap_or(f64::NAN)
        };
        Self {
            guarantee: guarantee.to_string(),
            event: event.to_string(),
            trials,
            violations,
            delta,
            frequency,
            binomial_p_value,
            frequency_pass: frequency <= delta,
            binomial_pass: binomial_p_value >= BINOMIAL_LEVEL,
        }
    }
}

/// Seed of trial `t` of a study seeded with `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    seed_for(seed_for(seed, tags::TRIALS), t as u64)
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        Err(Error::InvalidParameter("need at least one trial".into()))
    } else {
        Ok(())
    }
}

fn count<T: Sync>(outcomes: &[T], f: impl Fn(&T) -> bool + Sync) -> usize {
    outcomes.par_iter().filter(|o| f(o)).count()
}

/// Upper and lower deviation of the sorted-sample CVaR estimator against the
/// radii for samples of size `n` drawn from `dist`.
pub fn cvar_deviation_trials(
    dist: &DiscreteDistribution,
    n: usize,
    alpha: ConfidenceLevel,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<ViolationRate>> {
    check_trials(trials)?;
    let radii = brown_radii(n, alpha, delta, dist.max() - dist.min())?;
    let truth = cvar_exact(dist, alpha);
    let errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(trial_seed(seed, t), tags::SAMPLES, 0);
            let sample = EmpiricalSample::new(sample_inverse_transform(dist, n, &mut rng))?;
            Ok(truth - cvar_estimate_sorted(&sample, alpha))
        })
        .collect::<Result<_>>()?;
    Ok(vec![
        ViolationRate::new(
            "cvar_deviation",
            "upper",
            trials,
            count(&errors, |&e| e > radii.upper),
            delta,
        ),
        ViolationRate::new(
            "cvar_deviation",
            "lower",
            trials,
            count(&errors, |&e| e < -radii.lower),
            delta,
        ),
    ])
}

/// `|eps_hat - eps| > 2v` at `n_delta` draws.
pub fn epsilon_trials(
    q0: &ProposalQ0,
    epsilon: f64,
    n_delta: u64,
    v: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<ViolationRate> {
    check_trials(trials)?;
    let estimates: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(trial_seed(seed, t), tags::DELTA, 0);
            Ok(estimate_delta(q0, n_delta, &mut rng, DeltaEstimator::Exact)?.epsilon_hat)
        })
        .collect::<Result<_>>()?;
    let violations = count(&estimates, |&e| (e - epsilon).abs() > 2.0 * v);
    Ok(ViolationRate::new("epsilon", "abs_error_above_2v", trials, violations, delta))
}

/// `|g_hat(l) - g(l)| > v` at each `l` in `points`, one rate per point.
#[allow(clippy::too_many_arguments)]
pub fn g_trials(
    q0: &ProposalQ0,
    g: &PointwiseEnvelope,
    points: &[f64],
    n_delta: u64,
    v: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<ViolationRate>> {
    check_trials(trials)?;
    let estimates: Vec<PointwiseEnvelope> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(trial_seed(seed, t), tags::DELTA, 0);
            Ok(estimate_delta(q0, n_delta, &mut rng, DeltaEstimator::Exact)?.g_hat)
        })
        .collect::<Result<_>>()?;
    Ok(points
        .iter()
        .map(|&l| {
            let truth = g.eval(l);
            let violations = count(&estimates, |e| (e.eval(l) - truth).abs() > v);
            ViolationRate::new("g", &format!("abs_error_above_v_at_l={l}"), trials, violations, delta)
        })
        .collect())
}

/// Outcome of the binned-envelope study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HStudy {
    /// `sup (g - h_plus) > v` and `sup (h_minus - g) > v` over the bins.
    pub rates: Vec<ViolationRate>,
    /// Trials in which `h_minus <= g_hat <= h_plus` failed at an edge, or
    /// `h_minus <= h_plus` failed inside a bin.
    pub ordering_failures: usize,
}

/// Binned envelopes from `n_delta` draws against the exact `g`.
#[allow(clippy::too_many_arguments)]
pub fn h_trials(
    q0: &ProposalQ0,
    g: &PointwiseEnvelope,
    grid: &BinGrid,
    n_delta: u64,
    v: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<HStudy> {
    check_trials(trials)?;
    let outcomes: Vec<(f64, f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(trial_seed(seed, t), tags::DELTA, 0);
            let g_hat = estimate_delta(q0, n_delta, &mut rng, DeltaEstimator::Exact)?.g_hat;
            let on_edges: Vec<f64> = grid.edges().iter().map(|&e| g_hat.eval(e)).collect();
            let h = super::binned_h(&on_edges, grid)?;
            let at_edges = grid.edges().iter().enumerate().all(|(i, &e)| {
                let gh = h.g_on_edges[i];
                gh <= h.h_plus.eval(e) && (i == 0 || (h.h_minus(e) <= gh && gh <= h.h_plus_literal(e)))
            });
            let inside = grid.edges().windows(2).all(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                h.h_minus(mid) <= h.h_plus_literal(mid) && h.h_plus_literal(mid) <= h.h_plus.eval(mid)
            });
            let ordered = at_edges && inside;
            Ok((h.sup_gap_plus(g), h.sup_gap_minus(g), ordered))
        })
        .collect::<Result<_>>()?;
    Ok(HStudy {
        rates: vec![
            ViolationRate::new("h", "plus_gap_above_v", trials, count(&outcomes, |o| o.0 > v), delta),
            ViolationRate::new("h", "minus_gap_above_v", trials, count(&outcomes, |o| o.1 > v), delta),
        ],
        ordering_failures: count(&outcomes, |o| !o.2),
    })
}

/// Settings of the certified-bound study.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedStudy {
    pub rollouts: usize,
    pub particles: usize,
    pub v: f64,
    pub eta: f64,
    pub delta: f64,
    pub n_delta_uniform: u64,
    pub n_delta_tight: u64,
    pub grid: BinGrid,
}

/// Outcome of the certified-bound study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifiedOutcome {
    /// One rate per bound kind that was formed in at least one trial; the
    /// trial count is the number of trials in which it was formed.
    pub rates: Vec<ViolationRate>,
    /// Trials in which the estimated dominated CDF was not a valid CDF.
    pub invalid_f_hat: usize,
    /// Trials in which a lower-bound formula was undefined.
    pub inapplicable: usize,
}

/// Per-trial `(kind, violated)` events, F_hat validity and L1 inapplicability.
type TrialOutcome = (Vec<(BoundKind, bool)>, bool, bool);

/// Repeats the uniform and tight certifications with fresh seeds and counts
/// how often each bound misses `q_true` by more than its radius.
#[allow(clippy::too_many_arguments)]
pub fn certified_trials(
    pair: &SimplifiedPair,
    policy: &Policy,
    query: &ValueQuery,
    q_true: f64,
    q0: &ProposalQ0,
    study: &CertifiedStudy,
    trials: usize,
    seed: u64,
) -> Result<CertifiedOutcome> {
    check_trials(trials)?;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let config = RolloutConfig::new(study.rollouts, study.particles, trial_seed(seed, t))?;
            let uniform = certify_uniform(pair, policy, query, &config, q0, study.n_delta_uniform, study.v, study.delta)?;
            let tight = certify_tight_lower(
                pair,
                policy,
                query,
                &config,
                q0,
                study.n_delta_tight,
                study.eta,
                study.delta,
                &study.grid,
            )?;
            let mut events: Vec<(BoundKind, bool)> =
                uniform.bounds.iter().map(|b| (b.kind, b.violated_by(q_true))).collect();
            events.push((BoundKind::TightLower, tight.bound.violated_by(q_true)));
            Ok((events, is_valid_step_cdf(&tight.f_hat), uniform.require_applicable().is_err()))
        })
        .collect::<Result<_>>()?;
    let rates = [BoundKind::L1, BoundKind::L2, BoundKind::U, BoundKind::TightLower]
        .into_iter()
        .filter_map(|kind| {
            let formed: Vec<bool> = outcomes
                .iter()
                .flat_map(|o| o.0.iter().filter(|e| e.0 == kind).map(|e| e.1))
                .collect();
            (!formed.is_empty()).then(|| {
                let violations = formed.iter().filter(|&&v| v).count();
                ViolationRate::new("certified", kind.label(), formed.len(), violations, study.delta)
            })
        })
        .collect();
    Ok(CertifiedOutcome {
        rates,
        invalid_f_hat: count(&outcomes, |o| !o.1),
        inapplicable: count(&outcomes, |o| o.2),
    })
}
