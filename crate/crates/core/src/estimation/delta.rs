use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::multinomial_counts;
use crate::bounds::{density_envelope_to_g, PointwiseEnvelope};
use crate::error::{Error, Result};
use crate::pomdp::{
    envelope_threshold, simplified_nodes, Belief, EnumerationOptions, EnvelopeTerm, Policy, SimplifiedPair,
};

/// A delta belief: a belief reachable under the simplified model together
/// with the prefix return accumulated on the way.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalElement {
    pub belief: Belief,
    pub prefix_return: f64,
    pub proposal_prob: f64,
    /// `P_s(b_i = belief, R_{k+1:i} = prefix | b_k, pi)` for `i = k+1..=T-1`.
    pub target_prob: Vec<f64>,
    /// `pi_i(belief)` per sampled step.
    pub action: Vec<usize>,
    /// `Delta(belief, pi_i(belief))` per sampled step.
    pub tv: Vec<f64>,
    /// Envelope threshold per sampled step.
    pub threshold: Vec<f64>,
}

/// Proposal distribution over delta beliefs with the exact importance ratios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalQ0 {
    elements: Vec<ProposalElement>,
    /// The exactly known step-`k` envelope term.
    first_term: EnvelopeTerm,
    start_k: usize,
    horizon_t: usize,
    /// `max_j target_ij / q_j` per sampled step.
    b_per_step: Vec<f64>,
}

impl ProposalQ0 {
    /// Default proposal: half the step-averaged simplified marginal, half
    /// uniform over every reachable delta belief. The importance bound is at
    /// most `2 (T - 1 - k)`.
    pub fn build(
        pair: &SimplifiedPair,
        policy: &Policy,
        b_k: &Belief,
        first_action: Option<usize>,
        opts: EnumerationOptions,
    ) -> Result<Self> {
        Self::build_mixture(pair, policy, b_k, first_action, opts, 0.5)
    }

    /// Proposal `mix * averaged marginal + (1 - mix) * uniform`.
    pub fn build_mixture(
        pair: &SimplifiedPair,
        policy: &Policy,
        b_k: &Belief,
        first_action: Option<usize>,
        opts: EnumerationOptions,
        mix: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix) {
            return Err(Error::InvalidParameter(format!("mixture weight {mix} must lie in [0, 1]")));
        }
        let pomdp = pair.original();
        let (k, horizon, r_max) = (pomdp.start_k(), pomdp.horizon_t(), pomdp.r_max());
        let a_k = first_action.unwrap_or_else(|| policy.action(k, b_k));
        let first_cost = pair.belief_cost(b_k, a_k);
        let first_term = EnvelopeTerm {
            step: k,
            threshold: envelope_threshold(0.0, first_cost, horizon, k, r_max),
            weight: if k < horizon { pair.tv_distance(b_k, a_k) } else { 0.0 },
        };
        let steps = super::sampled_steps(horizon, k);
        let mut elements: Vec<ProposalElement> = Vec::new();
        for node in simplified_nodes(pair, policy, b_k, first_action, opts)? {
            let s = node.step - k - 1;
            let slot = elements
                .iter_mut()
                .find(|e| (e.prefix_return - node.prefix_return).abs() <= 1e-12 && e.belief.approx_eq(&node.belief, 1e-12));
            let e = match slot {
                Some(e) => e,
                None => {
                    elements.push(ProposalElement {
                        belief: node.belief.clone(),
                        prefix_return: node.prefix_return,
                        proposal_prob: 0.0,
                        target_prob: vec![0.0; steps],
                        action: vec![0; steps],
                        tv: vec![0.0; steps],
                        threshold: vec![0.0; steps],
                    });
                    elements.last_mut().expect("just pushed")
                }
            };
            e.target_prob[s] += node.probability;
            e.action[s] = node.action;
            e.tv[s] = node.tv;
            e.threshold[s] = envelope_threshold(node.prefix_return, first_cost, horizon, node.step, r_max);
        }
        let n = elements.len();
        let probs: Vec<f64> = elements
            .iter()
            .map(|e| mix * e.target_prob.iter().sum::<f64>() / steps as f64 + (1.0 - mix) / n as f64)
            .collect();
        Self::from_parts(elements, probs, first_term, k, horizon)
    }

    fn from_parts(
        mut elements: Vec<ProposalElement>,
        probs: Vec<f64>,
        first_term: EnvelopeTerm,
        start_k: usize,
        horizon_t: usize,
    ) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if !elements.is_empty() && (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("proposal sums to {total}, not 1")));
        }
        let steps = super::sampled_steps(horizon_t, start_k);
        let mut b_per_step = vec![0.0_f64; steps];
        for (e, &q) in elements.iter_mut().zip(&probs) {
            if !(q.is_finite() && q >= 0.0) {
                return Err(Error::InvalidParameter(format!("proposal probability {q} is invalid")));
            }
            for (s, &p) in e.target_prob.iter().enumerate() {
                if p > 0.0 {
                    if q <= 0.0 {
                        return Err(Error::UnsupportedBelief(format!(
                            "belief {:?} has target probability {p} at step {} but zero proposal probability",
                            e.belief.probs(),
                            start_k + 1 + s
                        )));
                    }
                    b_per_step[s] = b_per_step[s].max(p / q);
                }
            }
            e.proposal_prob = q;
        }
        Ok(Self {
            elements,
            first_term,
            start_k,
            horizon_t,
            b_per_step,
        })
    }

    /// Same support with caller-chosen proposal probabilities.
    pub fn with_proposal(&self, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != self.elements.len() {
            return Err(Error::InvalidParameter(format!(
                "proposal has {} entries, support has {}",
                probs.len(),
                self.elements.len()
            )));
        }
        Self::from_parts(self.elements.clone(), probs, self.first_term, self.start_k, self.horizon_t)
    }

    pub fn elements(&self) -> &[ProposalElement] {
        &self.elements
    }

    pub fn first_term(&self) -> EnvelopeTerm {
        self.first_term
    }

    pub fn start_k(&self) -> usize {
        self.start_k
    }

    pub fn horizon_t(&self) -> usize {
        self.horizon_t
    }

    pub fn b_per_step(&self) -> &[f64] {
        &self.b_per_step
    }

    /// `B = max_i B_i` (at least one).
    pub fn b_bound(&self) -> f64 {
        self.b_per_step.iter().copied().fold(1.0, f64::max)
    }
}

/// Estimator of the TV distance used inside the importance-sampled sums.
#[derive(Clone, Copy)]
pub enum DeltaEstimator<'a> {
    /// The exact finite-model TV distance (unbiased).
    Exact,
    /// Caller-supplied estimate per draw `(belief, action, rng)`.
    Given(&'a (dyn Fn(&Belief, usize, &mut ChaCha8Rng) -> f64 + Sync)),
}

/// Importance-sampled estimates from one batch of delta-belief draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaEstimates {
    pub n_delta: u64,
    pub b_bound: f64,
    /// Entry 0 is the exact step-`k` term; then one entry per sampled step.
    pub m_hat: Vec<f64>,
    pub epsilon_hat: f64,
    /// `g_hat` as a right-continuous step function.
    pub g_hat: PointwiseEnvelope,
}

/// Draws `n_delta` delta beliefs from `q0` and forms the per-step estimates,
/// `eps_hat` and the step function `g_hat`.
pub fn estimate_delta(
    q0: &ProposalQ0,
    n_delta: u64,
    rng: &mut ChaCha8Rng,
    estimator: DeltaEstimator<'_>,
) -> Result<DeltaEstimates> {
    if n_delta == 0 {
        return Err(Error::InvalidParameter("need at least one delta-belief draw".into()));
    }
    let probs: Vec<f64> = q0.elements.iter().map(|e| e.proposal_prob).collect();
    let counts = multinomial_counts(&probs, n_delta, rng);
    let nf = n_delta as f64;
    let steps = q0.b_per_step.len();
    let first = q0.first_term;
    let mut m_hat = vec![0.0; steps + 1];
    m_hat[0] = first.weight;
    let mut terms = vec![(first.threshold, first.weight)];
    for (e, &c) in q0.elements.iter().zip(&counts) {
        if c == 0 {
            continue;
        }
        for s in 0..steps {
            let p = e.target_prob[s];
            if p <= 0.0 {
                continue;
            }
            let delta_sum = match estimator {
                DeltaEstimator::Exact => c as f64 * e.tv[s],
                DeltaEstimator::Given(f) => (0..c).map(|_| f(&e.belief, e.action[s], rng)).sum(),
            };
            let contribution = p / e.proposal_prob * delta_sum / nf;
            m_hat[s + 1] += contribution;
            // negative plug-in estimates cannot enter a monotone envelope
            terms.push((e.threshold[s], contribution.max(0.0)));
        }
    }
    let epsilon_hat = m_hat.iter().sum();
    Ok(DeltaEstimates {
        n_delta,
        b_bound: q0.b_bound(),
        m_hat,
        epsilon_hat,
        g_hat: density_envelope_to_g(&terms)?,
    })
}

/// `eps_hat` from `n_delta` draws.
pub fn estimate_epsilon(q0: &ProposalQ0, n_delta: u64, rng: &mut ChaCha8Rng, estimator: DeltaEstimator<'_>) -> Result<f64> {
    Ok(estimate_delta(q0, n_delta, rng, estimator)?.epsilon_hat)
}

/// `g_hat(l)` at every `l` in `grid_l` from `n_delta` draws.
pub fn estimate_g(
    q0: &ProposalQ0,
    n_delta: u64,
    grid_l: &[f64],
    rng: &mut ChaCha8Rng,
    estimator: DeltaEstimator<'_>,
) -> Result<Vec<f64>> {
    let est = estimate_delta(q0, n_delta, rng, estimator)?;
    Ok(grid_l.iter().map(|&l| est.g_hat.eval(l)).collect())
}

/// Bin edges `k_0 < k_1 < ... < k_I`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinGrid {
    edges: Vec<f64>,
}

impl BinGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidParameter("a bin grid needs at least two edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("bin edges must be finite and strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    /// `bins` equal bins spanning `[-bound, bound]`.
    pub fn for_return_range(bound: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidParameter("need at least one bin".into()));
        }
        Self::new(crate::pomdp::linspace(-bound, bound, bins + 1))
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Number of bins `I`.
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn covers(&self, bound: f64) -> bool {
        self.edges[0] <= -bound && self.edges[self.edges.len() - 1] >= bound
    }

    /// Bin index `i` (1-based) with `l` in `(k_{i-1}, k_i]`.
    fn bin_of(&self, l: f64) -> Option<usize> {
        if l <= self.edges[0] || l > self.edges[self.edges.len() - 1] {
            return None;
        }
        Some(self.edges.partition_point(|&e| e < l))
    }
}

/// Binned envelopes built from `g_hat` at the bin edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedH {
    pub grid: BinGrid,
    pub g_on_edges: Vec<f64>,
    /// Right-continuous, monotone version of the upper envelope: on
    /// `[k_{i-1}, k_i)` it equals `max_{j <= i} g_hat(k_j)`, beyond `k_I` it
    /// stays at the last value and left of `k_0` it is zero. It dominates the
    /// literal bin function everywhere inside the bins.
    pub h_plus: PointwiseEnvelope,
}

impl BinnedH {
    /// `g_hat(k_i)` for `l` in `(k_{i-1}, k_i]`, zero outside the bins.
    pub fn h_plus_literal(&self, l: f64) -> f64 {
        self.grid.bin_of(l).map_or(0.0, |i| self.g_on_edges[i])
    }

    /// `g_hat(k_{i-1})` for `l` in `(k_{i-1}, k_i]`, zero outside the bins.
    pub fn h_minus(&self, l: f64) -> f64 {
        self.grid.bin_of(l).map_or(0.0, |i| self.g_on_edges[i - 1])
    }

    /// `sup_l { g(l) - h_plus_literal(l) }` over the binned range, for a
    /// non-decreasing right-continuous `g`.
    pub fn sup_gap_plus(&self, g: &PointwiseEnvelope) -> f64 {
        (1..self.g_on_edges.len())
            .map(|i| g.eval(self.grid.edges[i]) - self.g_on_edges[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sup_l { h_minus(l) - g(l) }` over the binned range.
    pub fn sup_gap_minus(&self, g: &PointwiseEnvelope) -> f64 {
        (0..self.g_on_edges.len() - 1)
            .map(|i| self.g_on_edges[i] - g.eval(self.grid.edges[i]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Upper and lower bin envelopes from `g_hat` evaluated at every edge.
pub fn binned_h(g_on_edges: &[f64], grid: &BinGrid) -> Result<BinnedH> {
    if g_on_edges.len() != grid.edges.len() {
        return Err(Error::InvalidParameter(format!(
            "{} g values for {} edges",
            g_on_edges.len(),
            grid.edges.len()
        )));
    }
    let mut running = 0.0_f64;
    let mut breakpoints = Vec::with_capacity(grid.bins());
    for i in 1..grid.edges.len() {
        running = running.max(g_on_edges[i]);
        breakpoints.push((grid.edges[i - 1], running));
    }
    Ok(BinnedH {
        grid: grid.clone(),
        g_on_edges: g_on_edges.to_vec(),
        h_plus: PointwiseEnvelope::new(breakpoints)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::stream_rng;
    use crate::pomdp::{enumerate_trajectory_expectations, FinitePomdp, SuccessorUpdate};

    fn setup(noise_s: f64) -> (SimplifiedPair, Policy) {
        let t = vec![
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            vec![vec![0.9, 0.1], vec![0.9, 0.1]],
        ];
        let o = |e: f64| vec![vec![1.0 - e, e], vec![e, 1.0 - e]];
        let pomdp =
            FinitePomdp::new(t.clone(), o(0.1), vec![vec![0.0, 0.4], vec![1.0, 0.6]], 1.0, vec![0.6, 0.4], 3, 0).unwrap();
        let policy = Policy::new(&pomdp, vec![vec![0, 1]; 4]).unwrap();
        (SimplifiedPair::new(pomdp, t, o(noise_s), SuccessorUpdate::Shared).unwrap(), policy)
    }

    #[test]
    fn proposal_covers_target_with_bounded_ratio() {
        let (pair, policy) = setup(0.25);
        let b = pair.original().initial_belief();
        let q0 = ProposalQ0::build(&pair, &policy, &b, None, Default::default()).unwrap();
        let total: f64 = q0.elements().iter().map(|e| e.proposal_prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(q0.b_bound() <= 2.0 * 2.0 + 1e-12);
        for s in 0..2 {
            let mass: f64 = q0.elements().iter().map(|e| e.target_prob[s]).sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
        let mut zero = vec![0.0; q0.elements().len()];
        zero[0] = 1.0;
        assert!(matches!(q0.with_proposal(zero), Err(Error::UnsupportedBelief(_))));
    }

    #[test]
    fn identical_models_give_zero_estimates() {
        let (pair, policy) = setup(0.1);
        let b = pair.original().initial_belief();
        let q0 = ProposalQ0::build(&pair, &policy, &b, None, Default::default()).unwrap();
        let mut rng = stream_rng(1, 0, 0);
        assert_eq!(estimate_epsilon(&q0, 1000, &mut rng, DeltaEstimator::Exact).unwrap(), 0.0);
    }

    #[test]
    fn g_hat_saturates_and_vanishes() {
        let (pair, policy) = setup(0.25);
        let b = pair.original().initial_belief();
        let q0 = ProposalQ0::build(&pair, &policy, &b, None, Default::default()).unwrap();
        let mut rng = stream_rng(2, 0, 0);
        let est = estimate_delta(&q0, 5000, &mut rng, DeltaEstimator::Exact).unwrap();
        assert!((est.g_hat.eval(100.0) - est.epsilon_hat).abs() < 1e-12);
        assert_eq!(est.g_hat.eval(-100.0), 0.0);
        let exact = enumerate_trajectory_expectations(&pair, &policy, &b, None, &[], Default::default()).unwrap();
        assert_eq!(est.m_hat[0], exact.per_step_m[0]);
    }

    #[test]
    fn bins_order_at_edges() {
        let grid = BinGrid::for_return_range(2.0, 4).unwrap();
        let g = [0.0, 0.1, 0.1, 0.3, 0.4];
        let h = binned_h(&g, &grid).unwrap();
        for (i, &e) in grid.edges().iter().enumerate().skip(1) {
            assert!(h.h_minus(e) <= g[i] && g[i] <= h.h_plus_literal(e));
            assert!(h.h_plus.eval(e) >= h.h_plus_literal(e));
        }
        assert_eq!(h.h_plus.eval(-3.0), 0.0);
        assert_eq!(h.h_plus.eval(5.0), 0.4);
        let single = binned_h(&[0.2, 0.5], &BinGrid::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(single.h_plus_literal(0.5), 0.5);
        assert_eq!(single.h_minus(0.5), 0.2);
    }
}
