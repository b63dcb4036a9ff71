use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{stream_rng, tags};
use crate::error::{Error, Result};
use crate::pomdp::{argmax, Belief, Model, Policy, SimplifiedPair};
use crate::risk::{cvar_estimate_sorted, ConfidenceLevel, EmpiricalSample};

/// Rollout budget and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RolloutConfig {
    pub num_rollouts: usize,
    pub num_particles: usize,
    pub seed: u64,
}

impl RolloutConfig {
    pub fn new(num_rollouts: usize, num_particles: usize, seed: u64) -> Result<Self> {
        if num_rollouts == 0 || num_particles == 0 {
            return Err(Error::InvalidParameter("need at least one rollout and one particle".into()));
        }
        Ok(Self {
            num_rollouts,
            num_particles,
            seed,
        })
    }
}

/// Weighted particle set `{(x_j, w_j)}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleBelief {
    particles: Vec<(usize, f64)>,
}

impl ParticleBelief {
    pub fn new(particles: Vec<(usize, f64)>) -> Result<Self> {
        if particles.iter().any(|p| !(p.1.is_finite() && p.1 >= 0.0)) {
            return Err(Error::InvalidParameter("particle weights must be finite and non-negative".into()));
        }
        if !particles.iter().any(|p| p.1 > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        Ok(Self { particles })
    }

    /// `nx` particles representing `b`. When `nx` is at least the support
    /// size the particles are stratified over the support with weights that
    /// reproduce `b` exactly; otherwise states are drawn iid from `b`.
    pub fn from_belief<R: Rng>(b: &Belief, nx: usize, rng: &mut R) -> Result<Self> {
        if nx == 0 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        let support: Vec<usize> = (0..b.probs().len()).filter(|&x| b.probs()[x] > 0.0).collect();
        if nx >= support.len() {
            let mut per_state = vec![0usize; b.probs().len()];
            for j in 0..nx {
                per_state[support[j % support.len()]] += 1;
            }
            let particles = (0..nx)
                .map(|j| {
                    let x = support[j % support.len()];
                    (x, b.probs()[x] / per_state[x] as f64)
                })
                .collect();
            Self::new(particles)
        } else {
            let particles = (0..nx)
                .map(|_| (sample_index(b.probs(), rng.random()), 1.0 / nx as f64))
                .collect();
            Self::new(particles)
        }
    }

    pub fn particles(&self) -> &[(usize, f64)] {
        &self.particles
    }

    /// Normalized aggregate weight per state.
    pub fn state_weights(&self, n_states: usize) -> Vec<f64> {
        let mut w = vec![0.0; n_states];
        for &(x, wx) in &self.particles {
            w[x] += wx;
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    /// Policy action at time `t`, using the most likely state of the particle set.
    pub fn action(&self, policy: &Policy, t: usize, n_states: usize) -> usize {
        policy.action_for_state(t, argmax(&self.state_weights(n_states)))
    }

    fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.1).sum()
    }
}

/// Index drawn from the (possibly unnormalized) weights `w` using uniform `u` in `[0, 1)`.
pub(crate) fn sample_index(w: &[f64], u: f64) -> usize {
    let total: f64 = w.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, &p) in w.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    w.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// One particle-filter step: draw an observation from a particle sampled by
/// weight, propagate every particle, reweight by the observation likelihood
/// and return the weighted mean cost of the current particles.
///
/// Observations come from `model`. Propagation and reweighting use the
/// tables of the model that forms posteriors for `model` (see
/// [`SimplifiedPair::update_model`]).
pub fn genpf<R: Rng>(
    pair: &SimplifiedPair,
    b: &ParticleBelief,
    a: usize,
    model: Model,
    rng: &mut R,
) -> Result<(ParticleBelief, f64)> {
    let pomdp = pair.original();
    let weights: Vec<f64> = b.particles.iter().map(|p| p.1).collect();
    let x0 = b.particles[sample_index(&weights, rng.random())].0;
    let gen_t = &pair.transition(model)[a];
    let gen_o = pair.observation(model);
    let x0_next = sample_index(&gen_t[x0], rng.random());
    let z = sample_index(&gen_o[x0_next], rng.random());

    let upd = pair.update_model(model);
    let prop_t = &pair.transition(upd)[a];
    let prop_o = pair.observation(upd);
    let cost = pomdp.cost();
    let total = b.total_weight();
    let mut rho = 0.0;
    let mut next = Vec::with_capacity(b.particles.len());
    let mut new_total = 0.0;
    for &(x, w) in &b.particles {
        let x_next = sample_index(&prop_t[x], rng.random());
        rho += w * cost[x][a];
        let w_next = w * prop_o[x_next][z];
        new_total += w_next;
        next.push((x_next, w_next));
    }
    if new_total.is_nan() || new_total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    next.iter_mut().for_each(|p| p.1 /= new_total);
    Ok((ParticleBelief { particles: next }, rho / total))
}

/// Sum of `depth` successive mean costs; the current time is
/// `horizon_T + 1 - depth`, so a full return uses `depth = T - k + 1`.
pub fn sample_return<R: Rng>(
    pair: &SimplifiedPair,
    policy: &Policy,
    b: &ParticleBelief,
    a: usize,
    depth: usize,
    model: Model,
    rng: &mut R,
) -> Result<f64> {
    let pomdp = pair.original();
    if depth > pomdp.depth() {
        return Err(Error::InvalidParameter(format!(
            "depth {depth} reaches before start_k (at most {})",
            pomdp.depth()
        )));
    }
    let mut t = pomdp.horizon_t() + 1 - depth;
    let mut acc = 0.0;
    let mut belief = b.clone();
    let mut action = a;
    for remaining in (1..=depth).rev() {
        let (next, rho) = genpf(pair, &belief, action, model, rng)?;
        acc += rho;
        if remaining > 1 {
            t += 1;
            action = next.action(policy, t, pomdp.n_states());
        }
        belief = next;
    }
    Ok(acc)
}

/// `count` independent returns; rollout `i` uses RNG stream `i`, so the
/// output does not depend on the number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn sample_returns(
    pair: &SimplifiedPair,
    policy: &Policy,
    b: &ParticleBelief,
    a: usize,
    depth: usize,
    model: Model,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, tags::ROLLOUTS, i as u64);
            sample_return(pair, policy, b, a, depth, model, &mut rng)
        })
        .collect()
}

/// CVaR estimate from `config.num_rollouts` sampled returns.
#[allow(clippy::too_many_arguments)]
pub fn estimate_q(
    pair: &SimplifiedPair,
    policy: &Policy,
    b: &ParticleBelief,
    a: usize,
    depth: usize,
    alpha: ConfidenceLevel,
    config: &RolloutConfig,
    model: Model,
) -> Result<f64> {
    let returns = sample_returns(pair, policy, b, a, depth, model, config.num_rollouts, config.seed)?;
    Ok(cvar_estimate_sorted(&EmpiricalSample::new(returns)?, alpha))
}

/// Particle belief for `b_k` and full-depth returns from it under `model`.
pub fn rollouts_from_belief(
    pair: &SimplifiedPair,
    policy: &Policy,
    b_k: &Belief,
    action: Option<usize>,
    config: &RolloutConfig,
    model: Model,
) -> Result<Vec<f64>> {
    let pomdp = pair.original();
    let mut rng = stream_rng(config.seed, tags::PARTICLES, 0);
    let particles = ParticleBelief::from_belief(b_k, config.num_particles, &mut rng)?;
    let a = action.unwrap_or_else(|| particles.action(policy, pomdp.start_k(), pomdp.n_states()));
    sample_returns(pair, policy, &particles, a, pomdp.depth(), model, config.num_rollouts, config.seed)
}
