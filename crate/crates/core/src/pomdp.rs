//! Finite tabular POMDPs with an original and a simplified model, exact belief
//! updates, the belief-MDP transition kernel and brute-force enumeration of
//! return distributions.

use serde::{Deserialize, Serialize};

use crate::bounds::{density_envelope_to_g, PointwiseEnvelope};
use crate::error::{Error, Result};
use crate::risk::DiscreteDistribution;

/// Row-stochasticity tolerance for every probability vector.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Componentwise tolerance when identifying two successor beliefs.
pub const BELIEF_MATCH_TOL: f64 = 1e-9;
/// Branches below this probability are dropped during enumeration.
pub const PRUNE_PROB: f64 = 1e-300;
/// Default maximum number of enumerated leaves.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

/// Which transition/observation pair drives a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Original,
    Simplified,
}

impl Model {
    pub fn label(self) -> &'static str {
        match self {
            Model::Original => "original",
            Model::Simplified => "simplified",
        }
    }
}

/// How the successor belief is formed under the simplified model.
///
/// With `Shared` (the default) the simplified model only changes *how likely*
/// each observation is; the posterior is always the exact original-model
/// update, so both kernels place mass on the same successor beliefs. With
/// `PerModel` each model updates with its own tables, which typically makes
/// the two successor sets disjoint and the TV distance maximal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessorUpdate {
    #[default]
    Shared,
    PerModel,
}

fn check_prob_vector(v: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for (i, &p) in v.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidProblem(format!("{what}[{i}] = {p} is not a probability")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidProblem(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_transition(t: &[Vec<Vec<f64>>], n_states: usize, n_actions: usize, name: &str) -> Result<()> {
    if t.len() != n_actions {
        return Err(Error::InvalidProblem(format!("{name} has {} actions, expected {n_actions}", t.len())));
    }
    for (a, rows) in t.iter().enumerate() {
        if rows.len() != n_states {
            return Err(Error::InvalidProblem(format!("{name}[{a}] has {} rows, expected {n_states}", rows.len())));
        }
        for (x, row) in rows.iter().enumerate() {
            if row.len() != n_states {
                return Err(Error::InvalidProblem(format!("{name}[{a}][{x}] has length {}, expected {n_states}", row.len())));
            }
            check_prob_vector(row, &format!("{name}[{a}][{x}]"))?;
        }
    }
    Ok(())
}

fn check_observation(o: &[Vec<f64>], n_states: usize, n_obs: usize, name: &str) -> Result<()> {
    if o.len() != n_states {
        return Err(Error::InvalidProblem(format!("{name} has {} rows, expected {n_states}", o.len())));
    }
    for (x, row) in o.iter().enumerate() {
        if row.len() != n_obs {
            return Err(Error::InvalidProblem(format!("{name}[{x}] has length {}, expected {n_obs}", row.len())));
        }
        check_prob_vector(row, &format!("{name}[{x}]"))?;
    }
    Ok(())
}

/// A tabular finite-horizon POMDP evaluated from step `start_k` to
/// `horizon_t` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePomdp {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    /// `transition[a][x][x']`
    transition: Vec<Vec<Vec<f64>>>,
    /// `observation[x'][z]`
    observation: Vec<Vec<f64>>,
    /// `cost[x][a]`
    cost: Vec<Vec<f64>>,
    r_max: f64,
    initial_belief: Vec<f64>,
    horizon_t: usize,
    start_k: usize,
}

impl FinitePomdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        observation: Vec<Vec<f64>>,
        cost: Vec<Vec<f64>>,
        r_max: f64,
        initial_belief: Vec<f64>,
        horizon_t: usize,
        start_k: usize,
    ) -> Result<Self> {
        let n_actions = transition.len();
        let n_states = observation.len();
        if n_actions == 0 || n_states == 0 {
            return Err(Error::InvalidProblem("need at least one state and one action".into()));
        }
        let n_obs = observation[0].len();
        if n_obs == 0 {
            return Err(Error::InvalidProblem("need at least one observation".into()));
        }
        check_transition(&transition, n_states, n_actions, "transition")?;
        check_observation(&observation, n_states, n_obs, "observation")?;
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::InvalidProblem(format!("r_max = {r_max} must be positive and finite")));
        }
        if cost.len() != n_states {
            return Err(Error::InvalidProblem(format!("cost has {} rows, expected {n_states}", cost.len())));
        }
        for (x, row) in cost.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidProblem(format!("cost[{x}] has length {}, expected {n_actions}", row.len())));
            }
            for (a, &c) in row.iter().enumerate() {
                if !c.is_finite() || c.abs() > r_max {
                    return Err(Error::InvalidProblem(format!("|cost[{x}][{a}]| = {} exceeds r_max = {r_max}", c.abs())));
                }
            }
        }
        if initial_belief.len() != n_states {
            return Err(Error::InvalidProblem(format!(
                "b0 has length {}, expected {n_states}",
                initial_belief.len()
            )));
        }
        check_prob_vector(&initial_belief, "b0")?;
        if start_k > horizon_t {
            return Err(Error::InvalidProblem(format!("start_k = {start_k} exceeds horizon_T = {horizon_t}")));
        }
        Ok(Self {
            n_states,
            n_actions,
            n_obs,
            transition,
            observation,
            cost,
            r_max,
            initial_belief,
            horizon_t,
            start_k,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }
    pub fn transition(&self) -> &[Vec<Vec<f64>>] {
        &self.transition
    }
    pub fn observation(&self) -> &[Vec<f64>] {
        &self.observation
    }
    pub fn cost(&self) -> &[Vec<f64>] {
        &self.cost
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn initial_belief(&self) -> Belief {
        Belief(self.initial_belief.clone())
    }
    pub fn horizon_t(&self) -> usize {
        self.horizon_t
    }
    pub fn start_k(&self) -> usize {
        self.start_k
    }

    /// `T - k + 1` cost terms are summed in a return.
    pub fn depth(&self) -> usize {
        self.horizon_t - self.start_k + 1
    }

    /// `R_max (T - k + 1)`, the half-width of the return support.
    pub fn return_bound(&self) -> f64 {
        self.r_max * self.depth() as f64
    }
}

/// An original POMDP together with simplified transition and observation
/// tables over the same spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplifiedPair {
    original: FinitePomdp,
    simplified_transition: Vec<Vec<Vec<f64>>>,
    simplified_observation: Vec<Vec<f64>>,
    successor_update: SuccessorUpdate,
}

impl SimplifiedPair {
    pub fn new(
        original: FinitePomdp,
        simplified_transition: Vec<Vec<Vec<f64>>>,
        simplified_observation: Vec<Vec<f64>>,
        successor_update: SuccessorUpdate,
    ) -> Result<Self> {
        check_transition(
            &simplified_transition,
            original.n_states,
            original.n_actions,
            "simplified_transition",
        )?;
        check_observation(
            &simplified_observation,
            original.n_states,
            original.n_obs,
            "simplified_observation",
        )?;
        Ok(Self {
            original,
            simplified_transition,
            simplified_observation,
            successor_update,
        })
    }

    /// A pair whose simplified model equals the original.
    pub fn identical(original: FinitePomdp) -> Self {
        Self {
            simplified_transition: original.transition.clone(),
            simplified_observation: original.observation.clone(),
            original,
            successor_update: SuccessorUpdate::Shared,
        }
    }

    pub fn original(&self) -> &FinitePomdp {
        &self.original
    }
    pub fn simplified_transition(&self) -> &[Vec<Vec<f64>>] {
        &self.simplified_transition
    }
    pub fn simplified_observation(&self) -> &[Vec<f64>] {
        &self.simplified_observation
    }
    pub fn successor_update(&self) -> SuccessorUpdate {
        self.successor_update
    }

    pub fn transition(&self, model: Model) -> &[Vec<Vec<f64>>] {
        match model {
            Model::Original => &self.original.transition,
            Model::Simplified => &self.simplified_transition,
        }
    }

    pub fn observation(&self, model: Model) -> &[Vec<f64>] {
        match model {
            Model::Original => &self.original.observation,
            Model::Simplified => &self.simplified_observation,
        }
    }

    /// Model whose tables form the posterior when observations come from `model`.
    pub fn update_model(&self, model: Model) -> Model {
        match self.successor_update {
            SuccessorUpdate::Shared => Model::Original,
            SuccessorUpdate::PerModel => model,
        }
    }

    /// `sum_x T(x'|x,a) b(x)` under `model`.
    pub fn predict(&self, b: &Belief, a: usize, model: Model) -> Vec<f64> {
        let t = &self.transition(model)[a];
        let mut pred = vec![0.0; self.original.n_states];
        for (x, &bx) in b.0.iter().enumerate() {
            if bx == 0.0 {
                continue;
            }
            for (p, &txy) in pred.iter_mut().zip(&t[x]) {
                *p += bx * txy;
            }
        }
        pred
    }

    /// Posterior `b'(x') ∝ O(z|x') sum_x T(x'|x,a) b(x)` with `model`'s tables.
    pub fn belief_update(&self, b: &Belief, a: usize, z: usize, model: Model) -> Result<Belief> {
        let pred = self.predict(b, a, model);
        let o = self.observation(model);
        let mut post: Vec<f64> = pred.iter().enumerate().map(|(x, &p)| p * o[x][z]).collect();
        let norm: f64 = post.iter().sum();
        if norm <= PRUNE_PROB {
            return Err(Error::ImpossibleObservation {
                observation: z,
                model: model.label(),
            });
        }
        post.iter_mut().for_each(|p| *p /= norm);
        Ok(Belief(post))
    }

    /// Exact belief-MDP kernel: one atom per observation with positive
    /// probability under `model`.
    pub fn belief_mdp_step(&self, b: &Belief, a: usize, model: Model) -> Vec<BeliefTransitionAtom> {
        let pred = self.predict(b, a, model);
        let o = self.observation(model);
        let update_model = self.update_model(model);
        let mut atoms = Vec::with_capacity(self.original.n_obs);
        for z in 0..self.original.n_obs {
            let prob: f64 = pred.iter().enumerate().map(|(x, &p)| p * o[x][z]).sum();
            if prob <= PRUNE_PROB {
                continue;
            }
            // Under the shared rule an observation that the original model
            // rules out still needs a posterior; fall back to the generating model.
            let successor = self
                .belief_update(b, a, z, update_model)
                .or_else(|_| self.belief_update(b, a, z, model))
                .expect("observation has positive probability under the generating model");
            atoms.push(BeliefTransitionAtom {
                successor,
                probability: prob,
                via_observation: z,
            });
        }
        atoms
    }

    /// `sum |P(b'|b,a) - P_s(b'|b,a)|` over the union of successor beliefs,
    /// identifying beliefs that agree componentwise within [`BELIEF_MATCH_TOL`].
    pub fn tv_distance(&self, b: &Belief, a: usize) -> f64 {
        let p = self.belief_mdp_step(b, a, Model::Original);
        let q = self.belief_mdp_step(b, a, Model::Simplified);
        let mut groups: Vec<(&Belief, f64, f64)> = Vec::with_capacity(p.len() + q.len());
        for (atoms, original) in [(&p, true), (&q, false)] {
            for atom in atoms {
                let slot = groups
                    .iter_mut()
                    .find(|g| g.0.approx_eq(&atom.successor, BELIEF_MATCH_TOL));
                match slot {
                    Some(g) if original => g.1 += atom.probability,
                    Some(g) => g.2 += atom.probability,
                    None if original => groups.push((&atom.successor, atom.probability, 0.0)),
                    None => groups.push((&atom.successor, 0.0, atom.probability)),
                }
            }
        }
        groups.iter().map(|g| (g.1 - g.2).abs()).sum()
    }

    /// `sum_x b(x) c(x, a)`.
    pub fn belief_cost(&self, b: &Belief, a: usize) -> f64 {
        b.0.iter().zip(&self.original.cost).map(|(&bx, row)| bx * row[a]).sum()
    }
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_prob_vector(&probs, "belief")?;
        Ok(Self(probs))
    }

    pub fn point_mass(n_states: usize, state: usize) -> Self {
        let mut v = vec![0.0; n_states];
        v[state] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Most likely state, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn approx_eq(&self, other: &Belief, tol: f64) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A successor belief of the belief-MDP kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefTransitionAtom {
    pub successor: Belief,
    pub probability: f64,
    pub via_observation: usize,
}

/// Deterministic policy indexed by time step and most-likely state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    start_k: usize,
    /// `table[t - start_k][argmax state]`
    table: Vec<Vec<usize>>,
}

impl Policy {
    pub fn new(pomdp: &FinitePomdp, table: Vec<Vec<usize>>) -> Result<Self> {
        if table.len() != pomdp.depth() {
            return Err(Error::InvalidProblem(format!(
                "policy has {} time steps, expected {} (start_k..=horizon_T)",
                table.len(),
                pomdp.depth()
            )));
        }
        for (t, row) in table.iter().enumerate() {
            if row.len() != pomdp.n_states() {
                return Err(Error::InvalidProblem(format!(
                    "policy row {t} has length {}, expected {}",
                    row.len(),
                    pomdp.n_states()
                )));
            }
            if let Some(&a) = row.iter().find(|&&a| a >= pomdp.n_actions()) {
                return Err(Error::InvalidProblem(format!("policy row {t} uses unknown action {a}")));
            }
        }
        Ok(Self {
            start_k: pomdp.start_k(),
            table,
        })
    }

    /// The same action for every step and state.
    pub fn constant(pomdp: &FinitePomdp, action: usize) -> Result<Self> {
        Self::new(pomdp, vec![vec![action; pomdp.n_states()]; pomdp.depth()])
    }

    pub fn table(&self) -> &[Vec<usize>] {
        &self.table
    }

    pub fn action_for_state(&self, t: usize, state: usize) -> usize {
        self.table[t - self.start_k][state]
    }

    pub fn action(&self, t: usize, b: &Belief) -> usize {
        self.action_for_state(t, b.argmax())
    }
}

/// Enumeration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationOptions {
    pub budget: u64,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET }
    }
}

fn first_or_policy(policy: &Policy, t: usize, b: &Belief, start_k: usize, first_action: Option<usize>) -> usize {
    match first_action {
        Some(a) if t == start_k => a,
        _ => policy.action(t, b),
    }
}

fn check_action(pair: &SimplifiedPair, first_action: Option<usize>) -> Result<()> {
    match first_action {
        Some(a) if a >= pair.original().n_actions() => Err(Error::InvalidParameter(format!("unknown action {a}"))),
        _ => Ok(()),
    }
}

/// Exact distribution of `R_{k:T} = sum_{t=k}^{T} c(b_t, a_t)` under `model`,
/// by depth-first expansion of the belief-MDP kernel. With `first_action` the
/// action at step `k` is forced (Q form), otherwise it follows the policy.
pub fn enumerate_return_distribution(
    pair: &SimplifiedPair,
    policy: &Policy,
    b_k: &Belief,
    first_action: Option<usize>,
    model: Model,
    opts: EnumerationOptions,
) -> Result<DiscreteDistribution> {
    check_action(pair, first_action)?;
    let pomdp = pair.original();
    let (k, horizon) = (pomdp.start_k(), pomdp.horizon_t());
    let mut leaves: Vec<(f64, f64)> = Vec::new();
    let mut stack: Vec<(Belief, usize, f64, f64)> = vec![(b_k.clone(), k, 0.0, 1.0)];
    while let Some((b, t, ret, prob)) = stack.pop() {
        let a = first_or_policy(policy, t, &b, k, first_action);
        let ret = ret + pair.belief_cost(&b, a);
        if t == horizon {
            if leaves.len() as u64 >= opts.budget {
                return Err(Error::BudgetExceeded { budget: opts.budget });
            }
            leaves.push((ret, prob));
            continue;
        }
        for atom in pair.belief_mdp_step(&b, a, model) {
            let p = prob * atom.probability;
            if p >= PRUNE_PROB {
                stack.push((atom.successor, t + 1, ret, p));
            }
        }
    }
    DiscreteDistribution::new(leaves)
}

/// Expected return by backward induction over the belief tree.
pub fn expected_return(
    pair: &SimplifiedPair,
    policy: &Policy,
    b_k: &Belief,
    first_action: Option<usize>,
    model: Model,
) -> Result<f64> {
    check_action(pair, first_action)?;
    fn value(pair: &SimplifiedPair, policy: &Policy, b: &Belief, t: usize, forced: Option<usize>, model: Model) -> f64 {
        let a = forced.unwrap_or_else(|| policy.action(t, b));
        let now = pair.belief_cost(b, a);
        if t == pair.original().horizon_t() {
            return now;
        }
        let future: f64 = pair
            .belief_mdp_step(b, a, model)
            .iter()
            .map(|atom| atom.probability * value(pair, policy, &atom.successor, t + 1, None, model))
            .sum();
        now + future
    }
    Ok(value(pair, policy, b_k, pair.original().start_k(), first_action, model))
}

/// A belief reachable under the simplified model at some step `i > k`, with
/// the prefix return `R_{k+1:i}` accumulated on the way there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplifiedNode {
    pub step: usize,
    pub belief: Belief,
    /// `sum_{t=k+1}^{i} c(b_t, a_t)`
    pub prefix_return: f64,
    /// `P_s(b_i = belief, R_{k+1:i} = prefix | b_k, pi)`
    pub probability: f64,
    pub action: usize,
    /// `Delta(b_i, a_i)`
    pub tv: f64,
}

/// All nodes at steps `k+1..=T-1` under the simplified model. Nodes at the
/// same step with the same belief and prefix return are merged.
pub fn simplified_nodes(
    pair: &SimplifiedPair,
    policy: &Policy,
    b_k: &Belief,
    first_action: Option<usize>,
    opts: EnumerationOptions,
) -> Result<Vec<SimplifiedNode>> {
    check_action(pair, first_action)?;
    let pomdp = pair.original();
    let (k, horizon) = (pomdp.start_k(), pomdp.horizon_t());
    let a_k = first_action.unwrap_or_else(|| policy.action(k, b_k));
    let mut out = Vec::new();
    // (belief, prefix, prob) at the current step, with the action that leaves it
    let mut layer: Vec<(Belief, f64, f64, usize)> = vec![(b_k.clone(), 0.0, 1.0, a_k)];
    for step in k + 1..horizon {
        let mut next: Vec<(Belief, f64, f64)> = Vec::new();
        for (b, prefix, prob, a) in &layer {
            for atom in pair.belief_mdp_step(b, *a, Model::Simplified) {
                let p = prob * atom.probability;
                if p < PRUNE_PROB {
                    continue;
                }
                let a_next = policy.action(step, &atom.successor);
                let r = prefix + pair.belief_cost(&atom.successor, a_next);
                match next
                    .iter_mut()
                    .find(|n| (n.1 - r).abs() <= 1e-12 && n.0.approx_eq(&atom.successor, 1e-12))
                {
                    Some(n) => n.2 += p,
                    None => next.push((atom.successor, r, p)),
                }
            }
        }
        if (out.len() + next.len()) as u64 > opts.budget {
            return Err(Error::BudgetExceeded { budget: opts.budget });
        }
        layer = next
            .into_iter()
            .map(|(b, r, p)| {
                let a = policy.action(step, &b);
                (b, r, p, a)
            })
            .collect();
        for (b, r, p, a) in &layer {
            out.push(SimplifiedNode {
                step,
                belief: b.clone(),
                prefix_return: *r,
                probability: *p,
                action: *a,
                tv: pair.tv_distance(b, *a),
            });
        }
    }
    Ok(out)
}

/// One summand of the CDF-gap envelope: it contributes `weight` to `g(l)`
/// for every `l >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeTerm {
    pub step: usize,
    pub threshold: f64,
    pub weight: f64,
}

/// Exact ingredients of the CDF-gap envelope for one `(b_k, a_k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryExpectations {
    pub first_action: usize,
    /// `c(b_k, a_k)`
    pub first_cost: f64,
    /// Entry 0 is `Delta(b_k, a_k)`; entry `j >= 1` is
    /// `E_{P_s}[Delta(b_{k+j}, a_{k+j})]`.
    pub per_step_m: Vec<f64>,
    /// Sum of `per_step_m`.
    pub epsilon: f64,
    pub terms: Vec<EnvelopeTerm>,
    /// `g` as a right-continuous step function.
    pub envelope: PointwiseEnvelope,
    pub g_values: Vec<f64>,
}

impl TrajectoryExpectations {
    /// Same quantities with the step-`k` transition left out.
    pub fn without_first_transition(&self) -> Result<PointwiseEnvelope> {
        let h: Vec<(f64, f64)> = self
            .terms
            .iter()
            .filter(|t| t.step != self.terms[0].step)
            .map(|t| (t.threshold, t.weight))
            .collect();
        density_envelope_to_g(&h)
    }
}

/// `f(l, i) = l - c(b_k, a_k) + (T - i) R_max`; the indicator
/// `1{R_{k+1:i} <= f(l, i)}` is `1{l >= threshold}` with this threshold.
pub fn envelope_threshold(prefix_return: f64, first_cost: f64, horizon_t: usize, step: usize, r_max: f64) -> f64 {
    prefix_return + first_cost - (horizon_t - step) as f64 * r_max
}

/// Exact per-step expected TV distances, their sum `epsilon`, and the
/// envelope `g(l) = sum_{i=k}^{T-1} E_{P_s}[1{R_{k+1:i} <= f(l,i)} Delta(b_i, a_i)]`
/// with `R_{k+1:k} = 0`, evaluated on `grid_l`.
pub fn enumerate_trajectory_expectations(
    pair: &SimplifiedPair,
    policy: &Policy,
    b_k: &Belief,
    first_action: Option<usize>,
    grid_l: &[f64],
    opts: EnumerationOptions,
) -> Result<TrajectoryExpectations> {
    check_action(pair, first_action)?;
    let pomdp = pair.original();
    let (k, horizon, r_max) = (pomdp.start_k(), pomdp.horizon_t(), pomdp.r_max());
    let a_k = first_action.unwrap_or_else(|| policy.action(k, b_k));
    let first_cost = pair.belief_cost(b_k, a_k);
    let mut terms = Vec::new();
    let mut per_step_m = Vec::new();
    if k < horizon {
        let d = pair.tv_distance(b_k, a_k);
        per_step_m.push(d);
        terms.push(EnvelopeTerm {
            step: k,
            threshold: envelope_threshold(0.0, first_cost, horizon, k, r_max),
            weight: d,
        });
        per_step_m.resize(horizon - k, 0.0);
        for node in simplified_nodes(pair, policy, b_k, first_action, opts)? {
            let w = node.probability * node.tv;
            per_step_m[node.step - k] += w;
            terms.push(EnvelopeTerm {
                step: node.step,
                threshold: envelope_threshold(node.prefix_return, first_cost, horizon, node.step, r_max),
                weight: w,
            });
        }
    }
    let epsilon = per_step_m.iter().sum();
    let h: Vec<(f64, f64)> = terms.iter().map(|t| (t.threshold, t.weight)).collect();
    let envelope = density_envelope_to_g(&h)?;
    let g_values = grid_l.iter().map(|&l| envelope.eval(l)).collect();
    Ok(TrajectoryExpectations {
        first_action: a_k,
        first_cost,
        per_step_m,
        epsilon,
        terms,
        envelope,
        g_values,
    })
}

/// `n` evenly spaced points covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
