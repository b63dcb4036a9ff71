//! Built-in benchmark instances and a seeded random-instance generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::pomdp::{FinitePomdp, Policy, SimplifiedPair, SuccessorUpdate};
use crate::problem::Problem;
use crate::risk::ConfidenceLevel;
use crate::value::ValueQuery;

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 3] = ["two_state_sensor", "corridor4", "degrade_heavy"];

/// A named problem with the query it is usually evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub problem: Problem,
    pub default_query: ValueQuery,
    pub notes: String,
}

impl ScenarioSpec {
    fn new(name: &str, problem: Problem, notes: &str) -> Self {
        let default_query = ValueQuery {
            belief: problem.pair.original().initial_belief(),
            action: None,
            alpha: ConfidenceLevel::new(0.25).expect("valid level"),
        };
        Self {
            name: name.to_string(),
            problem,
            default_query,
            notes: notes.to_string(),
        }
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn symmetric_sensor(noise: f64) -> Vec<Vec<f64>> {
    vec![vec![1.0 - noise, noise], vec![noise, 1.0 - noise]]
}

/// Machine that drifts between `good` and `bad`; a noisy sensor reports
/// `ok`/`alarm` and the policy resets whenever `bad` is most likely.
fn two_state_problem(noise_s: f64, update: SuccessorUpdate) -> Result<Problem> {
    let transition = vec![
        // wait
        vec![vec![0.7, 0.3], vec![0.3, 0.7]],
        // reset
        vec![vec![0.9, 0.1], vec![0.9, 0.1]],
    ];
    let cost = vec![vec![0.0, 0.4], vec![1.0, 0.6]];
    let pomdp = FinitePomdp::new(transition.clone(), symmetric_sensor(0.1), cost, 1.0, vec![0.6, 0.4], 4, 0)?;
    let policy = Policy::new(&pomdp, vec![vec![0, 1]; pomdp.depth()])?;
    let pair = SimplifiedPair::new(pomdp, transition, symmetric_sensor(noise_s), update)?;
    Ok(Problem {
        state_names: names(&["good", "bad"]),
        action_names: names(&["wait", "reset"]),
        observation_names: names(&["ok", "alarm"]),
        pair,
        policy,
    })
}

fn corridor_transition(slip: f64) -> Vec<Vec<Vec<f64>>> {
    let n: usize = 4;
    (0..2)
        .map(|a| {
            (0..n)
                .map(|x| {
                    let target = if a == 0 { x.saturating_sub(1) } else { (x + 1).min(n - 1) };
                    let mut row = vec![0.0; n];
                    row[target] += 1.0 - slip;
                    row[x] += slip;
                    row
                })
                .collect()
        })
        .collect()
}

/// Four cells on a line with the goal on the right; moves slip in place.
fn corridor4() -> Result<Problem> {
    let observation: Vec<Vec<f64>> = (0..4)
        .map(|x| (0..4).map(|z| if z == x { 0.7 } else { 0.1 }).collect())
        .collect();
    let cost: Vec<Vec<f64>> = (0..4)
        .map(|x| {
            let d = (3 - x) as f64 / 3.0;
            vec![d, d]
        })
        .collect();
    let pomdp = FinitePomdp::new(corridor_transition(0.1), observation.clone(), cost, 1.0, vec![0.5, 0.3, 0.2, 0.0], 3, 0)?;
    // head right, step back once the goal is believed reached early on
    let mut table = vec![vec![1, 1, 1, 1]; pomdp.depth()];
    table[1][3] = 0;
    let policy = Policy::new(&pomdp, table)?;
    let pair = SimplifiedPair::new(pomdp, corridor_transition(0.2), observation, SuccessorUpdate::Shared)?;
    Ok(Problem {
        state_names: names(&["c0", "c1", "c2", "goal"]),
        action_names: names(&["left", "right"]),
        observation_names: names(&["at_c0", "at_c1", "at_c2", "at_goal"]),
        pair,
        policy,
    })
}

/// A named built-in scenario.
pub fn builtin(name: &str) -> Result<ScenarioSpec> {
    match name {
        "two_state_sensor" => Ok(ScenarioSpec::new(
            name,
            two_state_problem(0.25, SuccessorUpdate::Shared)?,
            "sensor noise 0.1 in the original model, 0.25 in the simplified one",
        )),
        "corridor4" => Ok(ScenarioSpec::new(
            name,
            corridor4()?,
            "slip probability 0.1 in the original model, 0.2 in the simplified one",
        )),
        "degrade_heavy" => Ok(ScenarioSpec::new(
            name,
            two_state_problem(0.4, SuccessorUpdate::PerModel)?,
            "simplified model updates beliefs with its own noisier sensor, so successor beliefs never coincide",
        )),
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-3).collect();
    let total: f64 = draws.iter().sum();
    fix_sum(draws.iter().map(|d| d / total).collect())
}

fn mix_uniform(row: &[f64], weight: f64) -> Vec<f64> {
    if weight == 0.0 {
        return row.to_vec();
    }
    let u = 1.0 / row.len() as f64;
    row.iter().map(|&p| (1.0 - weight) * p + weight * u).collect()
}

/// Random instance with Dirichlet(1)-like rows; the simplified tables are the
/// original ones mixed with uniform rows at weight `perturbation`.
pub fn random_instance(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    horizon_gap: usize,
    perturbation: f64,
) -> Result<ScenarioSpec> {
    if n_states == 0 || n_actions == 0 || n_obs == 0 {
        return Err(Error::InvalidParameter("random instances need non-empty spaces".into()));
    }
    if !(0.0..=1.0).contains(&perturbation) {
        return Err(Error::InvalidParameter(format!("perturbation {perturbation} must lie in [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition: Vec<Vec<Vec<f64>>> = (0..n_actions)
        .map(|_| (0..n_states).map(|_| random_simplex(&mut rng, n_states)).collect())
        .collect();
    let observation: Vec<Vec<f64>> = (0..n_states).map(|_| random_simplex(&mut rng, n_obs)).collect();
    let cost: Vec<Vec<f64>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let b0 = random_simplex(&mut rng, n_states);
    let pomdp = FinitePomdp::new(transition.clone(), observation.clone(), cost, 1.0, b0, horizon_gap, 0)?;
    let table = (0..pomdp.depth())
        .map(|_| (0..n_states).map(|_| rng.random_range(0..n_actions)).collect())
        .collect();
    let policy = Policy::new(&pomdp, table)?;
    let simplified_t = transition
        .iter()
        .map(|rows| rows.iter().map(|r| fix_sum(mix_uniform(r, perturbation))).collect())
        .collect();
    let simplified_o = observation.iter().map(|r| fix_sum(mix_uniform(r, perturbation))).collect();
    let pair = SimplifiedPair::new(pomdp, simplified_t, simplified_o, SuccessorUpdate::Shared)?;
    let name = format!("random_{seed}");
    Ok(ScenarioSpec::new(
        &name,
        Problem::unnamed(pair, policy),
        &format!("random instance, seed {seed}, perturbation {perturbation}"),
    ))
}

/// Puts the rounding residue on the largest entry so the row sums to one.
fn fix_sum(mut v: Vec<f64>) -> Vec<f64> {
    let residue = 1.0 - v.iter().sum::<f64>();
    let i = crate::pomdp::argmax(&v);
    v[i] += residue;
    v
}
