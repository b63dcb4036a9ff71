//! JSON problem files: a simplified pair plus the policy to evaluate.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so `load(save(p)) == p` bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{FinitePomdp, Policy, SimplifiedPair, SuccessorUpdate};

/// On-disk layout of a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    /// `transition[a][x][x']`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub simplified_transition: Vec<Vec<Vec<f64>>>,
    /// `observation[x'][z]`
    pub observation: Vec<Vec<f64>>,
    pub simplified_observation: Vec<Vec<f64>>,
    /// `cost[x][a]`
    pub cost: Vec<Vec<f64>>,
    pub r_max: f64,
    pub b0: Vec<f64>,
    #[serde(rename = "horizon_T")]
    pub horizon_t: usize,
    pub start_k: usize,
    /// `policy[t - start_k][most likely state]`
    pub policy: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "is_default_update")]
    pub successor_update: SuccessorUpdate,
}

fn is_default_update(u: &SuccessorUpdate) -> bool {
    *u == SuccessorUpdate::default()
}

/// A validated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
    pub observation_names: Vec<String>,
    pub pair: SimplifiedPair,
    pub policy: Policy,
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl Problem {
    /// Wraps a pair and policy, naming states, actions and observations by index.
    pub fn unnamed(pair: SimplifiedPair, policy: Policy) -> Self {
        let p = pair.original();
        Self {
            state_names: default_names("s", p.n_states()),
            action_names: default_names("a", p.n_actions()),
            observation_names: default_names("z", p.n_obs()),
            pair,
            policy,
        }
    }

    pub fn from_file(f: ProblemFile) -> Result<Self> {
        let pomdp = FinitePomdp::new(
            f.transition,
            f.observation,
            f.cost,
            f.r_max,
            f.b0,
            f.horizon_t,
            f.start_k,
        )?;
        for (names, n, what) in [
            (&f.states, pomdp.n_states(), "states"),
            (&f.actions, pomdp.n_actions(), "actions"),
            (&f.observations, pomdp.n_obs(), "observations"),
        ] {
            if names.len() != n {
                return Err(Error::InvalidProblem(format!(
                    "{what} lists {} names but the tables imply {n}",
                    names.len()
                )));
            }
        }
        let policy = Policy::new(&pomdp, f.policy)?;
        let pair = SimplifiedPair::new(pomdp, f.simplified_transition, f.simplified_observation, f.successor_update)?;
        Ok(Self {
            state_names: f.states,
            action_names: f.actions,
            observation_names: f.observations,
            pair,
            policy,
        })
    }

    pub fn to_file(&self) -> ProblemFile {
        let p = self.pair.original();
        ProblemFile {
            states: self.state_names.clone(),
            actions: self.action_names.clone(),
            observations: self.observation_names.clone(),
            transition: p.transition().to_vec(),
            simplified_transition: self.pair.simplified_transition().to_vec(),
            observation: p.observation().to_vec(),
            simplified_observation: self.pair.simplified_observation().to_vec(),
            cost: p.cost().to_vec(),
            r_max: p.r_max(),
            b0: p.initial_belief().probs().to_vec(),
            horizon_t: p.horizon_t(),
            start_k: p.start_k(),
            policy: self.policy.table().to_vec(),
            successor_update: self.pair.successor_update(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ProblemFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidProblem(format!("malformed problem file: {e}")))?;
        Self::from_file(f)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("problem files always serialize");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidProblem(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::InvalidParameter(format!("cannot write {}: {e}", path.display())))
    }
}
