use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Rng, TAG_ENV, TAG_POLICY};
use crate::trace::{ActionId, Environment, Policy, StateId};

/// Exponentially decaying exploration rate, clamped below at `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub min: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            decay: 0.995,
            min: 0.05,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        (self.start * self.decay.powi(episode as i32)).max(self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLearningParams {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub max_episode_steps: usize,
    pub seed: u64,
}

impl Default for QLearningParams {
    fn default() -> Self {
        QLearningParams {
            episodes: 1000,
            alpha: 0.5,
            gamma: 0.9,
            epsilon: EpsilonSchedule::default(),
            max_episode_steps: 200,
            seed: 0,
        }
    }
}

/// Greedy policy over a tabular action-value function. Ties and unseen states
/// resolve to the lowest action index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTablePolicy {
    pub table: BTreeMap<StateId, Vec<f64>>,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl QTablePolicy {
    pub fn values(&self, state: &StateId) -> Option<&[f64]> {
        self.table.get(state).map(Vec::as_slice)
    }

    pub fn greedy_index(&self, state: &StateId) -> usize {
        self.values(state).map(argmax).unwrap_or(0)
    }

    pub fn to_json(&self) -> QTableJson {
        QTableJson {
            entries: self
                .table
                .iter()
                .map(|(s, v)| QEntry {
                    state: s.to_string(),
                    values: v.clone(),
                })
                .collect(),
        }
    }

    pub fn from_json(json: QTableJson) -> Self {
        QTablePolicy {
            table: json
                .entries
                .into_iter()
                .map(|e| (StateId::new(e.state), e.values))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_json(serde_json::from_str(&text)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl Policy for QTablePolicy {
    fn act(&self, state: &StateId, actions: &[ActionId], _rng: &mut Rng) -> ActionId {
        actions[self.greedy_index(state).min(actions.len() - 1)].clone()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableJson {
    pub entries: Vec<QEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QEntry {
    pub state: String,
    pub values: Vec<f64>,
}

/// One-step Q-learning with epsilon-greedy exploration. Deterministic given
/// `params.seed`.
pub fn train_tabular_q(env: &mut dyn Environment, params: &QLearningParams) -> Result<QTablePolicy> {
    if !(params.alpha > 0.0 && params.alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1], got {}", params.alpha)));
    }
    if !(0.0..=1.0).contains(&params.gamma) {
        return Err(Error::Domain(format!("gamma must lie in [0, 1], got {}", params.gamma)));
    }
    if params.episodes == 0 || params.max_episode_steps == 0 {
        return Err(Error::Domain("episodes and max_episode_steps must be >= 1".into()));
    }
    env.reseed(derive_seed(params.seed, &[TAG_ENV]));
    let mut rng = stream(params.seed, &[TAG_POLICY]);
    let actions = env.action_set().to_vec();
    let n = actions.len();
    let mut q = QTablePolicy::default();

    for episode in 0..params.episodes {
        let eps = params.epsilon.at(episode);
        let mut state = env.reset();
        for _ in 0..params.max_episode_steps {
            let row = q.table.entry(state.clone()).or_insert_with(|| vec![0.0; n]);
            let a = if rng.gen::<f64>() < eps {
                rng.gen_range(0..n)
            } else {
                argmax(row)
            };
            let t = env.step(&actions[a])?;
            let future = if t.terminal.is_terminal() {
                0.0
            } else {
                q.table
                    .get(&t.state)
                    .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or(0.0)
            };
            let row = q.table.get_mut(&state).expect("inserted above");
            row[a] += params.alpha * (t.reward + params.gamma * future - row[a]);
            if t.terminal.is_terminal() {
                break;
            }
            state = t.state;
        }
    }
    Ok(q)
}
