use std::sync::Arc;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trace::{
    check_action, ActionId, Environment, Snapshot, StateId, TerminalClass, Transition,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub probability: f64,
    pub next: usize,
    pub reward: f64,
}

/// Finite MDP given by an explicit transition table.
///
/// `transitions[s][a]` lists the outcomes of action `a` in state `s`;
/// terminal states may leave their lists empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitMdp {
    pub states: Vec<String>,
    pub initial: usize,
    pub actions: Vec<String>,
    pub transitions: Vec<Vec<Vec<Outcome>>>,
    pub terminal: Vec<TerminalClass>,
}

impl ExplicitMdp {
    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.initial >= n {
            return bad(format!("initial state {} out of range", self.initial));
        }
        if self.transitions.len() != n || self.terminal.len() != n {
            return bad("transition and terminal tables must cover every state".into());
        }
        for (s, per_action) in self.transitions.iter().enumerate() {
            if self.terminal[s].is_terminal() {
                continue;
            }
            if per_action.len() != self.actions.len() {
                return bad(format!("state {} lacks a row per action", self.states[s]));
            }
            for (a, outs) in per_action.iter().enumerate() {
                let total: f64 = outs.iter().map(|o| o.probability).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!(
                        "P({}, {}) sums to {total}",
                        self.states[s], self.actions[a]
                    ));
                }
                if let Some(o) = outs.iter().find(|o| o.probability <= 0.0 || o.next >= n) {
                    return bad(format!(
                        "P({}, {}) has an invalid outcome {o:?}",
                        self.states[s], self.actions[a]
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn min_transition_probability(&self) -> f64 {
        self.transitions
            .iter()
            .zip(&self.terminal)
            .filter(|(_, c)| !c.is_terminal())
            .flat_map(|(rows, _)| rows.iter().flatten())
            .map(|o| o.probability)
            .fold(1.0, f64::min)
    }

    pub fn index_of(&self, state: &StateId) -> Option<usize> {
        self.states.iter().position(|s| s == state.as_str())
    }
}

/// Sampling handle over an [`ExplicitMdp`].
#[derive(Debug, Clone)]
pub struct ExplicitEnv {
    mdp: Arc<ExplicitMdp>,
    actions: Vec<ActionId>,
    current: usize,
    rng: Rng,
}

#[derive(Debug)]
struct ExplicitToken {
    mdp: usize,
    state: usize,
}

impl ExplicitEnv {
    pub fn new(mdp: ExplicitMdp, seed: u64) -> Result<Self> {
        mdp.validate()?;
        let actions = ActionId::set(&mdp.actions);
        let current = mdp.initial;
        Ok(ExplicitEnv {
            mdp: Arc::new(mdp),
            actions,
            current,
            rng: Rng::seed_from_u64(seed),
        })
    }

    pub fn mdp(&self) -> &ExplicitMdp {
        &self.mdp
    }
}

impl Environment for ExplicitEnv {
    fn action_set(&self) -> &[ActionId] {
        &self.actions
    }

    fn reset(&mut self) -> StateId {
        self.current = self.mdp.initial;
        self.current_state()
    }

    fn step(&mut self, action: &ActionId) -> Result<Transition> {
        check_action(&self.actions, action)?;
        if self.mdp.terminal[self.current].is_terminal() {
            return Err(Error::EpisodeOver);
        }
        let outs = &self.mdp.transitions[self.current][action.index()];
        let chosen = if outs.len() == 1 {
            &outs[0]
        } else {
            let u: f64 = self.rng.gen();
            let mut acc = 0.0;
            outs.iter()
                .find(|o| {
                    acc += o.probability;
                    u < acc
                })
                .unwrap_or_else(|| outs.last().expect("validated non-empty"))
        };
        self.current = chosen.next;
        Ok(Transition {
            state: self.current_state(),
            reward: chosen.reward,
            terminal: self.mdp.terminal[self.current],
        })
    }

    fn current_state(&self) -> StateId {
        StateId::new(&self.mdp.states[self.current])
    }

    fn terminal_class(&self) -> TerminalClass {
        self.mdp.terminal[self.current]
    }

    fn snapshot(&self) -> Result<Snapshot> {
        Ok(Snapshot::new(ExplicitToken {
            mdp: Arc::as_ptr(&self.mdp) as usize,
            state: self.current,
        }))
    }

    fn restore(&mut self, token: &Snapshot) -> Result<()> {
        let t = token.downcast::<ExplicitToken>()?;
        if t.mdp != Arc::as_ptr(&self.mdp) as usize {
            return Err(Error::ForeignSnapshot);
        }
        self.current = t.state;
        Ok(())
    }

    fn min_transition_probability(&self) -> f64 {
        self.mdp.min_transition_probability()
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = Rng::seed_from_u64(seed);
    }

    fn fork(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Deterministic 11-state MDP of the classic search walkthrough.
///
/// Actions `a`, `b`; unsafe `s4`, `s5`, `s9`; goal `s10`. `s2`, `s3` and `s8`
/// are dead ends: every action either loops or leads into an unsafe state.
/// Entering the goal pays 1, every other transition 0.
pub fn fig2_mdp_table() -> ExplicitMdp {
    // (state, next on a, next on b)
    let edges: [(usize, usize, usize); 7] = [
        (0, 1, 0),
        (1, 2, 6),
        (2, 2, 3),
        (3, 4, 5),
        (6, 7, 6),
        (7, 8, 10),
        (8, 8, 9),
    ];
    let mut terminal = vec![TerminalClass::NonTerminal; 11];
    for s in [4, 5, 9] {
        terminal[s] = TerminalClass::Unsafe;
    }
    terminal[10] = TerminalClass::Goal;
    let mut transitions = vec![Vec::new(); 11];
    for (s, na, nb) in edges {
        let out = |n: usize| {
            vec![Outcome {
                probability: 1.0,
                next: n,
                reward: if n == 10 { 1.0 } else { 0.0 },
            }]
        };
        transitions[s] = vec![out(na), out(nb)];
    }
    ExplicitMdp {
        states: (0..11).map(|i| format!("s{i}")).collect(),
        initial: 0,
        actions: vec!["a".into(), "b".into()],
        transitions,
        terminal,
    }
}

pub fn fig2_mdp() -> ExplicitEnv {
    ExplicitEnv::new(fig2_mdp_table(), 0).expect("fixture is valid")
}
