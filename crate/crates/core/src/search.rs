//! Backtracking depth-first search for a goal-reaching reference trace and
//! the boundary states along it.
//!
//! Every action is sampled `rep` times per state (restoring a snapshot of the
//! state before each sample) so that all positive-probability successors are
//! observed with the configured confidence. Visited states are tracked
//! globally and never re-entered. A state that is unsafe, or from which every
//! sampled successor was backtracked, is *explored*. States of the reference
//! trace with at least one explored successor are boundary states.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{
    ActionId, ActionTrace, Environment, Snapshot, StateId, Step, TerminalClass, Trace, TraceJson,
};

/// Number of samples per action so that an outcome of probability at least
/// `p` is observed with probability at least `c`:
/// `max(1, ceil(log(1 - c) / log(1 - p)))`.
pub fn repetitions(c: f64, p: f64) -> Result<usize> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Domain(format!("confidence must lie in (0, 1), got {c}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!(
            "transition probability must lie in (0, 1], got {p}"
        )));
    }
    if p == 1.0 {
        return Ok(1);
    }
    let ratio = (1.0 - c).ln() / (1.0 - p).ln();
    let mut n = (ratio.ceil() as usize).max(1);
    // the log ratio can land a hair above an integer
    let covered = |n: usize| 1.0 - (1.0 - p).powi(n as i32) >= c;
    while n > 1 && covered(n - 1) {
        n -= 1;
    }
    while !covered(n) {
        n += 1;
    }
    Ok(n)
}

pub type Abstraction = Arc<dyn Fn(&StateId) -> StateId + Send + Sync>;

#[derive(Clone)]
pub struct SearchConfig {
    pub confidence: f64,
    /// Overrides the repetition count derived from `confidence`.
    pub explicit_repetitions: Option<usize>,
    /// Action indices in exploration order; empty means action-set order.
    pub action_order: Vec<usize>,
    /// Maps states to the identifiers used for visited/explored bookkeeping.
    pub abstraction: Option<Abstraction>,
    /// Cap on the number of expanded states.
    pub max_visits: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            confidence: 0.9,
            explicit_repetitions: None,
            action_order: Vec::new(),
            abstraction: None,
            max_visits: 1_000_000,
        }
    }
}

impl fmt::Debug for SearchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SearchConfig")
            .field("confidence", &self.confidence)
            .field("explicit_repetitions", &self.explicit_repetitions)
            .field("action_order", &self.action_order)
            .field("abstraction", &self.abstraction.is_some())
            .field("max_visits", &self.max_visits)
            .finish()
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Domain(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.explicit_repetitions == Some(0) {
            return Err(Error::Domain("explicit repetitions must be >= 1".into()));
        }
        Ok(())
    }

    fn resolve_order(&self, actions: &[ActionId]) -> Result<Vec<ActionId>> {
        if self.action_order.is_empty() {
            return Ok(actions.to_vec());
        }
        let mut seen = HashSet::new();
        self.action_order
            .iter()
            .map(|&i| {
                if !seen.insert(i) {
                    return Err(Error::Domain(format!("action {i} listed twice in action order")));
                }
                actions.get(i).cloned().ok_or(Error::InvalidAction {
                    index: i,
                    available: actions.len(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub reference_trace: Trace,
    /// Boundary states in trace order.
    pub boundary_states: Vec<StateId>,
    /// Depth of each boundary state in the reference trace; strictly increasing.
    pub boundary_depths: Vec<usize>,
    /// Explored states in the order they were classified.
    pub explored: Vec<StateId>,
    pub success: bool,
    /// Every newly visited state with the action that reached it.
    pub visit_log: Vec<(ActionId, StateId)>,
}

impl SearchResult {
    pub fn reference_actions(&self) -> ActionTrace {
        self.reference_trace.action_trace()
    }

    pub fn to_json(&self) -> SearchResultJson {
        SearchResultJson {
            reference_trace: serde_json::from_value(
                serde_json::to_value(&self.reference_trace).expect("trace serializes"),
            )
            .expect("trace wire form"),
            boundary_depths: self.boundary_depths.clone(),
            boundary_states: self.boundary_states.iter().map(|s| s.to_string()).collect(),
            explored: self.explored.iter().map(|s| s.to_string()).collect(),
            success: self.success,
        }
    }

    pub fn from_json(json: &SearchResultJson, actions: &[ActionId]) -> Result<Self> {
        let reference_trace = Trace::from_json(&json.reference_trace, actions)?;
        let boundary_states: Vec<StateId> =
            json.boundary_states.iter().map(StateId::new).collect();
        if boundary_states.len() != json.boundary_depths.len() {
            return Err(Error::ConfigInvalid(
                "boundary_states and boundary_depths differ in length".into(),
            ));
        }
        for (s, &d) in boundary_states.iter().zip(&json.boundary_depths) {
            if reference_trace.state(d) != Some(s) {
                return Err(Error::ConfigInvalid(format!(
                    "boundary state {s} is not at depth {d} of the reference trace"
                )));
            }
        }
        Ok(SearchResult {
            reference_trace,
            boundary_states,
            boundary_depths: json.boundary_depths.clone(),
            explored: json.explored.iter().map(StateId::new).collect(),
            success: json.success,
            visit_log: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResultJson {
    pub reference_trace: TraceJson,
    pub boundary_depths: Vec<usize>,
    pub boundary_states: Vec<String>,
    #[serde(default)]
    pub explored: Vec<String>,
    pub success: bool,
}

struct Frame {
    token: Snapshot,
    action: usize,
    samples_left: usize,
    /// Some sampled successor ended up explored.
    flagged: bool,
    /// Step that entered this frame's state (absent for the root).
    incoming: Option<Step>,
}

struct Bookkeeping {
    abstraction: Option<Abstraction>,
    visited: HashSet<StateId>,
    explored_keys: HashSet<StateId>,
    explored: Vec<StateId>,
}

impl Bookkeeping {
    fn key(&self, s: &StateId) -> StateId {
        match &self.abstraction {
            Some(f) => f(s),
            None => s.clone(),
        }
    }

    fn mark_explored(&mut self, s: &StateId) {
        if self.explored_keys.insert(self.key(s)) {
            self.explored.push(s.clone());
        }
    }
}

/// Runs the backtracking search from the environment's initial state.
pub fn search_reference(env: &mut dyn Environment, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let order = cfg.resolve_order(env.action_set())?;
    let rep = match cfg.explicit_repetitions {
        Some(n) => n,
        None => repetitions(cfg.confidence, env.min_transition_probability())?,
    };

    let s0 = env.reset();
    let mut book = Bookkeeping {
        abstraction: cfg.abstraction.clone(),
        visited: HashSet::new(),
        explored_keys: HashSet::new(),
        explored: Vec::new(),
    };
    book.visited.insert(book.key(&s0));
    let mut visit_log = Vec::new();

    match env.terminal_class() {
        TerminalClass::Goal => {
            return Ok(SearchResult {
                reference_trace: Trace::empty(s0),
                boundary_states: Vec::new(),
                boundary_depths: Vec::new(),
                explored: Vec::new(),
                success: true,
                visit_log,
            })
        }
        TerminalClass::Unsafe => {
            book.mark_explored(&s0);
            return Err(Error::SearchExhausted {
                explored: book.explored,
            });
        }
        TerminalClass::NonTerminal => {}
    }

    let mut stack = vec![Frame {
        token: env.snapshot()?,
        action: 0,
        samples_left: rep,
        flagged: false,
        incoming: None,
    }];
    let mut expanded = 1usize;
    let mut goal_step: Option<Step> = None;

    while let Some(top) = stack.last_mut() {
        if top.action >= order.len() {
            let done = stack.pop().expect("non-empty");
            let state = match &done.incoming {
                Some(step) => step.state.clone(),
                None => s0.clone(),
            };
            book.mark_explored(&state);
            if let Some(parent) = stack.last_mut() {
                parent.flagged = true;
            }
            continue;
        }
        if top.samples_left == 0 {
            top.action += 1;
            top.samples_left = rep;
            continue;
        }
        top.samples_left -= 1;
        env.restore(&top.token)?;
        let action = order[top.action].clone();
        let t = env.step(&action)?;
        let key = book.key(&t.state);
        if book.explored_keys.contains(&key) {
            top.flagged = true;
        }
        if !book.visited.insert(key) {
            continue;
        }
        visit_log.push((action.clone(), t.state.clone()));
        let step = Step {
            action,
            reward: t.reward,
            state: t.state,
            terminal: t.terminal,
        };
        match t.terminal {
            TerminalClass::Unsafe => {
                book.mark_explored(&step.state);
                top.flagged = true;
            }
            TerminalClass::Goal => {
                goal_step = Some(step);
                break;
            }
            TerminalClass::NonTerminal => {
                expanded += 1;
                if expanded > cfg.max_visits {
                    return Err(Error::SearchExhausted {
                        explored: book.explored,
                    });
                }
                stack.push(Frame {
                    token: env.snapshot()?,
                    action: 0,
                    samples_left: rep,
                    flagged: false,
                    incoming: Some(step),
                });
            }
        }
    }

    let Some(goal_step) = goal_step else {
        return Err(Error::SearchExhausted {
            explored: book.explored,
        });
    };

    let mut reference_trace = Trace::empty(s0);
    let mut boundary_states = Vec::new();
    let mut boundary_depths = Vec::new();
    for (depth, frame) in stack.into_iter().enumerate() {
        if let Some(step) = frame.incoming {
            reference_trace.steps.push(step);
        }
        if frame.flagged {
            boundary_states.push(reference_trace.final_state().clone());
            boundary_depths.push(depth);
        }
    }
    reference_trace.steps.push(goal_step);

    Ok(SearchResult {
        reference_trace,
        boundary_states,
        boundary_depths,
        explored: book.explored,
        success: true,
        visit_log,
    })
}
