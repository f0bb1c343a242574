//! MDP-facing data model: states, actions, traces and the execution
//! semantics shared by every testing stage.

use std::any::Any;
use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Opaque, environment-defined state identifier. Only compared and hashed.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(Arc<str>);

impl StateId {
    pub fn new(encoding: impl AsRef<str>) -> Self {
        StateId(Arc::from(encoding.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        StateId::new(s)
    }
}

/// An action of an environment: its position in the action set plus a label.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId {
    index: usize,
    label: Arc<str>,
}

impl ActionId {
    pub fn new(index: usize, label: impl AsRef<str>) -> Self {
        ActionId {
            index,
            label: Arc::from(label.as_ref()),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Builds the action set `[0: labels[0], 1: labels[1], ...]`.
    pub fn set<S: AsRef<str>>(labels: &[S]) -> Vec<ActionId> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| ActionId::new(i, l))
            .collect()
    }

    pub fn by_label(actions: &[ActionId], label: &str) -> Result<ActionId> {
        actions
            .iter()
            .find(|a| a.label() == label)
            .cloned()
            .ok_or_else(|| Error::UnknownActionLabel(label.to_string()))
    }
}

impl fmt::Debug for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl Serialize for ActionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TerminalClass {
    #[default]
    #[serde(rename = "none")]
    NonTerminal,
    #[serde(rename = "goal")]
    Goal,
    #[serde(rename = "unsafe")]
    Unsafe,
}

impl TerminalClass {
    pub fn is_terminal(self) -> bool {
        self != TerminalClass::NonTerminal
    }
}

/// One `(action, reward, state)` triple of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub action: ActionId,
    pub reward: f64,
    pub state: StateId,
    pub terminal: TerminalClass,
}

/// State-action-reward sequence `s0, a1, r1, s1, ..., an, rn, sn`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub initial_state: StateId,
    pub steps: Vec<Step>,
}

impl Trace {
    pub fn empty(initial_state: StateId) -> Self {
        Trace {
            initial_state,
            steps: Vec::new(),
        }
    }

    /// Number of steps, `n` for `s0 ... sn`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The `i`-th state (`s0` for `i = 0`).
    pub fn state(&self, i: usize) -> Option<&StateId> {
        if i == 0 {
            Some(&self.initial_state)
        } else {
            self.steps.get(i - 1).map(|s| &s.state)
        }
    }

    pub fn states(&self) -> impl Iterator<Item = &StateId> {
        std::iter::once(&self.initial_state).chain(self.steps.iter().map(|s| &s.state))
    }

    pub fn final_state(&self) -> &StateId {
        self.steps
            .last()
            .map(|s| &s.state)
            .unwrap_or(&self.initial_state)
    }

    pub fn final_class(&self) -> TerminalClass {
        self.steps
            .last()
            .map(|s| s.terminal)
            .unwrap_or(TerminalClass::NonTerminal)
    }

    /// Prefix `τ^{-i}`: the first `i` steps.
    pub fn prefix(&self, i: usize) -> Result<Trace> {
        if i > self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(Trace {
            initial_state: self.initial_state.clone(),
            steps: self.steps[..i].to_vec(),
        })
    }

    /// Suffix `τ^{+i}`: the steps after position `i`, rooted at `τ[i]`.
    pub fn suffix(&self, i: usize) -> Result<Trace> {
        let root = self.state(i).cloned().ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.len(),
        })?;
        Ok(Trace {
            initial_state: root,
            steps: self.steps[i..].to_vec(),
        })
    }

    /// Undiscounted sum of rewards.
    pub fn accumulated_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Smallest `i` with `τ[i] = s`.
    pub fn depth_of_first_visit(&self, s: &StateId) -> Option<usize> {
        self.states().position(|x| x == s)
    }

    pub fn action_trace(&self) -> ActionTrace {
        ActionTrace::new(self.steps.iter().map(|s| s.action.clone()).collect())
    }

    pub fn visited_states(&self) -> HashSet<StateId> {
        self.states().cloned().collect()
    }

    pub fn from_json(value: &TraceJson, actions: &[ActionId]) -> Result<Trace> {
        let steps = value
            .steps
            .iter()
            .map(|s| {
                Ok(Step {
                    action: ActionId::by_label(actions, &s.action)?,
                    reward: s.reward,
                    state: StateId::new(&s.state),
                    terminal: s.terminal,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trace {
            initial_state: StateId::new(&value.initial_state),
            steps,
        })
    }
}

/// Wire form of a [`Trace`]; actions are carried by label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceJson {
    pub initial_state: String,
    pub steps: Vec<StepJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepJson {
    pub action: String,
    pub reward: f64,
    pub state: String,
    pub terminal: TerminalClass,
}

/// A pure action sequence; the body of every test case and fuzzing genome.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize)]
pub struct ActionTrace {
    pub actions: Vec<ActionId>,
}

impl ActionTrace {
    pub fn new(actions: Vec<ActionId>) -> Self {
        ActionTrace { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn prefix(&self, i: usize) -> ActionTrace {
        ActionTrace::new(self.actions[..i.min(self.len())].to_vec())
    }

    pub fn suffix(&self, i: usize) -> ActionTrace {
        ActionTrace::new(self.actions[i.min(self.len())..].to_vec())
    }

    pub fn labels(&self) -> Vec<String> {
        self.actions.iter().map(|a| a.label().to_string()).collect()
    }

    pub fn from_labels<S: AsRef<str>>(labels: &[S], actions: &[ActionId]) -> Result<Self> {
        labels
            .iter()
            .map(|l| ActionId::by_label(actions, l.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(ActionTrace::new)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionTraceJson {
    pub actions: Vec<String>,
}

/// Opaque snapshot token produced by [`Environment::snapshot`].
#[derive(Clone)]
pub struct Snapshot(Arc<dyn Any + Send + Sync>);

impl Snapshot {
    pub fn new<T: Any + Send + Sync>(inner: T) -> Self {
        Snapshot(Arc::new(inner))
    }

    pub fn downcast<T: Any>(&self) -> Result<&T> {
        self.0.downcast_ref::<T>().ok_or(Error::ForeignSnapshot)
    }
}

impl fmt::Debug for Snapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Snapshot(..)")
    }
}

/// Outcome of a single environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateId,
    pub reward: f64,
    pub terminal: TerminalClass,
}

/// Black-box sampling interface over an MDP with terminal states.
///
/// Restoring a snapshot returns the environment to the snapshotted MDP state;
/// the handle's random stream keeps advancing, so repeated samples after a
/// restore draw fresh outcomes from the same distribution. `reseed` pins the
/// stream explicitly.
pub trait Environment: Send + Sync {
    fn action_set(&self) -> &[ActionId];

    /// Starts a new episode and returns `s0`.
    fn reset(&mut self) -> StateId;

    fn step(&mut self, action: &ActionId) -> Result<Transition>;

    fn current_state(&self) -> StateId;

    /// Terminal class of the current state.
    fn terminal_class(&self) -> TerminalClass;

    fn snapshot(&self) -> Result<Snapshot> {
        Err(Error::SnapshotUnsupported)
    }

    fn restore(&mut self, _token: &Snapshot) -> Result<()> {
        Err(Error::SnapshotUnsupported)
    }

    /// Smallest nonzero transition probability, in `(0, 1]`.
    fn min_transition_probability(&self) -> f64;

    fn reseed(&mut self, seed: u64);

    /// Independent handle over the same MDP, for per-worker use.
    fn fork(&self) -> Box<dyn Environment>;
}

/// Checks an action against the environment's action set.
pub fn check_action(actions: &[ActionId], action: &ActionId) -> Result<()> {
    match actions.get(action.index()) {
        Some(a) if a == action => Ok(()),
        _ => Err(Error::InvalidAction {
            index: action.index(),
            available: actions.len(),
        }),
    }
}

/// Agent under test. Stochastic policies draw from the supplied stream.
pub trait Policy: Send + Sync {
    fn act(&self, state: &StateId, actions: &[ActionId], rng: &mut Rng) -> ActionId;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&self, state: &StateId, actions: &[ActionId], rng: &mut Rng) -> ActionId {
        (**self).act(state, actions, rng)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, state: &StateId, actions: &[ActionId], rng: &mut Rng) -> ActionId {
        (**self).act(state, actions, rng)
    }
}

/// Executes `actions` from the environment's current state, stopping at the
/// first terminal state. Nothing is executed if the current state is already
/// terminal.
pub fn run_actions(env: &mut dyn Environment, actions: &ActionTrace) -> Result<Trace> {
    let mut trace = Trace::empty(env.current_state());
    if env.terminal_class().is_terminal() {
        return Ok(trace);
    }
    for action in &actions.actions {
        let t = env.step(action)?;
        let done = t.terminal.is_terminal();
        trace.steps.push(Step {
            action: action.clone(),
            reward: t.reward,
            state: t.state,
            terminal: t.terminal,
        });
        if done {
            break;
        }
    }
    Ok(trace)
}

/// `exec_τ(τ_A, s0)`: resets the environment and executes the action trace.
pub fn exec_action_trace(env: &mut dyn Environment, actions: &ActionTrace) -> Result<Trace> {
    env.reset();
    run_actions(env, actions)
}

/// Applies `policy` from the current state until a terminal state or
/// `max_steps` steps.
pub fn run_policy(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    rng: &mut Rng,
    max_steps: usize,
) -> Result<Trace> {
    let mut trace = Trace::empty(env.current_state());
    if env.terminal_class().is_terminal() {
        return Ok(trace);
    }
    let mut state = trace.initial_state.clone();
    for _ in 0..max_steps {
        let action = policy.act(&state, env.action_set(), rng);
        let t = env.step(&action)?;
        let done = t.terminal.is_terminal();
        state = t.state.clone();
        trace.steps.push(Step {
            action,
            reward: t.reward,
            state: t.state,
            terminal: t.terminal,
        });
        if done {
            break;
        }
    }
    Ok(trace)
}

/// `exec_π(π, s0)`: resets the environment and runs the policy.
pub fn exec_policy(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    rng: &mut Rng,
    max_steps: usize,
) -> Result<Trace> {
    if max_steps == 0 {
        return Err(Error::Domain("max_steps must be at least 1".into()));
    }
    env.reset();
    run_policy(env, policy, rng, max_steps)
}
