//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::Rng as _;
use rltb_core::env::{ExplicitMdp, GridworldConfig, Outcome};
use rltb_core::rng::{derive_seed, stream, Rng, TAG_ENV, TAG_POLICY};
use rltb_core::trace::{ActionTrace, Environment, Policy, Step, TerminalClass, Trace};
use rltb_core::{PerfParams, SearchResult, StateId};

/// Smallest `n >= 1` with `1 - (1 - p)^n >= c`.
pub fn min_repetitions(c: f64, p: f64) -> usize {
    let mut n = 1;
    while 1.0 - (1.0 - p).powi(n as i32) < c {
        n += 1;
    }
    n
}

/// Bad states: unsafe states plus the greatest set of non-terminal states
/// whose every positive-probability successor, under every action, is bad.
pub fn bad_states(mdp: &ExplicitMdp) -> Vec<bool> {
    let n = mdp.states.len();
    let mut bad: Vec<bool> = (0..n)
        .map(|s| mdp.terminal[s] != TerminalClass::Goal)
        .collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !bad[s] || mdp.terminal[s] == TerminalClass::Unsafe {
                continue;
            }
            let all_bad = mdp.transitions[s]
                .iter()
                .flatten()
                .filter(|o| o.probability > 0.0)
                .all(|o| bad[o.next]);
            if !all_bad {
                bad[s] = false;
                changed = true;
            }
        }
        if !changed {
            return bad;
        }
    }
}

/// Not bad, non-terminal, and some action reaches a bad state with
/// positive probability.
pub fn is_boundary(mdp: &ExplicitMdp, bad: &[bool], s: usize) -> bool {
    !bad[s]
        && !mdp.terminal[s].is_terminal()
        && mdp.transitions[s]
            .iter()
            .any(|row| row.iter().any(|o| o.probability > 0.0 && bad[o.next]))
}

/// Random MDP whose transitions only go to higher-numbered states, so the
/// reachable graph is acyclic. The last state is a goal; other terminals are
/// drawn at random. Every outcome probability is at least `p_min`.
pub fn random_dag_mdp(rng: &mut Rng, n_states: usize, n_actions: usize, p_min: f64) -> ExplicitMdp {
    let mut terminal = vec![TerminalClass::NonTerminal; n_states];
    terminal[n_states - 1] = TerminalClass::Goal;
    for t in terminal.iter_mut().take(n_states - 1).skip(1) {
        let u: f64 = rng.gen();
        if u < 0.2 {
            *t = TerminalClass::Unsafe;
        } else if u < 0.25 {
            *t = TerminalClass::Goal;
        }
    }
    let max_outcomes = ((1.0 / p_min).floor() as usize).clamp(1, 3);
    let mut transitions = vec![Vec::new(); n_states];
    for s in 0..n_states - 1 {
        if terminal[s].is_terminal() {
            continue;
        }
        let rows = (0..n_actions)
            .map(|_| {
                let k = rng.gen_range(1..=max_outcomes.min(n_states - 1 - s));
                let mut targets = BTreeSet::new();
                while targets.len() < k {
                    targets.insert(rng.gen_range(s + 1..n_states));
                }
                // spread the slack above p_min at random
                let weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
                let total: f64 = weights.iter().sum();
                let slack = 1.0 - p_min * k as f64;
                let mut probs: Vec<f64> =
                    weights.iter().map(|w| p_min + slack * w / total).collect();
                let head: f64 = probs[..k - 1].iter().sum();
                probs[k - 1] = 1.0 - head;
                targets
                    .into_iter()
                    .zip(probs)
                    .map(|(next, probability)| Outcome {
                        probability,
                        next,
                        reward: if terminal[next] == TerminalClass::Goal { 1.0 } else { 0.0 },
                    })
                    .collect()
            })
            .collect();
        transitions[s] = rows;
    }
    ExplicitMdp {
        states: (0..n_states).map(|i| format!("q{i}")).collect(),
        initial: 0,
        actions: (0..n_actions).map(|a| format!("a{a}")).collect(),
        transitions,
        terminal,
    }
}

/// Distinct prefix lengths `d + off` over all boundaries, clipped to
/// `[0, len]`.
pub fn interval_case_count(depths: &[usize], len: usize, is: usize) -> usize {
    let mut lengths = BTreeSet::new();
    for &d in depths {
        for l in d.saturating_sub(is)..=d + is {
            if l <= len {
                lengths.insert(l);
            }
        }
    }
    lengths.len()
}

pub fn coverage_case_count(depths: &[usize], n_actions: usize, k: usize) -> usize {
    depths.iter().filter(|&&d| d >= k).count() * n_actions.pow(k as u32)
}

/// Synthetic successful search result over `actions` with a random reference
/// trace and random strictly increasing boundary depths.
pub fn random_search_result(rng: &mut Rng, actions: &[rltb_core::ActionId]) -> SearchResult {
    let len = rng.gen_range(1..30);
    let steps: Vec<Step> = (0..len)
        .map(|i| Step {
            action: actions[rng.gen_range(0..actions.len())].clone(),
            reward: 0.0,
            state: StateId::new(format!("t{}", i + 1)),
            terminal: if i + 1 == len {
                TerminalClass::Goal
            } else {
                TerminalClass::NonTerminal
            },
        })
        .collect();
    let reference_trace = Trace {
        initial_state: StateId::new("t0"),
        steps,
    };
    let depths: Vec<usize> = (0..len).filter(|_| rng.gen_bool(0.3)).collect();
    SearchResult {
        boundary_states: depths
            .iter()
            .map(|&d| reference_trace.state(d).unwrap().clone())
            .collect(),
        boundary_depths: depths,
        reference_trace,
        explored: Vec::new(),
        success: true,
        visit_log: Vec::new(),
    }
}

/// Shortest slip-free path length from start to a goal avoiding pits and
/// walls, by breadth-first search.
pub fn grid_shortest_path(cfg: &GridworldConfig) -> Option<usize> {
    let moves: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    let mut dist = HashMap::new();
    let mut queue = VecDeque::from([cfg.start]);
    dist.insert(cfg.start, 0usize);
    while let Some(c) = queue.pop_front() {
        let d = dist[&c];
        if cfg.goal_cells.contains(&c) {
            return Some(d);
        }
        if cfg.pit_cells.contains(&c) {
            continue;
        }
        for (dx, dy) in moves {
            let (x, y) = (c[0] as i64 + dx, c[1] as i64 + dy);
            if x < 0 || y < 0 || x >= cfg.width as i64 || y >= cfg.height as i64 {
                continue;
            }
            let n = [x as usize, y as usize];
            if cfg.wall_cells.contains(&n) || dist.contains_key(&n) {
                continue;
            }
            dist.insert(n, d + 1);
            queue.push_back(n);
        }
    }
    None
}

/// One robust test as computed by [`robust_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleTest {
    pub pl: usize,
    pub trace_index: usize,
    pub prefix: f64,
    pub trace_suffix: f64,
    pub agent_suffix: f64,
}

/// Straight-line robust performance comparison over the same seed schedule
/// as the library: test `i` at prefix length `pl` picks traces from the
/// stream `(seed, pl, i)`, reseeds the environment from `(seed, pl, i, env)`
/// and runs the agent on `(seed, pl, i, policy)`.
pub fn robust_oracle(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    traces: &[ActionTrace],
    p: &PerfParams,
) -> (BTreeMap<usize, (f64, f64)>, Vec<OracleTest>) {
    let mut report = BTreeMap::new();
    let mut tests = Vec::new();
    let mut pl = p.step_width;
    loop {
        let long: Vec<usize> = (0..traces.len()).filter(|&i| traces[i].len() >= pl).collect();
        if long.len() < p.n_test {
            break;
        }
        let mut sum_t = 0.0;
        let mut sum_a = 0.0;
        for i in 0..p.n_test {
            let mut pick = stream(p.seed, &[pl as u64, i as u64]);
            env.reseed(derive_seed(p.seed, &[pl as u64, i as u64, TAG_ENV]));
            let (idx, prefix) = 'draw: loop {
                let idx = long[pick.gen_range(0..long.len())];
                env.reset();
                let mut r = 0.0;
                for (k, a) in traces[idx].actions[..pl].iter().enumerate() {
                    let t = env.step(a).unwrap();
                    r += t.reward;
                    // terminating on the last prefix step still reaches s_pl
                    if t.terminal.is_terminal() && k + 1 < pl {
                        continue 'draw;
                    }
                }
                break (idx, r);
            };
            let token = env.snapshot().unwrap();

            let mut trace_total = 0.0;
            for _ in 0..p.n_ep {
                env.restore(&token).unwrap();
                if env.terminal_class().is_terminal() {
                    continue;
                }
                for a in &traces[idx].actions[pl..] {
                    let t = env.step(a).unwrap();
                    trace_total += t.reward;
                    if t.terminal.is_terminal() {
                        break;
                    }
                }
            }

            let mut rng = stream(p.seed, &[pl as u64, i as u64, TAG_POLICY]);
            let mut agent_total = 0.0;
            for _ in 0..p.n_ep {
                env.restore(&token).unwrap();
                if env.terminal_class().is_terminal() {
                    continue;
                }
                for _ in 0..p.max_episode_steps {
                    let s = env.current_state();
                    let a = policy.act(&s, env.action_set(), &mut rng);
                    let t = env.step(&a).unwrap();
                    agent_total += t.reward;
                    if t.terminal.is_terminal() {
                        break;
                    }
                }
            }

            let test = OracleTest {
                pl,
                trace_index: idx,
                prefix,
                trace_suffix: trace_total / p.n_ep as f64,
                agent_suffix: agent_total / p.n_ep as f64,
            };
            sum_t += test.prefix + test.trace_suffix;
            sum_a += test.prefix + test.agent_suffix;
            tests.push(test);
        }
        report.insert(pl, (sum_t / p.n_test as f64, sum_a / p.n_test as f64));
        pl += p.step_width;
    }
    (report, tests)
}

/// Sum of rewards of a trace, step by step.
pub fn reward_sum(trace: &Trace) -> f64 {
    trace.steps.iter().map(|s| s.reward).sum()
}
