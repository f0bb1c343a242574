//! Performance testing against fuzz traces.
//!
//! The simple comparison runs the agent and the fuzz traces from the initial
//! state. The robust comparison first drives the environment with fuzz-trace
//! prefixes of length `w, 2w, ...` and then compares the agent with the
//! remainder of the trace from the reached state.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Rng, TAG_ENV, TAG_POLICY};
use crate::trace::{run_actions, run_policy, ActionTrace, Environment, Policy, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfParams {
    pub n_ep: usize,
    pub n_test: usize,
    pub step_width: usize,
    pub max_episode_steps: usize,
    pub seed: u64,
    /// Cap on early-terminating prefix draws per prefix length; `10 * n_test`
    /// when absent.
    #[serde(default)]
    pub max_retries: Option<usize>,
}

impl Default for PerfParams {
    fn default() -> Self {
        PerfParams {
            n_ep: 10,
            n_test: 10,
            step_width: 20,
            max_episode_steps: 200,
            seed: 0,
            max_retries: None,
        }
    }
}

impl PerfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_ep == 0 || self.n_test == 0 || self.step_width == 0 || self.max_episode_steps == 0 {
            return Err(Error::Domain(
                "n_ep, n_test, step_width and max_episode_steps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Where an evaluation episode begins.
#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    Initial,
    At(&'a Snapshot),
}

fn go_to(env: &mut dyn Environment, start: Start<'_>) -> Result<()> {
    match start {
        Start::Initial => {
            env.reset();
            Ok(())
        }
        Start::At(token) => env.restore(token),
    }
}

/// Mean accumulated reward of executing every trace `n_ep` times from
/// `start`.
pub fn eval_traces(
    env: &mut dyn Environment,
    traces: &[ActionTrace],
    start: Start<'_>,
    n_ep: usize,
) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::EmptyTraceSet);
    }
    if n_ep == 0 {
        return Err(Error::ZeroRepetitions);
    }
    let mut total = 0.0;
    for trace in traces {
        for _ in 0..n_ep {
            go_to(env, start)?;
            total += run_actions(env, trace)?.accumulated_reward();
        }
    }
    Ok(total / (n_ep * traces.len()) as f64)
}

/// Mean accumulated reward of `n_ep` agent episodes from `start`, each cut
/// at `max_episode_steps`.
pub fn eval_agent(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    rng: &mut Rng,
    start: Start<'_>,
    n_ep: usize,
    max_episode_steps: usize,
) -> Result<f64> {
    if n_ep == 0 {
        return Err(Error::ZeroRepetitions);
    }
    let mut total = 0.0;
    for _ in 0..n_ep {
        go_to(env, start)?;
        total += run_policy(env, policy, rng, max_episode_steps)?.accumulated_reward();
    }
    Ok(total / n_ep as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplePerf {
    #[serde(rename = "R_t")]
    pub r_t: f64,
    #[serde(rename = "R_a")]
    pub r_a: f64,
}

const TAG_SIMPLE: u64 = 0x51;

/// Agent vs. fuzz traces from the initial state.
pub fn simple_performance(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    traces: &[ActionTrace],
    params: &PerfParams,
) -> Result<SimplePerf> {
    params.validate()?;
    env.reseed(derive_seed(params.seed, &[TAG_SIMPLE, TAG_ENV]));
    let r_t = eval_traces(env, traces, Start::Initial, params.n_ep)?;
    let mut rng = stream(params.seed, &[TAG_SIMPLE, TAG_POLICY]);
    let r_a = eval_agent(env, policy, &mut rng, Start::Initial, params.n_ep, params.max_episode_steps)?;
    Ok(SimplePerf { r_t, r_a })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustEntry {
    #[serde(rename = "R_t")]
    pub r_t: f64,
    #[serde(rename = "R_a")]
    pub r_a: f64,
    pub n_tests_run: usize,
}

/// One robust test: both rewards share the prefix term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustTest {
    pub pl: usize,
    /// Index into the fuzz-trace list.
    pub trace_index: usize,
    pub prefix_reward: f64,
    pub trace_suffix_reward: f64,
    pub agent_suffix_reward: f64,
}

impl RobustTest {
    pub fn r_t(&self) -> f64 {
        self.prefix_reward + self.trace_suffix_reward
    }

    pub fn r_a(&self) -> f64 {
        self.prefix_reward + self.agent_suffix_reward
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RobustReport {
    pub entries: BTreeMap<usize, RobustEntry>,
    pub tests: Vec<RobustTest>,
}

/// Robust performance comparison over prefix lengths `w, 2w, ...` while at
/// least `n_test` fuzz traces are that long.
///
/// Test `i` at prefix length `pl` draws its trace choice from the stream
/// `(seed, pl, i)`, reseeds the environment with `(seed, pl, i, env)` and
/// runs the agent on `(seed, pl, i, policy)`. Draws whose prefix terminates
/// before `pl` steps are replaced by another draw from the same stream.
pub fn robust_performance(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    fuzz_traces: &[ActionTrace],
    params: &PerfParams,
) -> Result<RobustReport> {
    params.validate()?;
    if fuzz_traces.is_empty() {
        return Err(Error::EmptyTraceSet);
    }
    let max_retries = params.max_retries.unwrap_or(10 * params.n_test);
    let mut report = RobustReport::default();
    let mut pl = params.step_width;
    loop {
        let qualifying: Vec<usize> = (0..fuzz_traces.len())
            .filter(|&i| fuzz_traces[i].len() >= pl)
            .collect();
        if qualifying.len() < params.n_test {
            break;
        }
        let mut retries = 0;
        let (mut sum_t, mut sum_a) = (0.0, 0.0);
        for i in 0..params.n_test {
            let path = [pl as u64, i as u64];
            let mut pick = stream(params.seed, &path);
            env.reseed(derive_seed(params.seed, &[pl as u64, i as u64, TAG_ENV]));
            let (trace_index, prefix) = loop {
                let idx = qualifying[pick.gen_range(0..qualifying.len())];
                env.reset();
                let prefix = run_actions(env, &fuzz_traces[idx].prefix(pl))?;
                if prefix.len() == pl {
                    break (idx, prefix);
                }
                retries += 1;
                if retries > max_retries {
                    return Err(Error::PrefixRetriesExhausted {
                        pl,
                        attempts: retries,
                    });
                }
            };
            let token = env.snapshot()?;
            let suffix = fuzz_traces[trace_index].suffix(pl);
            let trace_suffix_reward =
                eval_traces(env, std::slice::from_ref(&suffix), Start::At(&token), params.n_ep)?;
            let mut agent_rng = stream(params.seed, &[pl as u64, i as u64, TAG_POLICY]);
            let agent_suffix_reward = eval_agent(
                env,
                policy,
                &mut agent_rng,
                Start::At(&token),
                params.n_ep,
                params.max_episode_steps,
            )?;
            let test = RobustTest {
                pl,
                trace_index,
                prefix_reward: prefix.accumulated_reward(),
                trace_suffix_reward,
                agent_suffix_reward,
            };
            sum_t += test.r_t();
            sum_a += test.r_a();
            report.tests.push(test);
        }
        report.entries.insert(
            pl,
            RobustEntry {
                r_t: sum_t / params.n_test as f64,
                r_a: sum_a / params.n_test as f64,
                n_tests_run: params.n_test,
            },
        );
        pl += params.step_width;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerfReport {
    pub simple: Option<SimplePerf>,
    pub robust: BTreeMap<usize, RobustEntry>,
}

#[derive(Serialize, Deserialize)]
struct PerfRow {
    pl: usize,
    #[serde(rename = "R_t")]
    r_t: f64,
    #[serde(rename = "R_a")]
    r_a: f64,
    n_tests_run: usize,
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

impl PerfReport {
    /// `pl,R_t,R_a,n_tests_run`.
    pub fn write_robust_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        if self.robust.is_empty() {
            w.write_record(["pl", "R_t", "R_a", "n_tests_run"])?;
        }
        for (&pl, e) in &self.robust {
            w.serialize(PerfRow {
                pl,
                r_t: e.r_t,
                r_a: e.r_a,
                n_tests_run: e.n_tests_run,
            })?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// `R_t,R_a`.
    pub fn write_simple_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        match &self.simple {
            Some(s) => w.serialize(s)?,
            None => w.write_record(["R_t", "R_a"])?,
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_robust_csv<R: std::io::Read>(input: R) -> Result<BTreeMap<usize, RobustEntry>> {
        let mut r = csv::Reader::from_reader(input);
        let mut out = BTreeMap::new();
        for row in r.deserialize::<PerfRow>() {
            let row = row?;
            out.insert(
                row.pl,
                RobustEntry {
                    r_t: row.r_t,
                    r_a: row.r_a,
                    n_tests_run: row.n_tests_run,
                },
            );
        }
        Ok(out)
    }
}
