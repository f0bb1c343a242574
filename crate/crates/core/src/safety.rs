//! Safety test suites built from the reference trace, and their execution
//! against an agent.
//!
//! A test case is an action-trace prefix that drives the environment near a
//! boundary state. The agent then acts for `l` steps; entering an unsafe
//! state within those steps is a fail. Repetitions whose prefix already ends
//! in a terminal state are inconclusive, and a case whose repetitions are all
//! inconclusive is invalid.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, TAG_ENV, TAG_POLICY};
use crate::search::SearchResult;
use crate::trace::{run_actions, run_policy, ActionId, ActionTrace, Environment, Policy, TerminalClass};

pub const DEFAULT_TEST_LENGTH: usize = 40;
pub const DEFAULT_REPETITIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum SuiteKind {
    Simple,
    Interval(usize),
    ActionCoverage(usize),
}

impl SuiteKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SuiteKind::Simple => "simple",
            SuiteKind::Interval(_) => "interval",
            SuiteKind::ActionCoverage(_) => "action_coverage",
        }
    }

    pub fn param(&self) -> usize {
        match *self {
            SuiteKind::Simple => 0,
            SuiteKind::Interval(is) => is,
            SuiteKind::ActionCoverage(k) => k,
        }
    }
}

impl fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuiteKind::Simple => f.write_str("simple"),
            SuiteKind::Interval(is) => write!(f, "interval:{is}"),
            SuiteKind::ActionCoverage(k) => write!(f, "coverage:{k}"),
        }
    }
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;

    /// `simple`, `interval:<is>` or `coverage:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadSpec {
            kind: "suite",
            spec: s.to_string(),
        };
        match s.split_once(':') {
            None if s == "simple" => Ok(SuiteKind::Simple),
            Some(("interval", n)) => n.parse().map(SuiteKind::Interval).map_err(|_| bad()),
            Some(("coverage" | "action_coverage", n)) => match n.parse() {
                Ok(0) | Err(_) => Err(bad()),
                Ok(k) => Ok(SuiteKind::ActionCoverage(k)),
            },
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestCase {
    pub boundary_index: usize,
    /// Offset from the boundary depth; `-k` for action-coverage cases.
    pub offset: i64,
    pub actions: ActionTrace,
    /// Action indices appended by an action-coverage case.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combination: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSuite {
    pub kind: SuiteKind,
    pub cases: Vec<TestCase>,
    /// Set when the source search found no boundary states.
    pub no_boundary_states: bool,
}

impl TestSuite {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn to_json(&self) -> SuiteJson {
        SuiteJson {
            kind: self.kind.tag().to_string(),
            param: self.kind.param(),
            cases: self
                .cases
                .iter()
                .map(|c| CaseJson {
                    boundary_index: c.boundary_index,
                    offset: c.offset,
                    actions: c.actions.labels(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteJson {
    pub kind: String,
    pub param: usize,
    pub cases: Vec<CaseJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseJson {
    pub boundary_index: usize,
    pub offset: i64,
    pub actions: Vec<String>,
}

fn require_success(result: &SearchResult) -> Result<()> {
    if result.success {
        Ok(())
    } else {
        Err(Error::SearchUnsuccessful)
    }
}

/// One case per boundary state: the reference prefix ending in it.
pub fn simple_suite(result: &SearchResult) -> Result<TestSuite> {
    interval_suite_inner(result, 0, SuiteKind::Simple)
}

/// Reference prefixes of length `DB[i] + off` for `off` in `[-is, is]`.
/// Lengths outside `[0, |τ_ref|]` are dropped; a length reached from several
/// boundary intervals is kept once, under the lowest boundary index.
pub fn interval_suite(result: &SearchResult, is: usize) -> Result<TestSuite> {
    interval_suite_inner(result, is, SuiteKind::Interval(is))
}

fn interval_suite_inner(result: &SearchResult, is: usize, kind: SuiteKind) -> Result<TestSuite> {
    require_success(result)?;
    let reference = result.reference_actions();
    let max_len = reference.len() as i64;
    let mut taken = BTreeSet::new();
    let mut cases = Vec::new();
    for (i, &depth) in result.boundary_depths.iter().enumerate() {
        for off in -(is as i64)..=(is as i64) {
            let len = depth as i64 + off;
            if !(0..=max_len).contains(&len) || !taken.insert(len) {
                continue;
            }
            cases.push(TestCase {
                boundary_index: i,
                offset: off,
                actions: reference.prefix(len as usize),
                combination: None,
            });
        }
    }
    Ok(TestSuite {
        kind,
        cases,
        no_boundary_states: result.boundary_depths.is_empty(),
    })
}

/// For every boundary with `DB[i] >= k`, the prefix of length `DB[i] - k`
/// followed by each of the `|A|^k` action combinations, in lexicographic
/// order of action indices.
pub fn action_coverage_suite(
    result: &SearchResult,
    actions: &[ActionId],
    k: usize,
) -> Result<TestSuite> {
    require_success(result)?;
    if k == 0 {
        return Err(Error::Domain("action-coverage width k must be >= 1".into()));
    }
    if actions.is_empty() {
        return Err(Error::Domain("action set is empty".into()));
    }
    let reference = result.reference_actions();
    let combos = combinations(actions.len(), k);
    let mut cases = Vec::new();
    for (i, &depth) in result.boundary_depths.iter().enumerate() {
        if depth < k {
            continue;
        }
        let base = reference.prefix(depth - k);
        for combo in &combos {
            let mut body = base.actions.clone();
            body.extend(combo.iter().map(|&a| actions[a].clone()));
            cases.push(TestCase {
                boundary_index: i,
                offset: -(k as i64),
                actions: ActionTrace::new(body),
                combination: Some(combo.clone()),
            });
        }
    }
    Ok(TestSuite {
        kind: SuiteKind::ActionCoverage(k),
        cases,
        no_boundary_states: result.boundary_depths.is_empty(),
    })
}

/// All length-`k` index tuples over `0..n`, lexicographically.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |a| {
                    let mut next = prefix.clone();
                    next.push(a);
                    next
                })
            })
            .collect();
    }
    out
}

pub fn build_suite(result: &SearchResult, actions: &[ActionId], kind: SuiteKind) -> Result<TestSuite> {
    match kind {
        SuiteKind::Simple => simple_suite(result),
        SuiteKind::Interval(is) => interval_suite(result, is),
        SuiteKind::ActionCoverage(k) => action_coverage_suite(result, actions, k),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseVerdict {
    pub boundary_index: usize,
    pub offset: i64,
    pub suite_kind: String,
    pub n_executed: usize,
    pub n_fail: usize,
    pub n_pass: usize,
    pub n_inconclusive: usize,
    pub invalid: bool,
    pub fail_frequency: f64,
    /// Mean accumulated reward (prefix plus agent steps) over conclusive
    /// repetitions; 0 when there are none.
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictStats {
    pub per_case: Vec<CaseVerdict>,
    /// Mean fail frequency over valid cases (0 when none is valid).
    pub aggregate_fail_frequency: f64,
    /// Mean of the valid cases' `mean_return`.
    pub mean_return: f64,
}

impl VerdictStats {
    pub fn from_cases(per_case: Vec<CaseVerdict>) -> Self {
        let valid: Vec<&CaseVerdict> = per_case.iter().filter(|c| !c.invalid).collect();
        let avg = |f: fn(&CaseVerdict) -> f64| {
            if valid.is_empty() {
                0.0
            } else {
                valid.iter().map(|c| f(c)).sum::<f64>() / valid.len() as f64
            }
        };
        VerdictStats {
            aggregate_fail_frequency: avg(|c| c.fail_frequency),
            mean_return: avg(|c| c.mean_return),
            per_case,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        for c in &self.per_case {
            w.serialize(c)?;
        }
        if self.per_case.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut cases = Vec::new();
        for row in r.deserialize::<CaseVerdictRow>() {
            let row = row?;
            cases.push(CaseVerdict {
                boundary_index: row.boundary_index,
                offset: row.offset,
                suite_kind: row.suite_kind,
                n_executed: row.n_executed,
                n_fail: row.n_fail,
                n_pass: row.n_pass,
                n_inconclusive: row.n_inconclusive,
                invalid: row.invalid,
                fail_frequency: row.fail_frequency,
                mean_return: row.mean_return,
            });
        }
        Ok(VerdictStats::from_cases(cases))
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "boundary_index",
    "offset",
    "suite_kind",
    "n_executed",
    "n_fail",
    "n_pass",
    "n_inconclusive",
    "invalid",
    "fail_frequency",
    "mean_return",
];

#[derive(Debug, Deserialize)]
struct CaseVerdictRow {
    boundary_index: usize,
    offset: i64,
    suite_kind: String,
    n_executed: usize,
    n_fail: usize,
    n_pass: usize,
    n_inconclusive: usize,
    invalid: bool,
    fail_frequency: f64,
    mean_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Executes one test case `n` times with test length `l`.
///
/// The environment and the policy draw from streams derived from `seed`.
pub fn execute_test_case(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    case: &TestCase,
    suite_kind: SuiteKind,
    l: usize,
    n: usize,
    seed: u64,
) -> Result<CaseVerdict> {
    if l == 0 {
        return Err(Error::ZeroTestLength);
    }
    if n == 0 {
        return Err(Error::ZeroRepetitions);
    }
    env.reseed(derive_seed(seed, &[TAG_ENV]));
    let mut rng = stream(seed, &[TAG_POLICY]);
    let (mut fail, mut pass, mut inconclusive) = (0, 0, 0);
    let mut returns = 0.0;
    for _ in 0..n {
        env.reset();
        let prefix = run_actions(env, &case.actions)?;
        if prefix.final_class().is_terminal() {
            inconclusive += 1;
            continue;
        }
        let run = run_policy(env, policy, &mut rng, l)?;
        returns += prefix.accumulated_reward() + run.accumulated_reward();
        if run.final_class() == TerminalClass::Unsafe {
            fail += 1;
        } else {
            pass += 1;
        }
    }
    let conclusive = fail + pass;
    Ok(CaseVerdict {
        boundary_index: case.boundary_index,
        offset: case.offset,
        suite_kind: suite_kind.tag().to_string(),
        n_executed: n,
        n_fail: fail,
        n_pass: pass,
        n_inconclusive: inconclusive,
        invalid: inconclusive == n,
        fail_frequency: if conclusive > 0 {
            fail as f64 / conclusive as f64
        } else {
            0.0
        },
        mean_return: if conclusive > 0 {
            returns / conclusive as f64
        } else {
            0.0
        },
    })
}

/// Executes every case of the suite, case `i` under the stream derived from
/// `(seed, i)`. With `jobs > 1` cases run in parallel on forked environment
/// handles; results do not depend on `jobs`.
pub fn execute_suite(
    env: &dyn Environment,
    policy: &dyn Policy,
    suite: &TestSuite,
    l: usize,
    n: usize,
    seed: u64,
    jobs: usize,
) -> Result<VerdictStats> {
    if suite.is_empty() {
        return Err(Error::EmptySuite);
    }
    let run = |(i, case): (usize, &TestCase)| {
        let mut worker = env.fork();
        execute_test_case(
            worker.as_mut(),
            policy,
            case,
            suite.kind,
            l,
            n,
            derive_seed(seed, &[i as u64]),
        )
    };
    let per_case = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
        pool.install(|| {
            suite
                .cases
                .par_iter()
                .enumerate()
                .map(run)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        suite
            .cases
            .iter()
            .enumerate()
            .map(run)
            .collect::<Result<Vec<_>>>()?
    };
    Ok(VerdictStats::from_cases(per_case))
}
