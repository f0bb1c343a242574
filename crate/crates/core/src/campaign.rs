//! End-to-end campaigns: environment and agent specs, artifact persistence
//! and the search -> safety -> fuzz -> performance pipeline.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::env::{
    fig2_mdp_table, into_pit_policy, shortest_safe_policy, ConstantPolicy, ExplicitEnv,
    Gridworld, GridworldConfig, QTablePolicy, RandomPolicy,
};
use crate::error::{Error, Result};
use crate::fuzz::{fuzz_traces, FuzzParams, FuzzTracesJson};
use crate::perf::{robust_performance, simple_performance, PerfParams, PerfReport};
use crate::rng::derive_seed;
use crate::safety::{build_suite, execute_suite, SuiteKind, VerdictStats};
use crate::search::{search_reference, SearchConfig, SearchResult, SearchResultJson};
use crate::stats::pearson_correlation;
use crate::trace::{ActionId, Environment, Policy};

/// Environment variable overriding the campaign seed.
pub const SEED_ENV_VAR: &str = "RLTB_SEED";

pub const SEARCH_FILE: &str = "search.json";
pub const SAFETY_FILE: &str = "safety.csv";
pub const FUZZ_FILE: &str = "fuzz_traces.json";
pub const PERF_FILE: &str = "perf.csv";
pub const PERF_SIMPLE_FILE: &str = "perf_simple.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CORRELATION_FILE: &str = "correlation.csv";

/// Stage tags for seed derivation; the standalone subcommands use the same
/// tags so their artifacts match a campaign run with the same seed.
pub const STAGE_SEARCH: u64 = 1;
pub const STAGE_FUZZ: u64 = 2;
pub const STAGE_SAFETY: u64 = 3;
pub const STAGE_PERF: u64 = 4;

/// Which environment a run targets.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Gridworld { path: PathBuf, config: GridworldConfig },
    Fig2,
}

impl EnvSpec {
    /// Parses `fig2` or `gridworld:<path>`; the gridworld config is loaded
    /// and validated immediately.
    pub fn parse(spec: &str) -> Result<Self> {
        if spec == "fig2" {
            return Ok(EnvSpec::Fig2);
        }
        match spec.strip_prefix("gridworld:") {
            Some(path) if !path.is_empty() => {
                let path = PathBuf::from(path);
                if !path.exists() {
                    return Err(Error::MissingArtifact(path));
                }
                let config = GridworldConfig::load(&path)?;
                config.validate()?;
                Ok(EnvSpec::Gridworld { path, config })
            }
            _ => Err(Error::BadSpec {
                kind: "environment",
                spec: spec.to_string(),
            }),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Fig2 => Box::new(ExplicitEnv::new(fig2_mdp_table(), seed)?),
            EnvSpec::Gridworld { config, .. } => Box::new(Gridworld::new(config.clone(), seed)?),
        })
    }

    pub fn gridworld(&self) -> Option<&GridworldConfig> {
        match self {
            EnvSpec::Gridworld { config, .. } => Some(config),
            EnvSpec::Fig2 => None,
        }
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSpec::Fig2 => write!(f, "fig2"),
            EnvSpec::Gridworld { path, .. } => write!(f, "gridworld:{}", path.display()),
        }
    }
}

/// Agent-under-test selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentSpec {
    QTable(PathBuf),
    Random(u64),
    ShortestSafe,
    IntoPit,
    Always(String),
}

impl FromStr for AgentSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let bad = || Error::BadSpec {
            kind: "agent",
            spec: spec.to_string(),
        };
        let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
        match kind {
            "qtable" if !rest.is_empty() => Ok(AgentSpec::QTable(PathBuf::from(rest))),
            "random" => rest.parse().map(AgentSpec::Random).map_err(|_| bad()),
            "scripted" => match rest.split_once(':') {
                Some(("always", label)) if !label.is_empty() => {
                    Ok(AgentSpec::Always(label.to_string()))
                }
                None if rest == "shortest-safe" => Ok(AgentSpec::ShortestSafe),
                None if rest == "into-pit" => Ok(AgentSpec::IntoPit),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentSpec::QTable(p) => write!(f, "qtable:{}", p.display()),
            AgentSpec::Random(s) => write!(f, "random:{s}"),
            AgentSpec::ShortestSafe => write!(f, "scripted:shortest-safe"),
            AgentSpec::IntoPit => write!(f, "scripted:into-pit"),
            AgentSpec::Always(l) => write!(f, "scripted:always:{l}"),
        }
    }
}

impl AgentSpec {
    pub fn build(&self, env: &EnvSpec, actions: &[ActionId]) -> Result<Box<dyn Policy>> {
        let grid = || {
            env.gridworld().ok_or_else(|| {
                Error::ConfigInvalid(format!("agent `{self}` needs a gridworld environment"))
            })
        };
        Ok(match self {
            AgentSpec::QTable(path) => {
                if !path.exists() {
                    return Err(Error::MissingArtifact(path.clone()));
                }
                Box::new(QTablePolicy::load(path)?)
            }
            AgentSpec::Random(salt) => Box::new(RandomPolicy { salt: *salt }),
            AgentSpec::ShortestSafe => Box::new(shortest_safe_policy(grid()?)),
            AgentSpec::IntoPit => Box::new(into_pit_policy(grid()?)),
            AgentSpec::Always(label) => {
                Box::new(ConstantPolicy(ActionId::by_label(actions, label)?.index()))
            }
        })
    }
}

/// Reads a JSON artifact, reporting a missing file as [`Error::MissingArtifact`].
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn open_artifact(path: &Path) -> Result<fs::File> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub fn create_artifact(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// JSON-facing subset of [`SearchConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub confidence: f64,
    pub repetitions: Option<usize>,
    pub action_order: Vec<usize>,
    pub max_visits: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchSettings {
            confidence: d.confidence,
            repetitions: d.explicit_repetitions,
            action_order: d.action_order,
            max_visits: d.max_visits,
        }
    }
}

impl SearchSettings {
    pub fn to_config(&self) -> SearchConfig {
        SearchConfig {
            confidence: self.confidence,
            explicit_repetitions: self.repetitions,
            action_order: self.action_order.clone(),
            abstraction: None,
            max_visits: self.max_visits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetySettings {
    /// `simple`, `interval:<is>` or `coverage:<k>`.
    pub suite: String,
    pub l: usize,
    pub n: usize,
}

impl Default for SafetySettings {
    fn default() -> Self {
        SafetySettings {
            suite: "simple".into(),
            l: crate::safety::DEFAULT_TEST_LENGTH,
            n: crate::safety::DEFAULT_REPETITIONS,
        }
    }
}

/// Campaign configuration file. Stage seeds are derived from `seed`; the
/// `seed` fields inside `fuzz` and `perf` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub env_spec: String,
    pub agent_spec: String,
    #[serde(default)]
    pub extra_agents: Vec<String>,
    #[serde(default)]
    pub search: SearchSettings,
    #[serde(default)]
    pub fuzz: FuzzParams,
    #[serde(default)]
    pub safety: SafetySettings,
    #[serde(default)]
    pub perf: PerfParams,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

/// Parses an override seed value.
pub fn parse_seed_override(value: &str) -> Result<u64> {
    value.trim().parse().map_err(|_| {
        Error::ConfigInvalid(format!("{SEED_ENV_VAR} must be an unsigned integer, got `{value}`"))
    })
}

fn rebase(spec: &str, prefix: &str, base: &Path) -> String {
    match spec.strip_prefix(prefix) {
        Some(p) if Path::new(p).is_relative() => {
            format!("{prefix}{}", base.join(p).display())
        }
        _ => spec.to_string(),
    }
}

impl CampaignConfig {
    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory, and [`SEED_ENV_VAR`] overrides `seed` when set.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: CampaignConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.env_spec = rebase(&cfg.env_spec, "gridworld:", &base);
        cfg.agent_spec = rebase(&cfg.agent_spec, "qtable:", &base);
        for a in &mut cfg.extra_agents {
            *a = rebase(a, "qtable:", &base);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Ok(v) = std::env::var(SEED_ENV_VAR) {
            cfg.seed = parse_seed_override(&v)?;
        }
        Ok(cfg)
    }

    pub fn agents(&self) -> Result<Vec<AgentSpec>> {
        std::iter::once(&self.agent_spec)
            .chain(&self.extra_agents)
            .map(|s| s.parse())
            .collect()
    }

    pub fn suite_kind(&self) -> Result<SuiteKind> {
        self.safety.suite.parse()
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::ConfigInvalid("jobs must be >= 1".into()));
        }
        if self.safety.l == 0 {
            return Err(Error::ZeroTestLength);
        }
        if self.safety.n == 0 {
            return Err(Error::ZeroRepetitions);
        }
        self.suite_kind()?;
        self.agents()?;
        self.search.to_config().validate()?;
        self.fuzz.validate()?;
        self.perf.validate()
    }

    pub fn search_seed(&self) -> u64 {
        derive_seed(self.seed, &[STAGE_SEARCH])
    }

    pub fn fuzz_params(&self) -> FuzzParams {
        FuzzParams {
            seed: derive_seed(self.seed, &[STAGE_FUZZ]),
            jobs: self.jobs,
            ..self.fuzz.clone()
        }
    }

    /// Safety seed for agent `i` (0 is the primary agent).
    pub fn safety_seed(&self, agent: usize) -> u64 {
        derive_seed(self.seed, &[STAGE_SAFETY, agent as u64])
    }

    pub fn perf_params(&self, agent: usize) -> PerfParams {
        PerfParams {
            seed: derive_seed(self.seed, &[STAGE_PERF, agent as u64]),
            ..self.perf.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRow {
    pub pl: usize,
    #[serde(rename = "R_t")]
    pub r_t: f64,
    #[serde(rename = "R_a")]
    pub r_a: f64,
    pub n_tests_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    /// Artifact directory relative to the output directory; empty for the
    /// primary agent.
    pub artifacts: String,
    pub n_cases: usize,
    pub n_invalid: usize,
    pub aggregate_fail_frequency: f64,
    pub mean_return: f64,
    #[serde(rename = "R_t")]
    pub r_t: f64,
    #[serde(rename = "R_a")]
    pub r_a: f64,
    pub robust: Vec<RobustRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub env: String,
    pub seed: u64,
    pub suite: String,
    pub reference_length: usize,
    pub boundary_depths: Vec<usize>,
    pub fuzz_generations: usize,
    pub fuzz_coverage: usize,
    pub agents: Vec<AgentSummary>,
    /// Fail frequency vs. mean return over all agents; absent with fewer
    /// than two agents or on degenerate input.
    pub correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub correlation_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub agent_label: String,
    pub fail_frequency: f64,
    pub mean_return: f64,
}

pub fn read_correlation_rows(path: &Path) -> Result<Vec<CorrelationRow>> {
    let mut r = csv::Reader::from_reader(open_artifact(path)?);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_correlation_rows(path: &Path, rows: &[CorrelationRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create_artifact(path)?);
    if rows.is_empty() {
        w.write_record(["agent_label", "fail_frequency", "mean_return"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pearson r of fail frequency against mean return. Values are not range
/// checked, so rescaled frequencies (e.g. percentages) give the same r.
pub fn correlate_rows(rows: &[CorrelationRow]) -> Result<f64> {
    let xs: Vec<f64> = rows.iter().map(|r| r.fail_frequency).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
    pearson_correlation(&xs, &ys)
}

/// Runs the search stage and returns its result. Exhaustion is reported as
/// an error; the caller decides what to persist.
pub fn run_search_stage(env: &mut dyn Environment, settings: &SearchSettings) -> Result<SearchResult> {
    search_reference(env, &settings.to_config())
}

/// Executes a safety suite, treating an empty suite as zero cases.
pub fn run_safety_stage(
    env: &dyn Environment,
    policy: &dyn Policy,
    result: &SearchResult,
    kind: SuiteKind,
    l: usize,
    n: usize,
    seed: u64,
    jobs: usize,
) -> Result<VerdictStats> {
    let suite = build_suite(result, env.action_set(), kind)?;
    if suite.is_empty() {
        if l == 0 {
            return Err(Error::ZeroTestLength);
        }
        if n == 0 {
            return Err(Error::ZeroRepetitions);
        }
        return Ok(VerdictStats::from_cases(Vec::new()));
    }
    execute_suite(env, policy, &suite, l, n, seed, jobs)
}

fn agent_dir(index: usize, spec: &AgentSpec) -> String {
    if index == 0 {
        return String::new();
    }
    let slug: String = spec
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("agents/{index:02}-{slug}")
}

/// Runs every stage and writes the artifacts into `config.output_dir`.
/// Artifacts of completed stages stay on disk when a later stage fails.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignSummary> {
    config.validate()?;
    let env_spec = EnvSpec::parse(&config.env_spec)?;
    let agents = config.agents()?;
    let kind = config.suite_kind()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut env = env_spec.build(config.search_seed())?;
    let actions = env.action_set().to_vec();
    let policies = agents
        .iter()
        .map(|a| a.build(&env_spec, &actions))
        .collect::<Result<Vec<_>>>()?;

    let result = run_search_stage(env.as_mut(), &config.search)?;
    write_json(&out.join(SEARCH_FILE), &result.to_json())?;

    let fuzz = fuzz_traces(env.as_ref(), &result.reference_actions(), &config.fuzz_params())?;
    write_json(&out.join(FUZZ_FILE), &fuzz.to_json())?;
    let fittest = fuzz.fittest_traces();

    let mut summaries = Vec::new();
    for (i, (spec, policy)) in agents.iter().zip(&policies).enumerate() {
        let rel = agent_dir(i, spec);
        let dir = out.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let stats = run_safety_stage(
            env.as_ref(),
            policy.as_ref(),
            &result,
            kind,
            config.safety.l,
            config.safety.n,
            config.safety_seed(i),
            config.jobs,
        )?;
        stats.write_csv(create_artifact(&dir.join(SAFETY_FILE))?)?;

        let params = config.perf_params(i);
        let mut perf_env = env.fork();
        let simple = simple_performance(perf_env.as_mut(), policy.as_ref(), &fittest, &params)?;
        let robust = robust_performance(perf_env.as_mut(), policy.as_ref(), &fittest, &params)?;
        let report = PerfReport {
            simple: Some(simple),
            robust: robust.entries,
        };
        report.write_robust_csv(create_artifact(&dir.join(PERF_FILE))?)?;
        report.write_simple_csv(create_artifact(&dir.join(PERF_SIMPLE_FILE))?)?;

        summaries.push(AgentSummary {
            agent: spec.to_string(),
            artifacts: rel,
            n_cases: stats.per_case.len(),
            n_invalid: stats.per_case.iter().filter(|c| c.invalid).count(),
            aggregate_fail_frequency: stats.aggregate_fail_frequency,
            mean_return: stats.mean_return,
            r_t: simple.r_t,
            r_a: simple.r_a,
            robust: report
                .robust
                .iter()
                .map(|(&pl, e)| RobustRow {
                    pl,
                    r_t: e.r_t,
                    r_a: e.r_a,
                    n_tests_run: e.n_tests_run,
                })
                .collect(),
        });
    }

    let rows: Vec<CorrelationRow> = summaries
        .iter()
        .map(|s| CorrelationRow {
            agent_label: s.agent.clone(),
            fail_frequency: s.aggregate_fail_frequency,
            mean_return: s.mean_return,
        })
        .collect();
    let (correlation, correlation_note) = if rows.len() >= 2 {
        write_correlation_rows(&out.join(CORRELATION_FILE), &rows)?;
        match correlate_rows(&rows) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };

    let summary = CampaignSummary {
        env: env_spec.to_string(),
        seed: config.seed,
        suite: kind.to_string(),
        reference_length: result.reference_trace.len(),
        boundary_depths: result.boundary_depths.clone(),
        fuzz_generations: fuzz.generations.len(),
        fuzz_coverage: fuzz.cumulative_coverage.len(),
        agents: summaries,
        correlation,
        correlation_note,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Loads a search artifact against an environment's action set.
pub fn load_search(path: &Path, actions: &[ActionId]) -> Result<SearchResult> {
    let json: SearchResultJson = read_json(path)?;
    SearchResult::from_json(&json, actions)
}

pub fn load_fuzz_traces(path: &Path, actions: &[ActionId]) -> Result<Vec<crate::trace::ActionTrace>> {
    let json: FuzzTracesJson = read_json(path)?;
    json.action_traces(actions)
}
