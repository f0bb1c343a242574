use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rltb_core::campaign::{
    self, create_artifact, load_fuzz_traces, load_search, read_correlation_rows, write_json,
    AgentSpec, CampaignConfig, EnvSpec, SearchSettings, STAGE_FUZZ, STAGE_PERF, STAGE_SAFETY,
    STAGE_SEARCH,
};
use rltb_core::env::{train_tabular_q, EpsilonSchedule, QLearningParams};
use rltb_core::fuzz::{fuzz_traces, FuzzParams};
use rltb_core::perf::{robust_performance, simple_performance, PerfParams, PerfReport};
use rltb_core::rng::derive_seed;
use rltb_core::{Error, SuiteKind};

#[derive(Parser)]
#[command(name = "rltb", version, about = "Safety and performance testing of RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find a reference trace and its boundary states.
    Search(SearchArgs),
    /// Evolve fuzz traces from a reference trace.
    Fuzz(FuzzArgs),
    /// Build and execute a safety test suite.
    Safety(SafetyArgs),
    /// Compare an agent against fuzz traces.
    Perf(PerfArgs),
    /// Pearson correlation of fail frequency and mean return.
    Correlate(CorrelateArgs),
    /// Run every stage from a JSON config.
    Campaign(CampaignArgs),
    /// Train a tabular Q-learning agent on a gridworld.
    Train(TrainArgs),
}

#[derive(Args)]
struct Common {
    /// `fig2` or `gridworld:<path>`.
    #[arg(long)]
    env: String,
    #[arg(long, env = "RLTB_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.9)]
    confidence: f64,
    /// Fixed repetition count instead of one derived from --confidence.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated action indices giving the exploration order.
    #[arg(long, value_delimiter = ',')]
    action_order: Vec<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    max_visits: usize,
    #[arg(long, default_value = "search.json")]
    out: PathBuf,
}

#[derive(Args)]
struct FuzzArgs {
    #[command(flatten)]
    common: Common,
    /// Search artifact holding the reference trace.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    generations: usize,
    #[arg(long, default_value_t = 50)]
    population: usize,
    #[arg(long, default_value_t = 15)]
    effect_size: usize,
    #[arg(long, default_value_t = 0.2)]
    stop_probability: f64,
    #[arg(long, default_value_t = 0.25)]
    crossover: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "fuzz_traces.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SafetyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    agent: String,
    #[arg(long, default_value = "search.json")]
    search: PathBuf,
    /// `simple`, `interval:<is>` or `coverage:<k>`.
    #[arg(long, default_value = "simple")]
    suite: String,
    #[arg(long, default_value_t = 40)]
    test_length: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "safety.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct PerfArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    agent: String,
    #[arg(long, default_value = "fuzz_traces.json")]
    traces: PathBuf,
    #[arg(long, default_value_t = 10)]
    n_ep: usize,
    #[arg(long, default_value_t = 10)]
    n_test: usize,
    #[arg(long, default_value_t = 20)]
    step_width: usize,
    #[arg(long, default_value_t = 200)]
    max_episode_steps: usize,
    #[arg(long, default_value = "perf.csv")]
    out: PathBuf,
    #[arg(long, default_value = "perf_simple.csv")]
    simple_out: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    /// CSV with columns agent_label,fail_frequency,mean_return.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's worker count.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0.995)]
    epsilon_decay: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon_min: f64,
    #[arg(long, default_value_t = 200)]
    max_episode_steps: usize,
    #[arg(long, default_value = "qtable.json")]
    out: PathBuf,
}

fn usage(flag: &str, msg: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(format!("--{flag}: {msg}"))
}

fn search(args: SearchArgs) -> Result<(), Error> {
    let spec = EnvSpec::parse(&args.common.env)?;
    let mut env = spec.build(derive_seed(args.common.seed, &[STAGE_SEARCH]))?;
    let settings = SearchSettings {
        confidence: args.confidence,
        repetitions: args.reps,
        action_order: args.action_order,
        max_visits: args.max_visits,
    };
    settings.to_config().validate().map_err(|e| usage("confidence", e))?;
    let result = campaign::run_search_stage(env.as_mut(), &settings)?;
    write_json(&args.out, &result.to_json())?;
    println!(
        "success: reference length {}, {} boundary states at depths {:?}",
        result.reference_trace.len(),
        result.boundary_states.len(),
        result.boundary_depths
    );
    Ok(())
}

fn fuzz(args: FuzzArgs) -> Result<(), Error> {
    let Some(reference) = args.reference else {
        return Err(Error::MissingArtifact(PathBuf::from("search.json (pass it with --ref)")));
    };
    let spec = EnvSpec::parse(&args.common.env)?;
    let env = spec.build(0)?;
    let result = load_search(&reference, env.action_set())?;
    let params = FuzzParams {
        generations: args.generations,
        population_size: args.population,
        mutation_effect_size: args.effect_size,
        mutation_stop_probability: args.stop_probability,
        crossover_probability: args.crossover,
        seed: derive_seed(args.common.seed, &[STAGE_FUZZ]),
        jobs: args.jobs.max(1),
        ..FuzzParams::default()
    };
    let run = fuzz_traces(env.as_ref(), &result.reference_actions(), &params)?;
    write_json(&args.out, &run.to_json())?;
    println!(
        "{} generations, {} states covered",
        run.generations.len(),
        run.cumulative_coverage.len()
    );
    Ok(())
}

fn safety(args: SafetyArgs) -> Result<(), Error> {
    let spec = EnvSpec::parse(&args.common.env)?;
    let env = spec.build(0)?;
    let kind: SuiteKind = args.suite.parse().map_err(|e| usage("suite", e))?;
    if args.test_length == 0 {
        return Err(usage("test-length", "must be at least 1"));
    }
    if args.reps == 0 {
        return Err(usage("reps", "must be at least 1"));
    }
    let policy = args.agent.parse::<AgentSpec>()?.build(&spec, env.action_set())?;
    let result = load_search(&args.search, env.action_set())?;
    let stats = campaign::run_safety_stage(
        env.as_ref(),
        policy.as_ref(),
        &result,
        kind,
        args.test_length,
        args.reps,
        derive_seed(args.common.seed, &[STAGE_SAFETY, 0]),
        args.jobs.max(1),
    )?;
    stats.write_csv(create_artifact(&args.out)?)?;
    println!(
        "{} cases ({} invalid), aggregate fail frequency {}, mean return {}",
        stats.per_case.len(),
        stats.per_case.iter().filter(|c| c.invalid).count(),
        stats.aggregate_fail_frequency,
        stats.mean_return
    );
    Ok(())
}

fn perf(args: PerfArgs) -> Result<(), Error> {
    let spec = EnvSpec::parse(&args.common.env)?;
    let mut env = spec.build(0)?;
    let policy = args.agent.parse::<AgentSpec>()?.build(&spec, env.action_set())?;
    let traces = load_fuzz_traces(&args.traces, env.action_set())?;
    let params = PerfParams {
        n_ep: args.n_ep,
        n_test: args.n_test,
        step_width: args.step_width,
        max_episode_steps: args.max_episode_steps,
        seed: derive_seed(args.common.seed, &[STAGE_PERF, 0]),
        max_retries: None,
    };
    let simple = simple_performance(env.as_mut(), policy.as_ref(), &traces, &params)?;
    let robust = robust_performance(env.as_mut(), policy.as_ref(), &traces, &params)?;
    let report = PerfReport {
        simple: Some(simple),
        robust: robust.entries,
    };
    report.write_robust_csv(create_artifact(&args.out)?)?;
    report.write_simple_csv(create_artifact(&args.simple_out)?)?;
    println!("R_t {} R_a {}", simple.r_t, simple.r_a);
    for (pl, e) in &report.robust {
        println!("pl {pl}: R_t {} R_a {}", e.r_t, e.r_a);
    }
    Ok(())
}

fn correlate(args: CorrelateArgs) -> Result<(), Error> {
    let rows = read_correlation_rows(&args.input)?;
    println!("{}", campaign::correlate_rows(&rows)?);
    Ok(())
}

fn run_campaign(args: CampaignArgs) -> Result<(), Error> {
    let mut config = CampaignConfig::load(&args.config)?;
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    let summary = campaign::run_campaign(&config)?;
    for a in &summary.agents {
        println!(
            "{}: fail frequency {} over {} cases, R_t {} R_a {}",
            a.agent, a.aggregate_fail_frequency, a.n_cases, a.r_t, a.r_a
        );
    }
    if let Some(r) = summary.correlation {
        println!("correlation {r}");
    }
    println!("artifacts in {}", config.output_dir.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let spec = EnvSpec::parse(&args.common.env)?;
    if spec.gridworld().is_none() {
        return Err(usage("env", "training needs a gridworld environment"));
    }
    let mut env = spec.build(0)?;
    let params = QLearningParams {
        episodes: args.episodes,
        alpha: args.alpha,
        gamma: args.gamma,
        epsilon: EpsilonSchedule {
            start: 1.0,
            decay: args.epsilon_decay,
            min: args.epsilon_min,
        },
        max_episode_steps: args.max_episode_steps,
        seed: args.common.seed,
    };
    let q = train_tabular_q(env.as_mut(), &params)?;
    q.save(&args.out)?;
    println!("trained {} episodes, {} states in table", args.episodes, q.table.len());
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingArtifact(_)
        | Error::BadSpec { .. }
        | Error::ConfigInvalid(_)
        | Error::ZeroTestLength
        | Error::ZeroRepetitions => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Search(a) => search(a),
        Command::Fuzz(a) => fuzz(a),
        Command::Safety(a) => safety(a),
        Command::Perf(a) => perf(a),
        Command::Correlate(a) => correlate(a),
        Command::Campaign(a) => run_campaign(a),
        Command::Train(a) => train(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
