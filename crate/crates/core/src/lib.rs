//! Search-based safety and performance testing of agents in black-box,
//! episodic MDP environments.
//!
//! The pipeline runs in stages: [`search`] finds a reference trace and the
//! boundary states along it, [`safety`] derives and executes test suites from
//! those boundary states, [`fuzz`] evolves action traces from the reference
//! trace, and [`perf`] compares an agent against the fuzzed traces.
//! [`campaign`] chains the stages and writes their artifacts.

pub mod campaign;
pub mod env;
pub mod error;
pub mod fuzz;
pub mod perf;
pub mod rng;
pub mod safety;
pub mod search;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
pub use fuzz::{fitness, fuzz_traces, FitnessWeights, FuzzParams, FuzzRun};
pub use perf::{robust_performance, simple_performance, PerfParams, PerfReport, RobustReport};
pub use safety::{build_suite, execute_suite, SuiteKind, TestSuite, VerdictStats};
pub use search::{repetitions, search_reference, SearchConfig, SearchResult};
pub use stats::pearson_correlation;
pub use trace::{ActionId, ActionTrace, Environment, Policy, StateId, Trace};

/// Scalar used throughout the non-generic stages.
pub type Scalar = f64;
/// Fitness weights at the default scalar.
pub type Weights = FitnessWeights<Scalar>;
