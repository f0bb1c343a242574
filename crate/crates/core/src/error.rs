use std::path::PathBuf;

use thiserror::Error;

use crate::trace::StateId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action index {index} (environment has {available} actions)")]
    InvalidAction { index: usize, available: usize },

    #[error("unknown action label `{0}`")]
    UnknownActionLabel(String),

    #[error("step requested after the episode reached a terminal state")]
    EpisodeOver,

    #[error("index {index} out of range for trace of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("value outside its domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("environment does not support snapshot/restore")]
    SnapshotUnsupported,

    #[error("snapshot token does not belong to this environment")]
    ForeignSnapshot,

    #[error("search exhausted without reaching a goal ({} states explored)", explored.len())]
    SearchExhausted { explored: Vec<StateId> },

    #[error("search result has no goal-reaching reference trace")]
    SearchUnsuccessful,

    #[error("test suite is empty")]
    EmptySuite,

    #[error("test length must be at least 1")]
    ZeroTestLength,

    #[error("repetition count must be at least 1")]
    ZeroRepetitions,

    #[error("reference action trace is empty")]
    EmptyReference,

    #[error("crossover needs both parents of length >= 2 (got {0} and {1})")]
    TooShort(usize, usize),

    #[error("trace set is empty")]
    EmptyTraceSet,

    #[error("prefix of length {pl} kept terminating early after {attempts} attempts")]
    PrefixRetriesExhausted { pl: usize, attempts: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("unrecognized {kind} spec `{spec}`")]
    BadSpec { kind: &'static str, spec: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
