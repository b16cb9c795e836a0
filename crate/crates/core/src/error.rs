use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: actor index {index} outside 1..={n}")]
    ActorOutOfRange { line: usize, index: usize, n: usize },
    #[error("line {line}: self tie on actor {actor}")]
    SelfLoop { line: usize, actor: usize },
    #[error("line {line}: edge weights are not supported, expected exactly two columns")]
    WeightedEdge { line: usize },
    #[error("a network needs at least 2 actors, got {0}")]
    TooFewActors(usize),
    #[error("invalid adjacency matrix: {0}")]
    InvalidAdjacency(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("actor {index} is not in 0..{n}")]
    InvalidActor { index: usize, n: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),
    #[error("invalid sampler configuration: {0}")]
    InvalidSamplerConfig(String),
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("group statistics are corrupted: scatter term {0} is not positive")]
    CorruptStats(f64),
    #[error("no samples to summarize")]
    EmptySamples,
    #[error("network has no links, the logistic-regression BIC is degenerate")]
    NoLinks,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid BIC settings: {0}")]
    InvalidBic(String),
}

pub type Result<T> = std::result::Result<T, Error>;
