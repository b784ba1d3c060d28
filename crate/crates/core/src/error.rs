use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid link {id}: {reason}")]
    InvalidLink { id: usize, reason: String },

    #[error("duplicate link id {0}")]
    DuplicateLink(usize),

    #[error("network has no links")]
    EmptyNetwork,

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("invalid O-D pair {origin}->{destination}: {reason}")]
    InvalidOd {
        origin: usize,
        destination: usize,
        reason: String,
    },

    #[error("no path from node {origin} to node {destination}")]
    Unreachable { origin: usize, destination: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative flow {0}")]
    NegativeFlow(f64),

    #[error("{class:?} has no {mode:?} operating mode")]
    UndefinedMode {
        class: crate::cost::VehicleClass,
        mode: crate::cost::Mode,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
