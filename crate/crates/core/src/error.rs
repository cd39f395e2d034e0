use std::io;

use crate::world::Vertex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("map has no passable cells")]
    NoPassableCells,

    #[error("scenario requests {requested} agents but the file holds {available}")]
    NotEnoughAgents { requested: usize, available: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("position ({x}, {y}) lies outside the map extent")]
    OutOfExtent { x: f64, y: f64 },

    #[error("vertex {0} is blocked")]
    Blocked(Vertex),

    #[error("vertex {0} lies outside the map")]
    OutOfBounds(Vertex),

    #[error("trajectory {id}: {message}")]
    Trajectory { id: String, message: String },

    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,

    #[error("invalid mixture model: {0}")]
    InvalidModel(String),

    #[error("unsupported cliff-map schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("wait action has no movement angle")]
    WaitHasNoAngle,

    #[error("missing shortest-length entry for agent {0}")]
    MissingShortestLength(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("goal {goal} is unreachable from {start}")]
    Unreachable { start: Vertex, goal: Vertex },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    /// True for errors caused by malformed input files or configuration, as
    /// opposed to failures while running an algorithm.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::NoPassableCells
                | Error::NotEnoughAgents { .. }
                | Error::InvalidScenario(_)
                | Error::Trajectory { .. }
                | Error::InvalidModel(_)
                | Error::SchemaVersion { .. }
                | Error::Config(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
