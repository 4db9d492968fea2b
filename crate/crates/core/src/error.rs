use thiserror::Error;

/// Errors produced by the map toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied malformed or inconsistent input.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("cell ({x}, {y}) outside {size}x{size} grid")]
    OutOfBounds { x: i64, y: i64, size: usize },

    #[error("embedding provider failed after {attempts} attempt(s): {message}")]
    Provider {
        message: String,
        attempts: u32,
        last_status: Option<u16>,
    },

    #[error("no precomputed feature for '{0}'")]
    Lookup(String),

    #[error("no valid cell in similarity field")]
    NoGoal,

    #[error("no registered cell within range of goal in any direction")]
    NoOrientation,

    #[error("no path from ({},{}) to ({},{}); explored {explored} cells", start.0, start.1, goal.0, goal.1)]
    NoPath {
        start: (usize, usize),
        goal: (usize, usize),
        explored: usize,
    },

    #[error("no traversable cell within {radius} cells of ({},{})", goal.0, goal.1)]
    Snap { goal: (usize, usize), radius: usize },

    #[error("map file format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("frame '{frame}': {message}")]
    Frame { frame: String, message: String },

    #[error("chat client error: {0}")]
    Client(String),

    #[error("could not parse targets from response: {message}")]
    Parse {
        message: String,
        raw_response: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn frame(frame: &str, msg: impl Into<String>) -> Self {
        Error::Frame {
            frame: frame.to_owned(),
            message: msg.into(),
        }
    }
}
