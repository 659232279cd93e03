use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid feeder model: {0}")]
    InvalidModel(String),

    #[error("bus `{0}` is not connected to the slack bus")]
    DisconnectedBus(String),

    #[error("unknown bus `{0}`")]
    UnknownBus(String),

    #[error("unknown line or switch `{0}`")]
    UnknownLine(String),

    #[error("opening line `{line}` would island bus `{bus}`")]
    Islanding { line: String, bus: String },

    #[error("operating point has not converged")]
    NotConverged,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("series diverges: spectral radius {0:.6} >= 1")]
    SeriesDiverges(f64),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
