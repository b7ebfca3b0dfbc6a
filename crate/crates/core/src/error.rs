use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("latitude {0} outside the projection domain (|lat| < 89)")]
    LatitudeOutOfRange(f64),

    #[error("region {region}: ring with {vertices} distinct vertices (need at least 3)")]
    DegeneratePolygon { region: String, vertices: usize },

    #[error("region {region}: {reason}")]
    InvalidRegion { region: String, reason: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },

    #[error("row {row}: unknown region id `{region}`")]
    UnknownRegion { row: usize, region: String },

    #[error("feature {feature}: {reason}")]
    BadFeature { feature: usize, reason: String },

    #[error("invalid jitter scheme: {0}")]
    InvalidScheme(String),

    #[error("jitter rejection limit of {0} proposals exceeded")]
    RejectionLimit(usize),

    #[error("cluster {0}: every integration weight vanished after boundary correction")]
    EmptyScheme(usize),

    #[error("point ({x:.4}, {y:.4}) lies outside the basis grid")]
    OutsideGrid { x: f64, y: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("inner Newton did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    InnerNewton { iterations: usize, grad_norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
