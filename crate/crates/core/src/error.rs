use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter outside the admissible region: {0}")]
    Domain(String),

    #[error("family {0} has no individual lifetime law")]
    UnsupportedFamily(&'static str),

    #[error("time {t} outside the observation window [0, {horizon}]")]
    Range { t: f64, horizon: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("hazard table does not cover [0, {horizon}]: {reason}")]
    Coverage { horizon: f64, reason: String },

    #[error("invalid observed path: {0}")]
    Path(String),

    #[error("model is not identifiable from this path: {0}")]
    NonIdentifiable(String),

    #[error("information matrix is not usable (smallest eigenvalue {smallest:e}, condition number {condition:e})")]
    Identifiability { smallest: f64, condition: f64 },

    #[error("fitted density vanishes at t = {t} where the target has mass")]
    Support { t: f64 },

    #[error("reflection stage {stage}: vectors are not unit norm (|a| = {norm_a}, |b| = {norm_b})")]
    UnitNorm {
        stage: usize,
        norm_a: f64,
        norm_b: f64,
    },

    #[error("null table mismatch: {0}")]
    TableMismatch(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("study aborted: {0}")]
    Study(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
