use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("non-finite spline input {0}")]
    NonFinite(f64),
    #[error("invalid knot grid: {0}")]
    InvalidGrid(String),
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value produced in layer {layer}")]
    NonFinite { layer: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported checkpoint format_version {0}")]
    Version(u64),
    #[error("checkpoint contents invalid at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot serialize non-finite parameter at `{0}`")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample {index} has zero time shift; log-mode targets need |t*| > 0")]
    ZeroShift { index: usize },
    #[error("dataset too small: {0} samples (need at least 10)")]
    DatasetTooSmall(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}; last finite epoch {last_finite_epoch:?}")]
    Diverged {
        epoch: usize,
        last_finite_epoch: Option<usize>,
    },
    #[error("parameter/gradient length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("riccati iteration did not converge after {0} iterations")]
    Riccati(usize),
}

#[derive(Debug, Error)]
pub enum GovernorError {
    /// The window's feasible anchor violates constraints; carries the
    /// per-step margin profile of the anchor rollout.
    #[error("governor infeasible at t = {t}: anchor shift {anchor} has min margin {min_margin}")]
    Infeasible {
        t: f64,
        anchor: f64,
        min_margin: f64,
        margins: Vec<f64>,
    },
    #[error("invalid shift window [{lo}, {hi}]")]
    Window { lo: f64, hi: f64 },
    #[error("hybrid mode needs a trained network")]
    MissingNetwork,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
