use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelParams;

pub type Result<T> = std::result::Result<T, OtaError>;

#[derive(Debug, Error)]
pub enum OtaError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset for device {0} is empty")]
    EmptyDataset(usize),

    #[error("device list is empty")]
    EmptyDeviceList,

    #[error("invalid participation weights: {0}")]
    InvalidWeights(String),

    #[error("class {0} has no examples in the pool")]
    MissingClass(usize),

    #[error("solver stopped after {iterations} iterations with gradient norm {grad_norm:e}")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        best: Box<ModelParams>,
    },

    #[error("power iteration did not converge after {0} iterations")]
    PowerIteration(usize),

    #[error("gradient-norm probe is empty")]
    EmptyProbe,

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("argument outside the function domain: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "device {device} gradient norm {norm:e} exceeds G_max {g_max:e}; \
         increase the G_max safety factor"
    )]
    GradientBoundExceeded { device: usize, norm: f64, g_max: f64 },

    #[error("stepsize {eta:e} outside the admissible range [0, {max:e}]")]
    StepsizeOutOfRange { eta: f64, max: f64 },

    #[error("no device lies within the interior radius {0} m")]
    EmptyInterior(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("every stepsize in the grid diverged: {0:?}")]
    AllDiverged(Vec<f64>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl OtaError {
    /// Stable machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            OtaError::DimensionMismatch { .. } => "dimension_mismatch",
            OtaError::EmptyDataset(_) => "empty_dataset",
            OtaError::EmptyDeviceList => "empty_device_list",
            OtaError::InvalidWeights(_) => "invalid_weights",
            OtaError::MissingClass(_) => "missing_class",
            OtaError::NotConverged { .. } => "not_converged",
            OtaError::PowerIteration(_) => "power_iteration",
            OtaError::EmptyProbe => "empty_probe",
            OtaError::EmptyTestSet => "empty_test_set",
            OtaError::Domain(_) => "domain",
            OtaError::InvalidInput(_) => "invalid_input",
            OtaError::GradientBoundExceeded { .. } => "gradient_bound_exceeded",
            OtaError::StepsizeOutOfRange { .. } => "stepsize_out_of_range",
            OtaError::EmptyInterior(_) => "empty_interior",
            OtaError::Config(_) => "config",
            OtaError::AllDiverged(_) => "all_diverged",
            OtaError::Io { .. } => "io",
            OtaError::Idx { .. } => "idx",
            OtaError::Json(_) => "json",
            OtaError::Toml(_) => "toml",
            OtaError::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OtaError::Io {
            path: path.into(),
            source,
        }
    }
}
