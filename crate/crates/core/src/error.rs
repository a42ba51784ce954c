use thiserror::Error;

/// Errors raised by shape validation and network assembly.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("stride-2 layer needs an even input size, got {input_size}")]
    NonDivisible { input_size: u32 },
    #[error("chain broken at {boundary}: {detail}")]
    Chain { boundary: String, detail: String },
}

impl ShapeError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ShapeError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

/// Channel planning failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid input {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("infeasible at stage {stage}: {reason}")]
    Infeasible { stage: usize, reason: String },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// A single option-set violation in a subnet configuration.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Errors from the configuration space (validation, resolution, crossover).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("invalid configuration: {}", join_violations(.0))]
    Validation(Vec<Violation>),
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("resolution {resolution} cannot be resolved: {source}")]
    Resolution {
        resolution: u32,
        #[source]
        source: ShapeError,
    },
    #[error("configuration shapes differ: {0}")]
    Mismatch(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Predictor construction and inference failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictorError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("singular design: {0}")]
    Singular(String),
    #[error("feature length mismatch: model expects {expected}, got {got}")]
    FeatureLength { expected: usize, got: usize },
    #[error("invalid sampling request: {0}")]
    InvalidRequest(String),
    #[error("bucket budget exhausted after {attempts} draws; occupancy {occupancy:?} (target {target} per bucket)")]
    PartialDataset {
        attempts: usize,
        occupancy: Vec<usize>,
        target: usize,
    },
}

/// Evolutionary search failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("no feasible population under {max_peak_items} items after {attempts} draws (tightest peak seen {tightest_peak})")]
    Infeasible {
        max_peak_items: u64,
        attempts: usize,
        tightest_peak: u64,
    },
}
