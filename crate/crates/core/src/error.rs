use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("vectors are antipodal; interpolation direction is undefined")]
    AntipodalVectors,
    #[error("need at least 2 distinct known labels, found {0}")]
    InsufficientCategories(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {0} rows; at least 2 are required")]
    DatasetTooSmall(usize),
    #[error("label {0} has no members")]
    EmptyCategory(i64),
    #[error("cost matrix has a non-finite entry at ({0}, {1})")]
    NonFiniteCost(usize, usize),
    #[error("no ground-truth labeled samples to rectify against")]
    NoLabeledSamples,
    #[error("no leader for label {0}")]
    MissingLeader(i64),
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: i64, classes: usize },
    #[error("model parameters contain non-finite values in {0}")]
    NonFiniteParams(&'static str),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("leader memory is empty")]
    EmptyMemory,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("could not place {0} category centers with the requested separation")]
    SeparationInfeasible(usize),
    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable, machine-parseable category name used by the command-line tool.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ZeroVector => "zero_vector",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::AntipodalVectors => "antipodal_vectors",
            Error::InsufficientCategories(_) => "insufficient_categories",
            Error::EmptyDataset => "empty_dataset",
            Error::DatasetTooSmall(_) => "dataset_too_small",
            Error::EmptyCategory(_) => "empty_category",
            Error::NonFiniteCost(..) => "non_finite_cost",
            Error::NoLabeledSamples => "no_labeled_samples",
            Error::MissingLeader(_) => "missing_leader",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::NonFiniteParams(_) => "non_finite_params",
            Error::DivergenceDetected { .. } => "divergence_detected",
            Error::EmptyMemory => "empty_memory",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::SeparationInfeasible(_) => "separation_infeasible",
            Error::InvalidLabelSpace(_) => "invalid_label_space",
            Error::InvalidConfig(_) => "invalid_config",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionUnsupported(_) => "version_unsupported",
            Error::TruncatedPayload(_) => "truncated_payload",
            Error::MetadataMismatch(_) => "metadata_mismatch",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
