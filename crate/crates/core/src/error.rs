use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at row {row}: {reason}")]
    MalformedRecord { row: usize, reason: String },
    #[error("schema violation at row {row}: attribute `{attribute}` has value `{value}` not allowed by the schema")]
    SchemaViolation {
        row: usize,
        attribute: String,
        value: String,
    },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("duplicate student id `{0}`")]
    DuplicateStudentId(String),
    #[error("inconsistent feature dimension at row {row}: expected {expected}, found {found}")]
    InconsistentFeatureDim {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("`cluster` used in a group spec before clusters were assigned")]
    ClusterNotAssigned,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no groups to plan over")]
    EmptyGroups,
    #[error("plan does not match dataset groups: {0}")]
    PlanGroupMismatch(String),
    #[error("target {target} for group `{group}` is below its original count {original}")]
    TargetBelowOriginal {
        group: String,
        target: usize,
        original: usize,
    },
    #[error("k = {k} exceeds the number of distinct rows ({distinct})")]
    KTooLarge { k: usize, distinct: usize },
    #[error("all embedded rows are identical")]
    DegenerateData,
    #[error("clustering does not cover the dataset: {0}")]
    CoverageMismatch(String),
    #[error("training fold{} contains a single label", fold.map(|f| format!(" {f}")).unwrap_or_default())]
    SingleClassFold { fold: Option<usize> },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("too few records: {0}")]
    TooFewRecords(String),
    #[error("invalid number of folds {0}; need at least 2")]
    InvalidK(usize),
    #[error("AUC needs both labels present")]
    SingleClass,
    #[error("predictions ({found}) are not aligned with records ({expected})")]
    AlignmentMismatch { expected: usize, found: usize },
    #[error("no candidate reports to select from")]
    EmptyCandidates,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("missing run artifacts: {0}")]
    MissingArtifacts(String),
    #[error("fold {fold}: training and test sets share student ids")]
    Leakage { fold: usize },
    #[error("external model failed: {0}")]
    ExternalModel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, configs)
    /// rather than by a failure inside the pipeline.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedRecord { .. }
                | Error::SchemaViolation { .. }
                | Error::InvalidSchema(_)
                | Error::DuplicateStudentId(_)
                | Error::InconsistentFeatureDim { .. }
                | Error::UnknownAttribute(_)
                | Error::InvalidConfig(_)
                | Error::UnknownPreset(_)
                | Error::MissingArtifacts(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
