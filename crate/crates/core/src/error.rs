use std::path::PathBuf;

/// Errors produced anywhere in the crate. Annotator, item and label numbers
/// in messages are 1-based, the way they appear in data files.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset: label out of range: item {item}, annotator {annotator}, label {label} (K = {k})")]
    LabelOutOfRange {
        item: usize,
        annotator: usize,
        label: usize,
        k: usize,
    },
    #[error("dataset: duplicate response: item {item}, annotator {annotator}")]
    DuplicateResponse { item: usize, annotator: usize },
    #[error("dataset: index out of range: {what} {index} (max {max})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        max: usize,
    },
    #[error("dataset: {0}")]
    InvalidDataset(String),

    #[error("model: {0}")]
    InvalidModel(String),
    #[error("model: dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse: {path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("cooccurrence: annotator {0} paired with itself")]
    SameAnnotator(usize),

    #[error("multispa: isolated annotator {0} has no co-labeling partner")]
    IsolatedAnnotator(usize),
    #[error("multispa: insufficient mass for annotator {annotator}: {kept} columns survive, need {k}")]
    InsufficientMass {
        annotator: usize,
        kept: usize,
        k: usize,
    },
    #[error("multispa: degenerate block for annotator {annotator} after {picked} picks")]
    DegenerateBlock { annotator: usize, picked: usize },
    #[error("multispa: reference not invertible: annotator {annotator} (condition number {cond:e})")]
    ReferenceNotInvertible { annotator: usize, cond: f64 },
    #[error("multispa: unreachable annotators from reference: {0:?}")]
    Unreachable(Vec<usize>),
    #[error("multispa: no qualifying pair for prior estimation")]
    NoQualifyingPair,
    #[error("multispa: degenerate prior")]
    DegeneratePrior,

    #[error("config: {0}")]
    InvalidConfig(String),
    #[error("eval: missing truth for item {0}")]
    MissingTruth(usize),
    #[error("eval: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;
