use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("row {0} has L2 norm below 1e-12, cannot normalize")]
    ZeroRow(usize),
    #[error("similarity {0} outside [-1, 1] tolerance")]
    DomainError(f64),
    #[error("could not place {0} centers satisfying the separation constraint in 1000 attempts")]
    GenerationFailure(&'static str),
    #[error("parse error at {path}:{line}: {msg}")]
    ParseError {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("batch has no anchor-positive pair")]
    NoPositivePair,
    #[error("NCA term requires at least one negative similarity")]
    EmptyNegatives,
    #[error("no valid triplet in batch: every anchor lacks a positive or a negative")]
    NoValidTriplet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("K={k} too large for effective gallery size {gallery}")]
    KTooLarge { k: usize, gallery: usize },
    #[error("covariance has rank < 2, cannot project to 2-D")]
    DegenerateCovariance,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
