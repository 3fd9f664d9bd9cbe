//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Answer token empty after canonicalization.
    #[error("invalid answer: {0}")]
    InvalidAnswer(String),

    /// Score is NaN or infinite.
    #[error("invalid score: {0}")]
    InvalidScore(String),

    /// A value outside its mathematical domain (e.g. logit of p ∉ (0,1)).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or empty input where data is required.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A parameter outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Operation requires a gold answer the instance does not carry.
    #[error("question '{question_id}' has no gold answer")]
    MissingGold { question_id: String },

    /// Operation requires correctness labels the instance does not carry.
    #[error("question '{question_id}' has unlabeled responses")]
    MissingLabel { question_id: String },

    /// Calibration data contains only one correctness class; density-ratio
    /// weights cannot be fitted. Parametric families still apply.
    #[error("calibration set is degenerate: no {missing} responses")]
    CalibrationDegenerate { missing: &'static str },

    /// A subsample size exceeding an instance's ensemble size.
    #[error("question '{question_id}' has {have} responses, {need} requested")]
    InsufficientResponses {
        question_id: String,
        have: usize,
        need: usize,
    },

    /// An artifact of the wrong kind for the requested operation.
    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),

    /// A dataset line failed validation.
    #[error("line {line}: {message}")]
    Dataset { line: u64, message: String },

    /// Unparseable serialized content.
    #[error("parse error: {0}")]
    Parse(String),

    /// Unknown artifact version or weight kind.
    #[error("version error: {0}")]
    Version(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
