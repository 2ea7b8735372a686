use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("malformed RLE: {0}")]
    MalformedRle(String),
    #[error("proposal index {index} out of range for {len} proposals")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),
    #[error("no feasible assignment: {0}")]
    InfeasibleConstraints(String),
    #[error("instance too large for exhaustive search: {proposals} proposals (cap {cap})")]
    TooLarge { proposals: usize, cap: usize },
    #[error("synthetic generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),
    #[error("empty input")]
    EmptyInput,
    #[error("class {class} has no labeled pixels")]
    DegenerateClass { class: usize },
    #[error("no human-labeled samples")]
    NoLabeledData,
    #[error("image {image_id}: {reason}")]
    MissingData { image_id: String, reason: String },
    #[error("unknown or duplicate image id {0}")]
    UnknownImage(String),
    #[error("model error: {0}")]
    Model(String),
}
