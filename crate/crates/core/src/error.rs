use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: unknown attribute axis `{value}`")]
    UnknownAxis { line: usize, value: String },

    #[error("dictionary contains no entries")]
    EmptyDictionary,

    #[error("duplicate sentence_id `{0}`")]
    DuplicateSentenceId(String),

    #[error("unknown sentiment label `{0}`")]
    UnknownLabel(String),

    #[error("line {line}: probabilities of `{variant_id}` sum to {sum}")]
    ProbSumViolation { line: usize, variant_id: String, sum: f64 },

    #[error("line {line}: probability {value} of `{variant_id}` outside [0, 1]")]
    ProbOutOfRange {
        line: usize,
        variant_id: String,
        value: f64,
    },

    #[error("line {line}: label `{label}` of `{variant_id}` disagrees with argmax `{argmax}`")]
    LabelArgmaxMismatch {
        line: usize,
        variant_id: String,
        label: String,
        argmax: String,
    },

    #[error("line {line}: duplicate variant_id `{variant_id}` for model `{model_id}`")]
    DuplicateVariant {
        line: usize,
        model_id: String,
        variant_id: String,
    },

    #[error("model id mismatch: expected `{expected}`, found `{found}`")]
    ModelIdMismatch { expected: String, found: String },

    #[error("no model id: pass one explicitly or add a {{\"model_id\": ...}} header line")]
    MissingModelId,

    #[error("records from more than one model: `{0}` and `{1}`")]
    MixedModels(String, String),

    #[error("vector is not a probability distribution: {0:?}")]
    NonSimplex(Vec<f64>),

    #[error("cosine similarity of a zero vector")]
    ZeroVector,

    #[error("sample is empty")]
    EmptySample,

    #[error("sample contains a non-finite value")]
    NonFinite,

    #[error("overlap needs 2 to 5 models, got {0}")]
    OverlapModelCount(usize),

    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),

    #[error("no reference record for pair `{0}`")]
    MissingReference(String),

    #[error("ordering is not a permutation of the target pairs: {0}")]
    NotAPermutation(String),

    #[error("target model `{0}` has no bias-revealing pairs; detection curve undefined")]
    NoBiasInTarget(String),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data validation, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownStrategy(_) => 1,
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
            Error::Io { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
