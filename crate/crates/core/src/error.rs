use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TfnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TfnError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward called on a non-scalar node of shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; build a new tape for another pass")]
    BackwardTwice,

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {value} outside [-3, 3]")]
    LabelOutOfRange { value: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("cannot split {speakers} speakers into {folds} folds")]
    TooFewSpeakers { speakers: usize, folds: usize },

    #[error("speaker {0} appears in both train and test partitions")]
    SpeakerLeak(String),

    #[error("every grid configuration diverged")]
    AllConfigsDiverged,

    #[error("model/data mismatch: model expects {model}, data provides {data}")]
    ModelDataMismatch { model: String, data: String },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Dataset parsing and validation failures. Line numbers are 1-based.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("no utterances in dataset")]
    NoUtterances,

    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: missing or invalid header record: {message}")]
    Header { line: usize, message: String },

    #[error("line {line}: {field} has dimension {actual}, header declares {expected}")]
    DimMismatch {
        line: usize,
        field: String,
        expected: usize,
        actual: usize,
    },

    #[error("line {line}: label {value} outside [-3, 3]")]
    LabelOutOfRange { line: usize, value: f64 },

    #[error("line {line}: {modality} sequence is empty")]
    EmptyModality { line: usize, modality: String },

    #[error("line {line}: non-finite value in {field}")]
    NonFinite { line: usize, field: String },

    #[error("line {line}: token `{token}` not found in lexicon")]
    UnknownToken { line: usize, token: String },

    #[error("line {line}: word tokens present but no lexicon was supplied")]
    MissingLexicon { line: usize },

    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },

    #[error("ragged frames: frame {index} has dimension {actual}, expected {expected}")]
    RaggedFrames {
        index: usize,
        expected: usize,
        actual: usize,
    },
}

impl TfnError {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        TfnError::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TfnError::Io {
            path: path.into(),
            source,
        }
    }
}
