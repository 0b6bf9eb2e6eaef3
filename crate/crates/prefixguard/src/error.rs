//! Crate-wide error type.

use std::path::PathBuf;

use crate::types::TokenId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- file / record handling ----
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("line {line}: label must be 0 or 1, got {value}")]
    LabelOutOfRange { line: usize, value: i64 },
    #[error("line {line}: duplicate prompt id `{id}`")]
    DuplicatePromptId { line: usize, id: String },
    #[error("prompt text is empty after trimming")]
    EmptyPromptText,
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(u8),

    // ---- prefix sets ----
    #[error("prefix token sequence is empty")]
    EmptyPrefix,
    #[error("prefix role {role} does not match the sign of delta {delta}")]
    RoleDeltaMismatch { role: &'static str, delta: f64 },
    #[error("prefix set needs at least one prefix per side (agreement={agreement}, refusal={refusal})")]
    EmptyPrefixSide { agreement: usize, refusal: usize },
    #[error("duplicate token sequence in prefix set: {text:?}")]
    DuplicatePrefixTokens { text: String },
    #[error("{path}: unsupported schema `{found}`, expected `{expected}`")]
    SchemaMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    // ---- backend ----
    #[error("token id {0} is outside the provider vocabulary")]
    InvalidToken(TokenId),
    #[error("unknown word {0:?} for the toy vocabulary")]
    UnknownWord(String),
    #[error("transport failure talking to {endpoint}: {msg}")]
    Transport { endpoint: String, msg: String },
    #[error("backend response is missing log-probabilities")]
    MissingLogProbs,
    #[error("backend returned {got} log-probabilities for a {expected}-token prefix")]
    TokenCountMismatch { expected: usize, got: usize },
    #[error("backend tokenization does not align with the requested prefix tokens at position {position}")]
    TokenizationMismatch { position: usize },
    #[error("log-probability at position {position} is {value}, expected a finite value <= 0")]
    InvalidLogProb { position: usize, value: f64 },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("smoothing alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("all {0} probes in the batch failed; first error: {1}")]
    AllProbesFailed(usize, String),

    // ---- scoring / search ----
    #[error("prompt set is empty")]
    EmptyPromptSet,
    #[error("search config invalid: {0}")]
    InvalidSearchConfig(String),
    #[error("no {side}-side candidates: need {needed}, found {found}; widen the search")]
    NotEnoughCandidates {
        side: &'static str,
        needed: usize,
        found: usize,
    },

    // ---- eval ----
    #[error("no scores to evaluate")]
    EmptyScores,
    #[error("prompt `{0}` has no label")]
    UnlabeledPrompt(String),
    #[error("need both a positive and a negative example, got a single class")]
    SingleClass,
    #[error("upper-bound F1 must be positive, got {0}")]
    NonPositiveUpperBound(f64),

    // ---- bench ----
    #[error("need at least 3 repetitions, got {0}")]
    TooFewRepetitions(usize),
    #[error("cache reuse changed score values for prompt `{prompt_id}`: {bypass} vs {reuse}")]
    CacheBrokeTransparency {
        prompt_id: String,
        bypass: f64,
        reuse: f64,
    },

    // ---- config ----
    #[error("config invalid: {0}")]
    InvalidConfig(String),
    #[error("{path}: {msg}")]
    BadFile { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
