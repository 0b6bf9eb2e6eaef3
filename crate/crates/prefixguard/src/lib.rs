//! prefixguard: harmful-prompt detection by probing a language model's
//! conditional log-probabilities over agreement-style vs refusal-style
//! response openings.
//!
//! A model that would refuse a prompt assigns its refusal openers higher
//! probability than its compliance openers; the gap, read off in a single
//! batch of teacher-forced probes, is a one-dimensional harmfulness score.
//! With server-side prefix caching each probe costs only its own few
//! tokens, so detection overhead stays near first-token latency.
//!
//! The crate ships:
//! - [`backend`]: the log-probability provider abstraction, a remote HTTP
//!   client, and a deterministic n-gram toy backend for offline work;
//! - [`scoring`]: the score and decision rule;
//! - [`search`]: offline beam search that discovers discriminative prefix
//!   sets for a target model;
//! - [`eval`]: F1 / ROC-AUC / threshold calibration / relative score;
//! - [`mod@bench`]: the prefix-cache cost model and overhead measurement;
//! - [`cli`]: the `prefixguard` command-line tool.

pub mod backend;
pub mod bench;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod scoring;
pub mod search;
pub mod store;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    BackendDescriptor, Dataset, Prefix, PrefixSet, Prompt, Role, RunConfig, SearchParams,
    TemplateMode, TokenId,
};
