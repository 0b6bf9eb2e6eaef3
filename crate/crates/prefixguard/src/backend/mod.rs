//! Uniform access to per-token conditional log-probabilities of a probe
//! prefix given a prompt, with or without prefix-cache reuse.
//!
//! The one primitive every other module consumes is [`prefix_logprobs`]:
//! exactly L conditionals for an L-token prefix, in nats, each finite and
//! <= 0. Cache hints affect latency and work accounting only, never the
//! returned values.

mod toy;
pub use toy::{train_toy_model, ToyModel, ToyProvider, DEFAULT_ALPHA, DEFAULT_ORDER};

mod remote;
pub use remote::{RemoteProvider, RemoteProviderConfig, TokenLogProb, WireRequest, WireResponse};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::types::TokenId;

/// Whether a probe may be served from the shared-prefix cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheHint {
    Reuse,
    Bypass,
}

/// One probe: the prefix tokens are appended to the (templated) prompt and
/// their conditional log-probabilities are requested.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbQuery {
    pub prompt_text: String,
    pub prefix_tokens: Vec<TokenId>,
    pub cache_hint: CacheHint,
}

impl LogProbQuery {
    pub fn new(
        prompt_text: impl Into<String>,
        prefix_tokens: Vec<TokenId>,
        cache_hint: CacheHint,
    ) -> Result<Self> {
        if prefix_tokens.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        Ok(LogProbQuery {
            prompt_text: prompt_text.into(),
            prefix_tokens,
            cache_hint,
        })
    }
}

/// Per-token conditionals for one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbResult {
    /// One entry per prefix token, in nats, each finite and <= 0.
    pub per_token: Vec<f64>,
    /// Token count of the base prompt (T_base), template included.
    pub prompt_token_count: usize,
    pub served_from_cache: bool,
    pub wall_time: Duration,
}

impl LogProbResult {
    pub fn mean(&self) -> f64 {
        self.per_token.iter().sum::<f64>() / self.per_token.len() as f64
    }
}

/// A shareable handle onto something that can compute conditional
/// log-probabilities. Implementations must be reentrant.
pub trait LogProbProvider: Send + Sync {
    fn model_id(&self) -> &str;

    /// Compute the per-token conditionals for `query.prefix_tokens` given
    /// `query.prompt_text`. Must return exactly L entries.
    fn prefix_logprobs(&self, query: &LogProbQuery) -> Result<LogProbResult>;

    /// Top candidate tokens for the position following `prompt ⊕ prefix`,
    /// sorted by log-probability descending, ties broken by ascending token
    /// id. `prefix` may be empty. Remote backends may truncate to their
    /// top-logprob limit.
    fn next_token_candidates(
        &self,
        prompt_text: &str,
        prefix: &[TokenId],
        limit: usize,
    ) -> Result<Vec<(TokenId, f64)>>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;

    /// Vocabulary size when the provider knows it (the toy backend does;
    /// remote backends generally do not).
    fn vocab_size(&self) -> Option<usize> {
        None
    }
}

/// Contract-enforcing entry point: validates the provider's response
/// (exactly L values, all finite and <= 0) before anyone consumes it.
/// Missing or infinite values are errors, never clamped.
pub fn prefix_logprobs(
    provider: &dyn LogProbProvider,
    query: &LogProbQuery,
) -> Result<LogProbResult> {
    let result = provider.prefix_logprobs(query)?;
    if result.per_token.len() != query.prefix_tokens.len() {
        return Err(Error::TokenCountMismatch {
            expected: query.prefix_tokens.len(),
            got: result.per_token.len(),
        });
    }
    for (i, &lp) in result.per_token.iter().enumerate() {
        if !lp.is_finite() || lp > 0.0 {
            return Err(Error::InvalidLogProb {
                position: i,
                value: lp,
            });
        }
    }
    Ok(result)
}

/// Run many probes with at most `concurrency` in flight. Results come back
/// in query order and are value-identical to sequential calls; per-query
/// failures are reported positionally without aborting siblings. Only when
/// every query fails does the batch itself fail.
pub fn batch_prefix_logprobs(
    provider: &dyn LogProbProvider,
    queries: &[LogProbQuery],
    concurrency: usize,
) -> Result<Vec<Result<LogProbResult>>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let workers = concurrency.max(1).min(queries.len());
    let slots: Vec<Mutex<Option<Result<LogProbResult>>>> =
        queries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= queries.len() {
                    break;
                }
                let outcome = prefix_logprobs(provider, &queries[i]);
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });
    let results: Vec<Result<LogProbResult>> = slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("slot filled"))
        .collect();
    if results.iter().all(|r| r.is_err()) {
        let first = results
            .iter()
            .find_map(|r| r.as_ref().err())
            .expect("at least one error");
        return Err(Error::AllProbesFailed(results.len(), first.to_string()));
    }
    Ok(results)
}
