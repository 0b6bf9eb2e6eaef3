//! Client for a remote inference endpoint that can echo per-token
//! log-probabilities.
//!
//! Wire contract: a single POST endpoint taking a JSON body. A probe sends
//! `{model, prompt, template, suffix_token_ids, echo_logprobs: true, cache}`
//! and receives per-token ids and log-probabilities for the full
//! prompt ⊕ suffix sequence; the client slices out exactly the suffix
//! positions and verifies they align with the requested token ids; a
//! misalignment is a hard error, the client never re-segments. The same
//! endpoint serves `{tokenize_text}` / `{detokenize_ids}` requests, since
//! the serving side is the tokenization authority, and `top_logprobs > 0`
//! requests next-token candidates for the position after the suffix.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{TemplateMode, TokenId};

use super::{CacheHint, LogProbProvider, LogProbQuery, LogProbResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default)]
    pub template: TemplateMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffix_token_ids: Option<Vec<TokenId>>,
    #[serde(default)]
    pub echo_logprobs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheHint>,
    #[serde(default)]
    pub top_logprobs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenize_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detokenize_ids: Option<Vec<TokenId>>,
}

impl WireRequest {
    fn base(model: &str, template: TemplateMode) -> WireRequest {
        WireRequest {
            model: model.to_string(),
            prompt: None,
            template,
            suffix_token_ids: None,
            echo_logprobs: false,
            cache: None,
            top_logprobs: 0,
            tokenize_text: None,
            detokenize_ids: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenLogProb {
    pub token_id: TokenId,
    pub logprob: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub token_ids: Option<Vec<TokenId>>,
    /// Per-token log-probabilities for the full sequence; the first entry
    /// (no conditioning context) may be null.
    #[serde(default)]
    pub logprobs: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub prompt_token_count: Option<usize>,
    #[serde(default)]
    pub served_from_cache: Option<bool>,
    #[serde(default)]
    pub next_top_logprobs: Option<Vec<TokenLogProb>>,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RemoteProviderConfig {
    pub endpoint: String,
    pub model_id: String,
    pub template: TemplateMode,
    pub timeout: Duration,
    /// Total attempts per request (requests are idempotent).
    pub retries: u32,
    pub backoff: Duration,
    pub auth_token: Option<String>,
}

impl RemoteProviderConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        RemoteProviderConfig {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            template: TemplateMode::Raw,
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(250),
            auth_token: None,
        }
    }
}

pub struct RemoteProvider {
    config: RemoteProviderConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteProviderConfig) -> RemoteProvider {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build();
        RemoteProvider {
            agent: agent_config.into(),
            config,
        }
    }

    fn transport_error(&self, msg: String) -> Error {
        Error::Transport {
            endpoint: self.config.endpoint.clone(),
            msg,
        }
    }

    /// POST with retries and exponential backoff.
    fn post(&self, request: &WireRequest) -> Result<WireResponse> {
        let mut last_err = String::new();
        for attempt in 0..self.config.retries.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            let mut call = self.agent.post(&self.config.endpoint);
            if let Some(token) = &self.config.auth_token {
                call = call.header("authorization", &format!("Bearer {token}"));
            }
            match call.send_json(request) {
                Ok(mut response) => {
                    return response
                        .body_mut()
                        .read_json::<WireResponse>()
                        .map_err(|e| self.transport_error(format!("bad response body: {e}")));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(self.transport_error(format!(
            "{last_err} (after {} attempts)",
            self.config.retries.max(1)
        )))
    }
}

impl LogProbProvider for RemoteProvider {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn prefix_logprobs(&self, query: &LogProbQuery) -> Result<LogProbResult> {
        let started = Instant::now();
        let mut req = WireRequest::base(&self.config.model_id, self.config.template);
        req.prompt = Some(query.prompt_text.clone());
        req.suffix_token_ids = Some(query.prefix_tokens.clone());
        req.echo_logprobs = true;
        req.cache = Some(query.cache_hint);
        let response = self.post(&req)?;
        let wall_time = started.elapsed();

        let token_ids = response.token_ids.ok_or(Error::MissingLogProbs)?;
        let logprobs = response.logprobs.ok_or(Error::MissingLogProbs)?;
        let l = query.prefix_tokens.len();
        if logprobs.len() != token_ids.len() || token_ids.len() < l {
            return Err(Error::TokenCountMismatch {
                expected: l,
                got: token_ids.len().min(logprobs.len()),
            });
        }
        // the suffix positions must hold exactly the tokens we asked about
        let tail = &token_ids[token_ids.len() - l..];
        for (i, (&got, &want)) in tail.iter().zip(&query.prefix_tokens).enumerate() {
            if got != want {
                return Err(Error::TokenizationMismatch { position: i });
            }
        }
        let per_token: Vec<f64> = logprobs[logprobs.len() - l..]
            .iter()
            .enumerate()
            .map(|(i, lp)| match lp {
                Some(v) => Ok(*v),
                None => Err(Error::InvalidLogProb {
                    position: i,
                    value: f64::NAN,
                }),
            })
            .collect::<Result<_>>()?;
        Ok(LogProbResult {
            per_token,
            prompt_token_count: response
                .prompt_token_count
                .unwrap_or(token_ids.len() - l),
            served_from_cache: response.served_from_cache.unwrap_or(false),
            wall_time,
        })
    }

    fn next_token_candidates(
        &self,
        prompt_text: &str,
        prefix: &[TokenId],
        limit: usize,
    ) -> Result<Vec<(TokenId, f64)>> {
        let mut req = WireRequest::base(&self.config.model_id, self.config.template);
        req.prompt = Some(prompt_text.to_string());
        req.suffix_token_ids = Some(prefix.to_vec());
        req.top_logprobs = limit;
        let response = self.post(&req)?;
        let mut ranked: Vec<(TokenId, f64)> = response
            .next_top_logprobs
            .ok_or(Error::MissingLogProbs)?
            .into_iter()
            .map(|t| (t.token_id, t.logprob))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(limit);
        Ok(ranked)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut req = WireRequest::base(&self.config.model_id, self.config.template);
        req.tokenize_text = Some(text.to_string());
        let response = self.post(&req)?;
        response
            .token_ids
            .ok_or_else(|| self.transport_error("tokenize response missing token_ids".into()))
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let mut req = WireRequest::base(&self.config.model_id, self.config.template);
        req.detokenize_ids = Some(tokens.to_vec());
        let response = self.post(&req)?;
        response
            .text
            .ok_or_else(|| self.transport_error("detokenize response missing text".into()))
    }
}
