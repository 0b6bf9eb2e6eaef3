//! Harmfulness scoring: the refusal-vs-agreement log-probability gap and
//! the thresholded decision.
//!
//! For a prompt x, every prefix contributes its length-normalized mean
//! log-probability; `ell_ref` and `ell_agr` average those means over the
//! refusal and agreement lists, and the score is s(x) = ell_ref - ell_agr.
//! Prefixes of different lengths contribute equally to the outer mean;
//! there is no token-level re-weighting. All values are in nats.

use crate::backend::{
    batch_prefix_logprobs, prefix_logprobs, CacheHint, LogProbProvider, LogProbQuery,
};
use crate::error::{Error, Result};
use crate::types::{Prefix, PrefixSet, Prompt};

/// The score triple plus per-prefix means (kept for diagnostics and for
/// threshold sweeps without re-probing).
#[derive(Debug, Clone, PartialEq)]
pub struct HarmfulnessScore {
    pub ell_ref: f64,
    pub ell_agr: f64,
    /// ell_ref - ell_agr, by construction.
    pub s: f64,
    /// Mean log-probability per refusal prefix, in `set.refusal` order.
    pub per_refusal: Vec<f64>,
    /// Mean log-probability per agreement prefix, in `set.agreement` order.
    pub per_agreement: Vec<f64>,
}

/// A thresholded score. `harmful` is exactly `score.s > tau`: ties
/// classify benign.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub score: HarmfulnessScore,
    pub tau: f64,
    pub harmful: bool,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Length-normalized mean log-probability of one prefix given one prompt.
pub fn prefix_mean_logprob(
    provider: &dyn LogProbProvider,
    prompt: &Prompt,
    prefix: &Prefix,
) -> Result<f64> {
    prefix_mean_logprob_with_hint(provider, prompt, prefix, CacheHint::Reuse)
}

pub fn prefix_mean_logprob_with_hint(
    provider: &dyn LogProbProvider,
    prompt: &Prompt,
    prefix: &Prefix,
    hint: CacheHint,
) -> Result<f64> {
    let query = LogProbQuery::new(prompt.text.clone(), prefix.tokens.clone(), hint)?;
    let result = prefix_logprobs(provider, &query)?;
    Ok(result.mean())
}

/// Score one prompt against a prefix set. Any failing probe fails the whole
/// score; there is no partial averaging.
pub fn score(
    provider: &dyn LogProbProvider,
    prompt: &Prompt,
    set: &PrefixSet,
) -> Result<HarmfulnessScore> {
    score_with_hint(provider, prompt, set, CacheHint::Reuse)
}

pub fn score_with_hint(
    provider: &dyn LogProbProvider,
    prompt: &Prompt,
    set: &PrefixSet,
    hint: CacheHint,
) -> Result<HarmfulnessScore> {
    let per_refusal = set
        .refusal
        .iter()
        .map(|p| prefix_mean_logprob_with_hint(provider, prompt, p, hint))
        .collect::<Result<Vec<f64>>>()?;
    let per_agreement = set
        .agreement
        .iter()
        .map(|p| prefix_mean_logprob_with_hint(provider, prompt, p, hint))
        .collect::<Result<Vec<f64>>>()?;
    Ok(assemble(per_refusal, per_agreement))
}

fn assemble(per_refusal: Vec<f64>, per_agreement: Vec<f64>) -> HarmfulnessScore {
    let ell_ref = mean(&per_refusal);
    let ell_agr = mean(&per_agreement);
    HarmfulnessScore {
        ell_ref,
        ell_agr,
        s: ell_ref - ell_agr,
        per_refusal,
        per_agreement,
    }
}

/// Score and threshold: harmful iff s > tau (strict; ties are benign).
pub fn classify(
    provider: &dyn LogProbProvider,
    prompt: &Prompt,
    set: &PrefixSet,
    tau: f64,
) -> Result<Decision> {
    classify_with_hint(provider, prompt, set, tau, CacheHint::Reuse)
}

pub fn classify_with_hint(
    provider: &dyn LogProbProvider,
    prompt: &Prompt,
    set: &PrefixSet,
    tau: f64,
    hint: CacheHint,
) -> Result<Decision> {
    let score = score_with_hint(provider, prompt, set, hint)?;
    Ok(decide(score, tau))
}

pub fn decide(score: HarmfulnessScore, tau: f64) -> Decision {
    let harmful = score.s > tau;
    Decision { score, tau, harmful }
}

/// Order-preserving batch classify. Probes are batched across prompts and
/// prefixes with at most `concurrency` in flight; values are identical to
/// sequential calls. Per-prompt failures are positional; the batch only
/// fails as a whole when every prompt fails.
pub fn score_batch(
    provider: &dyn LogProbProvider,
    prompts: &[Prompt],
    set: &PrefixSet,
    tau: f64,
    concurrency: usize,
) -> Result<Vec<Result<Decision>>> {
    score_batch_with_hint(provider, prompts, set, tau, concurrency, CacheHint::Reuse)
}

pub fn score_batch_with_hint(
    provider: &dyn LogProbProvider,
    prompts: &[Prompt],
    set: &PrefixSet,
    tau: f64,
    concurrency: usize,
    hint: CacheHint,
) -> Result<Vec<Result<Decision>>> {
    if prompts.is_empty() {
        return Ok(Vec::new());
    }
    let k = set.refusal.len();
    let m = set.agreement.len();
    let per_prompt = k + m;
    // one query per (prompt, prefix), refusal side first
    let mut queries = Vec::with_capacity(prompts.len() * per_prompt);
    for prompt in prompts {
        for prefix in set.iter_all() {
            queries.push(LogProbQuery::new(
                prompt.text.clone(),
                prefix.tokens.clone(),
                hint,
            )?);
        }
    }
    let results = match batch_prefix_logprobs(provider, &queries, concurrency) {
        Ok(r) => r,
        Err(Error::AllProbesFailed(_, first)) => {
            return Err(Error::AllProbesFailed(prompts.len(), first))
        }
        Err(e) => return Err(e),
    };

    let mut decisions = Vec::with_capacity(prompts.len());
    for (i, _prompt) in prompts.iter().enumerate() {
        let chunk = &results[i * per_prompt..(i + 1) * per_prompt];
        let outcome = (|| -> Result<Decision> {
            let mut per_refusal = Vec::with_capacity(k);
            let mut per_agreement = Vec::with_capacity(m);
            for (j, r) in chunk.iter().enumerate() {
                let mean = match r {
                    Ok(res) => res.mean(),
                    Err(e) => return Err(Error::AllProbesFailed(1, e.to_string())),
                };
                if j < k {
                    per_refusal.push(mean);
                } else {
                    per_agreement.push(mean);
                }
            }
            Ok(decide(assemble(per_refusal, per_agreement), tau))
        })();
        decisions.push(outcome);
    }
    if decisions.iter().all(|d| d.is_err()) {
        let first = decisions
            .iter()
            .find_map(|d| d.as_ref().err())
            .expect("all failed");
        return Err(Error::AllProbesFailed(prompts.len(), first.to_string()));
    }
    Ok(decisions)
}
