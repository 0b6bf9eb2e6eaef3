//! Offline discovery of discriminative prefixes: a progressively expanding,
//! sign-balanced beam search over token sequences.
//!
//! Candidates are scored by their safety separation
//! delta = mu_benign - mu_harmful, the gap between a prefix's average
//! log-probability over the benign and harmful init prompts. Layers are
//! ranked by |delta|; every retained layer must hold at least one
//! positive-delta and one negative-delta prefix whenever its expansion pool
//! contains both signs. Positive-delta prefixes become the agreement side,
//! negative-delta the refusal side.
//!
//! Everything is deterministic: ties break by higher |delta|, then shorter
//! prefix, then token-id-lexicographic order.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::Serialize;

use crate::backend::{batch_prefix_logprobs, CacheHint, LogProbProvider, LogProbQuery};
use crate::error::{Error, Result};
use crate::types::{Prefix, PrefixSet, Prompt, Role, SearchParams, TokenId};

/// Init sets and sizes for one search run.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub init_benign: Vec<Prompt>,
    pub init_harmful: Vec<Prompt>,
    pub params: SearchParams,
    /// Max in-flight probes while scoring a layer.
    pub concurrency: usize,
}

impl SearchConfig {
    pub fn new(init_benign: Vec<Prompt>, init_harmful: Vec<Prompt>, params: SearchParams) -> Result<Self> {
        let config = SearchConfig {
            init_benign,
            init_harmful,
            params,
            concurrency: 4,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_benign.is_empty() || self.init_harmful.is_empty() {
            return Err(Error::InvalidSearchConfig(
                "both init sets must be non-empty".into(),
            ));
        }
        if self.params.top_k < 2 {
            return Err(Error::InvalidSearchConfig("top_k must be at least 2".into()));
        }
        if self.params.beam_width < 2 {
            return Err(Error::InvalidSearchConfig(
                "beam_width must be at least 2".into(),
            ));
        }
        if self.params.max_length < 1 {
            return Err(Error::InvalidSearchConfig(
                "max_length must be at least 1".into(),
            ));
        }
        if self.params.final_per_side < 1 {
            return Err(Error::InvalidSearchConfig(
                "final_per_side must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn all_prompts(&self) -> Vec<&Prompt> {
        self.init_benign.iter().chain(self.init_harmful.iter()).collect()
    }
}

/// One scored prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub mu_benign: f64,
    pub mu_harmful: f64,
    /// mu_benign - mu_harmful, by construction.
    pub delta: f64,
}

impl Candidate {
    fn sign(&self) -> Ordering {
        self.delta.partial_cmp(&0.0).unwrap_or(Ordering::Equal)
    }
}

/// Everything scored at one depth, plus what survived.
#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub depth: usize,
    pub scored: Vec<Candidate>,
    pub retained: Vec<Candidate>,
    pub pool_had_positive: bool,
    pub pool_had_negative: bool,
    /// True when every candidate at this depth had delta == 0.
    pub degenerate: bool,
}

/// Full search output: every candidate ever scored plus per-layer detail.
#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    pub candidates: Vec<Candidate>,
    pub layers: Vec<LayerReport>,
    pub warnings: Vec<String>,
}

impl SearchOutcome {
    pub fn best_abs_delta(&self) -> f64 {
        self.candidates
            .iter()
            .map(|c| c.delta.abs())
            .fold(0.0, f64::max)
    }
}

/// Average log-probability of a prefix over a prompt set:
/// (1/|C|) Σ_x (1/L) Σ_l log p(t_l | x, t_<l). Accumulation is in prompt
/// order, so identical inputs give bit-identical results.
pub fn mu_over_set(
    provider: &dyn LogProbProvider,
    prompts: &[&Prompt],
    tokens: &[TokenId],
    concurrency: usize,
) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::EmptyPromptSet);
    }
    let queries = prompts
        .iter()
        .map(|p| LogProbQuery::new(p.text.clone(), tokens.to_vec(), CacheHint::Reuse))
        .collect::<Result<Vec<_>>>()?;
    let results = batch_prefix_logprobs(provider, &queries, concurrency)?;
    let mut sum = 0.0;
    for r in results {
        sum += r?.mean();
    }
    Ok(sum / prompts.len() as f64)
}

/// Score one prefix against both init sets.
pub fn safety_separation(
    provider: &dyn LogProbProvider,
    config: &SearchConfig,
    tokens: &[TokenId],
) -> Result<Candidate> {
    config.validate()?;
    let benign: Vec<&Prompt> = config.init_benign.iter().collect();
    let harmful: Vec<&Prompt> = config.init_harmful.iter().collect();
    let mu_benign = mu_over_set(provider, &benign, tokens, config.concurrency)?;
    let mu_harmful = mu_over_set(provider, &harmful, tokens, config.concurrency)?;
    Ok(Candidate {
        tokens: tokens.to_vec(),
        text: provider.detokenize(tokens)?,
        mu_benign,
        mu_harmful,
        delta: mu_benign - mu_harmful,
    })
}

/// One-step candidate tokens at the current position: the top_k tokens by
/// mean next-token log-probability over all init prompts, deterministic
/// order (ascending token id breaks ties). Tokens a remote backend omits
/// from one prompt's top list are floored at that prompt's minimum returned
/// value; the toy backend enumerates its whole vocabulary, so its means are
/// exact.
pub fn propose_tokens(
    provider: &dyn LogProbProvider,
    config: &SearchConfig,
    beam_prefix: &[TokenId],
) -> Result<Vec<TokenId>> {
    config.validate()?;
    if beam_prefix.len() >= config.params.max_length {
        return Err(Error::InvalidSearchConfig(format!(
            "beam prefix of length {} is already at max_length {}",
            beam_prefix.len(),
            config.params.max_length
        )));
    }
    let prompts = config.all_prompts();
    let limit = provider
        .vocab_size()
        .unwrap_or(config.params.top_k.saturating_mul(4).max(64));
    let mut sums: std::collections::BTreeMap<TokenId, f64> = std::collections::BTreeMap::new();
    let mut per_prompt: Vec<(Vec<(TokenId, f64)>, f64)> = Vec::with_capacity(prompts.len());
    for prompt in &prompts {
        let candidates = provider.next_token_candidates(&prompt.text, beam_prefix, limit)?;
        let floor = candidates
            .iter()
            .map(|&(_, lp)| lp)
            .fold(f64::INFINITY, f64::min);
        for &(t, _) in &candidates {
            sums.entry(t).or_insert(0.0);
        }
        per_prompt.push((candidates, floor));
    }
    for (candidates, floor) in &per_prompt {
        let lookup: std::collections::HashMap<TokenId, f64> =
            candidates.iter().copied().collect();
        for (token, sum) in sums.iter_mut() {
            *sum += lookup.get(token).copied().unwrap_or(*floor);
        }
    }
    let n = prompts.len() as f64;
    let mut ranked: Vec<(TokenId, f64)> =
        sums.into_iter().map(|(t, s)| (t, s / n)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(config.params.top_k);
    Ok(ranked.into_iter().map(|(t, _)| t).collect())
}

/// Rank order within a layer: larger |delta| first, then shorter prefix,
/// then token-id-lexicographic.
fn rank_cmp(a: &Candidate, b: &Candidate) -> Ordering {
    b.delta
        .abs()
        .partial_cmp(&a.delta.abs())
        .unwrap_or(Ordering::Equal)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then(a.tokens.cmp(&b.tokens))
}

/// The progressively expanding beam search. Starts from the empty prefix
/// (expanded but never selectable), stops at max_length, and returns every
/// candidate it scored.
pub fn beam_search(provider: &dyn LogProbProvider, config: &SearchConfig) -> Result<SearchOutcome> {
    config.validate()?;
    let mut beam: Vec<Vec<TokenId>> = vec![Vec::new()];
    let mut all = Vec::new();
    let mut layers = Vec::new();
    let mut warnings = Vec::new();

    for depth in 1..=config.params.max_length {
        // propose expansions, deduplicating identical token sequences
        let mut pool: Vec<Vec<TokenId>> = Vec::new();
        let mut seen: HashSet<Vec<TokenId>> = HashSet::new();
        for prefix in &beam {
            for token in propose_tokens(provider, config, prefix)? {
                let mut next = prefix.clone();
                next.push(token);
                if seen.insert(next.clone()) {
                    pool.push(next);
                }
            }
        }
        if pool.is_empty() {
            break;
        }

        let mut scored = Vec::with_capacity(pool.len());
        for seq in &pool {
            scored.push(safety_separation(provider, config, seq)?);
        }
        scored.sort_by(rank_cmp);

        let pool_had_positive = scored.iter().any(|c| c.delta > 0.0);
        let pool_had_negative = scored.iter().any(|c| c.delta < 0.0);
        let degenerate = scored.iter().all(|c| c.delta == 0.0);
        if degenerate {
            warnings.push(format!(
                "layer {depth}: every candidate has delta = 0; sign rule is vacuous"
            ));
        }

        let retained = retain_sign_balanced(&scored, config.params.beam_width);

        all.extend(scored.iter().cloned());
        layers.push(LayerReport {
            depth,
            scored,
            retained: retained.clone(),
            pool_had_positive,
            pool_had_negative,
            degenerate,
        });
        beam = retained.into_iter().map(|c| c.tokens).collect();
    }

    Ok(SearchOutcome {
        candidates: all,
        layers,
        warnings,
    })
}

/// Top beam_width by rank, then enforce the both-signs rule: if the pool
/// contains a sign the retained beam lacks, the lowest-ranked retained
/// candidate whose removal keeps the other sign present is replaced by the
/// best candidate of the missing sign.
fn retain_sign_balanced(ranked: &[Candidate], beam_width: usize) -> Vec<Candidate> {
    let mut retained: Vec<Candidate> = ranked.iter().take(beam_width).cloned().collect();
    for sign in [Ordering::Greater, Ordering::Less] {
        let pool_has = ranked.iter().any(|c| c.sign() == sign);
        let retained_has = retained.iter().any(|c| c.sign() == sign);
        if pool_has && !retained_has && retained.len() >= 2 {
            let supplement = ranked
                .iter()
                .filter(|c| c.sign() == sign)
                .min_by(|a, b| rank_cmp(a, b))
                .expect("pool_has checked")
                .clone();
            // drop the lowest-ranked entry, preferring a delta == 0 one so
            // the opposite sign survives
            let drop_idx = retained
                .iter()
                .rposition(|c| c.sign() == Ordering::Equal)
                .unwrap_or(retained.len() - 1);
            retained.remove(drop_idx);
            retained.push(supplement);
            retained.sort_by(rank_cmp);
        }
    }
    retained
}

/// Pick the final prefix set: the final_per_side largest-|delta| positive
/// candidates become the agreement side, the largest-|delta| negative ones
/// the refusal side. A candidate that is a strict token-prefix of an
/// already selected prefix on the same side (or extends one) is skipped.
pub fn select_prefixes(
    candidates: &[Candidate],
    final_per_side: usize,
    model_id: &str,
) -> Result<PrefixSet> {
    let pick = |sign: Ordering, side: &'static str, role: Role| -> Result<Vec<Prefix>> {
        let mut pool: Vec<&Candidate> =
            candidates.iter().filter(|c| c.sign() == sign).collect();
        pool.sort_by(|a, b| rank_cmp(a, b));
        let mut chosen: Vec<&Candidate> = Vec::new();
        for c in pool {
            if chosen.len() == final_per_side {
                break;
            }
            let conflict = chosen.iter().any(|k| {
                let (short, long) = if k.tokens.len() < c.tokens.len() {
                    (&k.tokens, &c.tokens)
                } else {
                    (&c.tokens, &k.tokens)
                };
                short.len() < long.len() && long.starts_with(short)
            });
            let duplicate = chosen.iter().any(|k| k.tokens == c.tokens);
            if !conflict && !duplicate {
                chosen.push(c);
            }
        }
        if chosen.len() < final_per_side {
            return Err(Error::NotEnoughCandidates {
                side,
                needed: final_per_side,
                found: chosen.len(),
            });
        }
        chosen
            .into_iter()
            .map(|c| Prefix::new(c.tokens.clone(), c.text.clone(), role, Some(c.delta)))
            .collect()
    };
    let agreement = pick(Ordering::Greater, "agreement", Role::Agreement)?;
    let refusal = pick(Ordering::Less, "refusal", Role::Refusal)?;
    PrefixSet::new(model_id, agreement, refusal, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{train_toy_model, ToyModel, ToyProvider};

    fn uniform6() -> ToyProvider {
        let model = ToyModel::uniform(&["a", "b", "c", "d", "e", "f"], 3, 0.1).unwrap();
        ToyProvider::new(model, "uniform6")
    }

    fn prompts(texts: &[&str], label: u8) -> Vec<Prompt> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Prompt::new(format!("{label}-{i}"), *t, Some(label)).unwrap())
            .collect()
    }

    fn config(benign: Vec<Prompt>, harmful: Vec<Prompt>, params: SearchParams) -> SearchConfig {
        SearchConfig::new(benign, harmful, params).unwrap()
    }

    /// Biased corpus: after the harmful marker the model prefers "sorry";
    /// after the benign marker it prefers "sure".
    fn biased_provider() -> ToyProvider {
        let mut corpus = Vec::new();
        for _ in 0..10 {
            corpus.push("x bomb now sorry i cannot help with that".to_string());
            corpus.push("x bread now sure here is how you do".to_string());
        }
        ToyProvider::new(train_toy_model(&corpus, 3, 0.1).unwrap(), "biased")
    }

    fn biased_config(params: SearchParams) -> SearchConfig {
        config(
            prompts(&["x bread now", "x bread now", "x bread now"], 0),
            prompts(&["x bomb now", "x bomb now", "x bomb now"], 1),
            params,
        )
    }

    fn small_params() -> SearchParams {
        SearchParams {
            top_k: 4,
            beam_width: 4,
            max_length: 3,
            final_per_side: 1,
            init_per_class: 3,
        }
    }

    #[test]
    fn mu_uniform_is_ln_one_over_v_for_any_prefix_and_set() {
        let provider = uniform6();
        let ps = prompts(&["a b", "c d e", "f"], 0);
        let refs: Vec<&Prompt> = ps.iter().collect();
        for tokens in [vec![TokenId(0)], vec![TokenId(3), TokenId(5)]] {
            let mu = mu_over_set(&provider, &refs, &tokens, 2).unwrap();
            assert!((mu - (1.0f64 / 6.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn mu_single_prompt_single_token_is_that_conditional() {
        let provider = biased_provider();
        let p = prompts(&["x bomb now"], 1);
        let refs: Vec<&Prompt> = p.iter().collect();
        let sorry = provider.tokenize("sorry").unwrap()[0];
        let mu = mu_over_set(&provider, &refs, &[sorry], 1).unwrap();
        let history = provider.tokenize("x bomb now").unwrap();
        assert_eq!(mu, provider.model().cond_logprob(&history, sorry));
    }

    /// Independent double-sum oracle over raw per-token vectors.
    #[test]
    fn mu_matches_brute_force_double_sum() {
        let provider = biased_provider();
        let texts: Vec<String> = (0..30)
            .map(|i| {
                if i % 2 == 0 {
                    "x bomb now".to_string()
                } else {
                    "x bread now".to_string()
                }
            })
            .collect();
        let ps: Vec<Prompt> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Prompt::new(format!("p{i}"), t.clone(), None).unwrap())
            .collect();
        let refs: Vec<&Prompt> = ps.iter().collect();
        let tokens = provider.tokenize("sorry i cannot help").unwrap();
        let mu = mu_over_set(&provider, &refs, &tokens, 4).unwrap();

        // oracle: raw loops over prefix_logprobs output
        let mut acc = 0.0;
        for p in &refs {
            let q = LogProbQuery::new(p.text.clone(), tokens.clone(), CacheHint::Bypass).unwrap();
            let r = crate::backend::prefix_logprobs(&provider, &q).unwrap();
            let mut inner = 0.0;
            for lp in &r.per_token {
                inner += lp;
            }
            acc += inner / tokens.len() as f64;
        }
        let expect = acc / refs.len() as f64;
        assert!((mu - expect).abs() < 1e-12);
    }

    #[test]
    fn identical_init_sets_give_zero_delta() {
        let provider = biased_provider();
        let same = prompts(&["x bomb now", "x bread now"], 0);
        let cfg = config(same.clone(), prompts(&["x bomb now", "x bread now"], 1), small_params());
        let tokens = provider.tokenize("sorry").unwrap();
        let c = safety_separation(&provider, &cfg, &tokens).unwrap();
        assert_eq!(c.delta, 0.0);
    }

    #[test]
    fn uniform_model_has_zero_delta_everywhere() {
        let provider = uniform6();
        let cfg = config(prompts(&["a b"], 0), prompts(&["c d"], 1), small_params());
        for tokens in [vec![TokenId(1)], vec![TokenId(2), TokenId(4)]] {
            let c = safety_separation(&provider, &cfg, &tokens).unwrap();
            assert_eq!(c.delta, 0.0);
        }
    }

    /// Sign check against closed-form count arithmetic: "sorry" is likelier
    /// after the harmful marker, so delta("sorry") < 0.
    #[test]
    fn refusal_leaning_token_has_negative_delta() {
        let provider = biased_provider();
        let cfg = biased_config(small_params());
        let sorry = provider.tokenize("sorry").unwrap();
        let c = safety_separation(&provider, &cfg, &sorry).unwrap();
        assert!(c.delta < 0.0, "delta {}", c.delta);
        assert!((c.delta - (c.mu_benign - c.mu_harmful)).abs() < 1e-15);

        // closed form: context (bomb, now) precedes sorry 10 times out of 10;
        // context (bread, now) never does.
        let alpha = 0.1;
        let v = provider.model().vocab_len() as f64;
        let mu_h = ((10.0 + alpha) / (10.0 + alpha * v)).ln();
        let mu_b = ((0.0 + alpha) / (10.0 + alpha * v)).ln();
        assert!((c.mu_harmful - mu_h).abs() < 1e-12);
        assert!((c.mu_benign - mu_b).abs() < 1e-12);
    }

    #[test]
    fn propose_on_uniform_returns_lowest_token_ids() {
        let provider = uniform6();
        let cfg = config(prompts(&["a b"], 0), prompts(&["c d"], 1), small_params());
        let proposed = propose_tokens(&provider, &cfg, &[]).unwrap();
        assert_eq!(
            proposed,
            vec![TokenId(0), TokenId(1), TokenId(2), TokenId(3)]
        );
    }

    #[test]
    fn propose_rejects_prefix_at_max_length() {
        let provider = uniform6();
        let cfg = config(prompts(&["a b"], 0), prompts(&["c d"], 1), small_params());
        let full = vec![TokenId(0); cfg.params.max_length];
        assert!(matches!(
            propose_tokens(&provider, &cfg, &full),
            Err(Error::InvalidSearchConfig(_))
        ));
    }

    #[test]
    fn dominant_token_ranks_first() {
        let corpus: Vec<String> = (0..20).map(|_| "a a a a a b".to_string()).collect();
        let provider = ToyProvider::new(train_toy_model(&corpus, 2, 0.1).unwrap(), "dom");
        let cfg = config(prompts(&["a"], 0), prompts(&["b"], 1), small_params());
        let proposed = propose_tokens(&provider, &cfg, &[]).unwrap();
        assert_eq!(proposed[0], provider.tokenize("a").unwrap()[0]);
    }

    /// Brute-force averaging oracle over the full next-token distributions.
    #[test]
    fn propose_matches_brute_force_average() {
        let provider = biased_provider();
        let cfg = biased_config(small_params());
        let proposed = propose_tokens(&provider, &cfg, &[]).unwrap();

        let model = provider.model();
        let v = model.vocab_len();
        let all: Vec<&Prompt> = cfg
            .init_benign
            .iter()
            .chain(cfg.init_harmful.iter())
            .collect();
        let mut means: Vec<(TokenId, f64)> = (0..v as u32)
            .map(|t| {
                let mut sum = 0.0;
                for p in &all {
                    let history = model.tokenize(&p.text).unwrap();
                    sum += model.cond_logprob(&history, TokenId(t));
                }
                (TokenId(t), sum / all.len() as f64)
            })
            .collect();
        means.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expect: Vec<TokenId> = means
            .into_iter()
            .take(cfg.params.top_k)
            .map(|(t, _)| t)
            .collect();
        assert_eq!(proposed, expect);
    }

    /// Exhaustive mode: top_k = |V|, beam wide enough for every sequence.
    /// The best |delta| must equal brute-force enumeration's over all
    /// length-1 and length-2 prefixes.
    #[test]
    fn exhaustive_beam_equals_brute_force() {
        let mut corpus = Vec::new();
        for _ in 0..10 {
            corpus.push("a red stop q".to_string());
            corpus.push("a blue go q".to_string());
        }
        let provider = ToyProvider::new(train_toy_model(&corpus, 3, 0.1).unwrap(), "v6");
        assert_eq!(provider.model().vocab_len(), 6);
        let cfg = config(
            prompts(&["a blue", "a blue"], 0),
            prompts(&["a red", "a red"], 1),
            SearchParams {
                top_k: 6,
                beam_width: 36,
                max_length: 2,
                final_per_side: 1,
                init_per_class: 2,
            },
        );
        let outcome = beam_search(&provider, &cfg).unwrap();
        assert_eq!(outcome.candidates.len(), 6 + 36);

        // brute force: every sequence of length 1 and 2
        let mut best = 0.0f64;
        for t1 in 0..6u32 {
            let c = safety_separation(&provider, &cfg, &[TokenId(t1)]).unwrap();
            best = best.max(c.delta.abs());
            for t2 in 0..6u32 {
                let c = safety_separation(&provider, &cfg, &[TokenId(t1), TokenId(t2)]).unwrap();
                best = best.max(c.delta.abs());
            }
        }
        assert_eq!(outcome.best_abs_delta(), best);
    }

    #[test]
    fn uniform_search_is_degenerate_and_warns() {
        let provider = uniform6();
        let cfg = config(
            prompts(&["a b"], 0),
            prompts(&["c d"], 1),
            SearchParams {
                top_k: 3,
                beam_width: 2,
                max_length: 2,
                final_per_side: 1,
                init_per_class: 1,
            },
        );
        let outcome = beam_search(&provider, &cfg).unwrap();
        assert!(outcome.candidates.iter().all(|c| c.delta == 0.0));
        assert!(!outcome.warnings.is_empty());
        assert!(outcome.layers.iter().all(|l| l.degenerate));
    }

    /// beam_width = 2 on the biased model: each retained layer holds one
    /// positive and one negative prefix.
    #[test]
    fn narrow_beam_keeps_both_signs() {
        let provider = biased_provider();
        let cfg = biased_config(SearchParams {
            top_k: 6,
            beam_width: 2,
            max_length: 4,
            final_per_side: 1,
            init_per_class: 3,
        });
        let outcome = beam_search(&provider, &cfg).unwrap();
        assert_eq!(outcome.layers.len(), 4);
        for layer in &outcome.layers {
            assert!(layer.pool_had_positive && layer.pool_had_negative,
                "layer {} pool lost a sign", layer.depth);
            assert!(
                layer.retained.iter().any(|c| c.delta > 0.0),
                "layer {} retained no positive prefix",
                layer.depth
            );
            assert!(
                layer.retained.iter().any(|c| c.delta < 0.0),
                "layer {} retained no negative prefix",
                layer.depth
            );
            assert!(layer.retained.len() <= 2);
        }
    }

    #[test]
    fn search_is_deterministic() {
        let provider = biased_provider();
        let cfg = biased_config(SearchParams {
            top_k: 5,
            beam_width: 3,
            max_length: 3,
            final_per_side: 1,
            init_per_class: 3,
        });
        let a = beam_search(&provider, &cfg).unwrap();
        let b = beam_search(&provider, &cfg).unwrap();
        assert_eq!(a.candidates, b.candidates);
        let set_a = select_prefixes(&a.candidates, 1, "m").unwrap();
        let set_b = select_prefixes(&b.candidates, 1, "m").unwrap();
        assert_eq!(set_a, set_b);
    }

    /// Duplicating every init prompt must leave all mus, deltas and the
    /// selected set unchanged.
    #[test]
    fn duplicated_init_prompts_change_nothing() {
        let provider = biased_provider();
        let params = SearchParams {
            top_k: 5,
            beam_width: 3,
            max_length: 3,
            final_per_side: 1,
            init_per_class: 3,
        };
        let cfg1 = biased_config(params.clone());
        let doubled = |ps: &[Prompt]| -> Vec<Prompt> {
            ps.iter()
                .cloned()
                .chain(ps.iter().enumerate().map(|(i, p)| {
                    Prompt::new(format!("{}-dup{i}", p.id), p.text.clone(), p.label).unwrap()
                }))
                .collect()
        };
        let cfg2 = config(
            doubled(&cfg1.init_benign),
            doubled(&cfg1.init_harmful),
            params,
        );
        let a = beam_search(&provider, &cfg1).unwrap();
        let b = beam_search(&provider, &cfg2).unwrap();
        assert_eq!(a.candidates.len(), b.candidates.len());
        for (x, y) in a.candidates.iter().zip(&b.candidates) {
            assert_eq!(x.tokens, y.tokens);
            assert!((x.delta - y.delta).abs() < 1e-12);
            assert!((x.mu_benign - y.mu_benign).abs() < 1e-12);
        }
        let sa = select_prefixes(&a.candidates, 1, "m").unwrap();
        let sb = select_prefixes(&b.candidates, 1, "m").unwrap();
        assert_eq!(sa.agreement[0].tokens, sb.agreement[0].tokens);
        assert_eq!(sa.refusal[0].tokens, sb.refusal[0].tokens);
    }

    #[test]
    fn candidate_delta_invariant_holds_for_all_scored() {
        let provider = biased_provider();
        let cfg = biased_config(small_params());
        let outcome = beam_search(&provider, &cfg).unwrap();
        for c in &outcome.candidates {
            assert!((c.delta - (c.mu_benign - c.mu_harmful)).abs() < 1e-12);
        }
    }

    #[test]
    fn select_takes_argmax_per_sign() {
        let mk = |ids: &[u32], delta: f64| Candidate {
            tokens: ids.iter().map(|&i| TokenId(i)).collect(),
            text: format!("{ids:?}"),
            mu_benign: delta,
            mu_harmful: 0.0,
            delta,
        };
        let candidates = vec![
            mk(&[1], 3.0),
            mk(&[2], 2.0),
            mk(&[3], -4.0),
            mk(&[4], -1.0),
        ];
        let set = select_prefixes(&candidates, 1, "m").unwrap();
        assert_eq!(set.agreement[0].tokens, vec![TokenId(1)]);
        assert_eq!(set.agreement[0].delta, Some(3.0));
        assert_eq!(set.refusal[0].tokens, vec![TokenId(3)]);
        assert_eq!(set.refusal[0].delta, Some(-4.0));
    }

    #[test]
    fn select_fails_when_one_sign_missing() {
        let mk = |id: u32, delta: f64| Candidate {
            tokens: vec![TokenId(id)],
            text: String::new(),
            mu_benign: delta,
            mu_harmful: 0.0,
            delta,
        };
        let all_positive = vec![mk(1, 1.0), mk(2, 2.0)];
        match select_prefixes(&all_positive, 1, "m") {
            Err(Error::NotEnoughCandidates { side, .. }) => assert_eq!(side, "refusal"),
            other => panic!("expected missing refusal side, got {other:?}"),
        }
    }

    #[test]
    fn select_skips_strict_prefix_duplicates_on_same_side() {
        let mk = |ids: &[u32], delta: f64| Candidate {
            tokens: ids.iter().map(|&i| TokenId(i)).collect(),
            text: String::new(),
            mu_benign: delta,
            mu_harmful: 0.0,
            delta,
        };
        let candidates = vec![
            mk(&[1, 2], 5.0),
            mk(&[1], 4.0),      // strict prefix of the best -> skipped
            mk(&[3], 3.0),
            mk(&[9], -1.0),
            mk(&[8], -2.0),
        ];
        let set = select_prefixes(&candidates, 2, "m").unwrap();
        let texts: Vec<&Vec<TokenId>> = set.agreement.iter().map(|p| &p.tokens).collect();
        assert_eq!(texts[0], &vec![TokenId(1), TokenId(2)]);
        assert_eq!(texts[1], &vec![TokenId(3)]);
    }

    /// Selected top-5 per sign reproduces an independent sort of the
    /// candidate table. The corpus rotates five refusal and five agreement
    /// openers so each side has five independent roots.
    #[test]
    fn select_matches_sort_oracle() {
        let refusals = ["sorry", "cannot", "unable", "refuse", "never"];
        let agreements = ["sure", "okay", "glad", "happy", "yes"];
        let mut corpus = Vec::new();
        for i in 0..50 {
            corpus.push(format!("x bomb now {} stop", refusals[i % 5]));
            corpus.push(format!("x bread now {} go", agreements[i % 5]));
        }
        let provider = ToyProvider::new(train_toy_model(&corpus, 3, 0.1).unwrap(), "rich");
        let cfg = config(
            prompts(&["x bread now", "x bread now", "x bread now"], 0),
            prompts(&["x bomb now", "x bomb now", "x bomb now"], 1),
            SearchParams {
                top_k: 12,
                beam_width: 12,
                max_length: 2,
                final_per_side: 5,
                init_per_class: 3,
            },
        );
        let outcome = beam_search(&provider, &cfg).unwrap();
        let set = select_prefixes(&outcome.candidates, 5, "m").unwrap();

        // oracle: sort by |delta| desc, honor the strict-prefix rule
        let mut pos: Vec<&Candidate> =
            outcome.candidates.iter().filter(|c| c.delta > 0.0).collect();
        pos.sort_by(|a, b| {
            b.delta
                .abs()
                .partial_cmp(&a.delta.abs())
                .unwrap()
                .then(a.tokens.len().cmp(&b.tokens.len()))
                .then(a.tokens.cmp(&b.tokens))
        });
        let mut expect: Vec<&Candidate> = Vec::new();
        for c in pos {
            if expect.len() == 5 {
                break;
            }
            let clash = expect.iter().any(|k| {
                let (s, l) = if k.tokens.len() < c.tokens.len() {
                    (&k.tokens, &c.tokens)
                } else {
                    (&c.tokens, &k.tokens)
                };
                s.len() < l.len() && l.starts_with(s)
            });
            if !clash {
                expect.push(c);
            }
        }
        assert_eq!(set.agreement.len(), 5);
        for (got, want) in set.agreement.iter().zip(&expect) {
            assert_eq!(got.tokens, want.tokens);
        }
    }
}
