//! Deterministic n-gram reference backend with additive smoothing.
//!
//! Stands in for a real language model in tests and offline experiments:
//! conditionals are exact closed-form count ratios, so every downstream
//! quantity can be verified by independent arithmetic. The provider also
//! keeps a token work counter that mirrors the idealized prefix-cache cost
//! model: a probe served with cache reuse costs L tokens, a bypassed probe
//! costs T_base + L.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TokenId;

use super::{CacheHint, LogProbProvider, LogProbQuery, LogProbResult};

/// Default n-gram order: small enough for exhaustive oracles, expressive
/// enough to encode agreement/refusal biases.
pub const DEFAULT_ORDER: usize = 3;
/// Default add-alpha smoothing.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Count-based n-gram model over a closed whitespace-token vocabulary.
#[derive(Debug, Clone)]
pub struct ToyModel {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    order: usize,
    alpha: f64,
    /// Keyed by context (all lengths 0..order), so lookups near a sequence
    /// start fall back to the matching shorter table.
    contexts: HashMap<Vec<TokenId>, ContextCounts>,
}

impl ToyModel {
    /// Uniform model: empty count tables, so every conditional smooths to
    /// exactly 1/|V|.
    pub fn uniform(words: &[&str], order: usize, alpha: f64) -> Result<ToyModel> {
        if order == 0 {
            return Err(Error::ZeroOrder);
        }
        if alpha <= 0.0 {
            return Err(Error::NonPositiveAlpha(alpha));
        }
        let mut vocab = Vec::new();
        let mut index = HashMap::new();
        for &w in words {
            if !index.contains_key(w) {
                index.insert(w.to_string(), TokenId(vocab.len() as u32));
                vocab.push(w.to_string());
            }
        }
        if vocab.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(ToyModel {
            vocab,
            index,
            order,
            alpha,
            contexts: HashMap::new(),
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn token_of(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word_of(&self, token: TokenId) -> Option<&str> {
        self.vocab.get(token.0 as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| {
                self.index
                    .get(w)
                    .copied()
                    .ok_or_else(|| Error::UnknownWord(w.to_string()))
            })
            .collect()
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let words: Result<Vec<&str>> = tokens
            .iter()
            .map(|&t| self.word_of(t).ok_or(Error::InvalidToken(t)))
            .collect();
        Ok(words?.join(" "))
    }

    fn check_token(&self, token: TokenId) -> Result<()> {
        if (token.0 as usize) < self.vocab.len() {
            Ok(())
        } else {
            Err(Error::InvalidToken(token))
        }
    }

    /// Add-alpha conditional: (count(ctx, t) + alpha) / (count(ctx) + alpha |V|),
    /// with ctx the last min(order-1, |history|) tokens of `history`.
    pub fn cond_logprob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let ctx_len = (self.order - 1).min(history.len());
        let ctx = &history[history.len() - ctx_len..];
        let (total, count) = match self.contexts.get(ctx) {
            Some(c) => (c.total, c.next.get(&token).copied().unwrap_or(0)),
            None => (0, 0),
        };
        let v = self.vocab.len() as f64;
        ((count as f64 + self.alpha) / (total as f64 + self.alpha * v)).ln()
    }

    /// Log-probabilities of every vocabulary token at the next position.
    pub fn next_token_logprobs(&self, history: &[TokenId]) -> Vec<f64> {
        (0..self.vocab.len() as u32)
            .map(|t| self.cond_logprob(history, TokenId(t)))
            .collect()
    }

    fn record(&mut self, ctx: &[TokenId], token: TokenId) {
        let entry = self.contexts.entry(ctx.to_vec()).or_default();
        entry.total += 1;
        *entry.next.entry(token).or_insert(0) += 1;
    }
}

/// Train an n-gram model over a whitespace-tokenized corpus. Deterministic:
/// the vocabulary is built in first-appearance order and identical inputs
/// yield identical models.
pub fn train_toy_model<S: AsRef<str>>(corpus: &[S], order: usize, alpha: f64) -> Result<ToyModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if order == 0 {
        return Err(Error::ZeroOrder);
    }
    if alpha <= 0.0 {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<String, TokenId> = HashMap::new();
    let mut lines: Vec<Vec<TokenId>> = Vec::with_capacity(corpus.len());
    for line in corpus {
        let mut ids = Vec::new();
        for word in line.as_ref().split_whitespace() {
            let id = *index.entry(word.to_string()).or_insert_with(|| {
                vocab.push(word.to_string());
                TokenId(vocab.len() as u32 - 1)
            });
            ids.push(id);
        }
        lines.push(ids);
    }
    if vocab.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = ToyModel {
        vocab,
        index,
        order,
        alpha,
        contexts: HashMap::new(),
    };
    for line in &lines {
        for i in 0..line.len() {
            for ctx_len in 0..model.order {
                if i >= ctx_len {
                    model.record(&line[i - ctx_len..i], line[i]);
                }
            }
        }
    }
    Ok(model)
}

// ---- serialization (schema toy_model_v1) ----

pub const TOY_MODEL_SCHEMA: &str = "toy_model_v1";

#[derive(Serialize, Deserialize)]
struct StoredContext {
    ctx: Vec<TokenId>,
    counts: Vec<(TokenId, u64)>,
}

#[derive(Serialize, Deserialize)]
struct StoredToyModel {
    schema: String,
    vocab: Vec<String>,
    order: usize,
    alpha: f64,
    contexts: Vec<StoredContext>,
}

impl ToyModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut contexts: Vec<StoredContext> = self
            .contexts
            .iter()
            .map(|(ctx, c)| {
                let mut counts: Vec<(TokenId, u64)> =
                    c.next.iter().map(|(&t, &n)| (t, n)).collect();
                counts.sort_by_key(|&(t, _)| t);
                StoredContext {
                    ctx: ctx.clone(),
                    counts,
                }
            })
            .collect();
        contexts.sort_by(|a, b| (a.ctx.len(), &a.ctx).cmp(&(b.ctx.len(), &b.ctx)));
        let stored = StoredToyModel {
            schema: TOY_MODEL_SCHEMA.to_string(),
            vocab: self.vocab.clone(),
            order: self.order,
            alpha: self.alpha,
            contexts,
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), &stored).map_err(|e| Error::BadFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ToyModel> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let stored: StoredToyModel =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::BadFile {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        if stored.schema != TOY_MODEL_SCHEMA {
            return Err(Error::SchemaMismatch {
                path: path.to_path_buf(),
                found: stored.schema,
                expected: TOY_MODEL_SCHEMA.to_string(),
            });
        }
        if stored.order == 0 {
            return Err(Error::ZeroOrder);
        }
        if stored.alpha <= 0.0 {
            return Err(Error::NonPositiveAlpha(stored.alpha));
        }
        let index = stored
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), TokenId(i as u32)))
            .collect();
        let mut contexts = HashMap::new();
        for sc in stored.contexts {
            let mut next = HashMap::new();
            let mut total = 0;
            for (t, n) in sc.counts {
                total += n;
                next.insert(t, n);
            }
            contexts.insert(sc.ctx, ContextCounts { total, next });
        }
        Ok(ToyModel {
            vocab: stored.vocab,
            index,
            order: stored.order,
            alpha: stored.alpha,
            contexts,
        })
    }
}

/// [`LogProbProvider`] over a [`ToyModel`], with atomic token-work
/// accounting. Reuse probes are counted as served from the cache because
/// the deployment model assumes the base prompt's forward pass already
/// happened during normal generation.
pub struct ToyProvider {
    model: ToyModel,
    model_id: String,
    work_tokens: AtomicU64,
}

impl ToyProvider {
    pub fn new(model: ToyModel, model_id: impl Into<String>) -> ToyProvider {
        ToyProvider {
            model,
            model_id: model_id.into(),
            work_tokens: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }

    /// Total tokens "computed" so far under the idealized cost model.
    pub fn work_tokens(&self) -> u64 {
        self.work_tokens.load(Ordering::Relaxed)
    }

    pub fn reset_work(&self) {
        self.work_tokens.store(0, Ordering::Relaxed);
    }
}

impl LogProbProvider for ToyProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn prefix_logprobs(&self, query: &LogProbQuery) -> Result<LogProbResult> {
        let start = Instant::now();
        for &t in &query.prefix_tokens {
            self.model.check_token(t)?;
        }
        let prompt_tokens = self.model.tokenize(&query.prompt_text)?;
        let t_base = prompt_tokens.len();
        let mut history = prompt_tokens;
        let mut per_token = Vec::with_capacity(query.prefix_tokens.len());
        for &t in &query.prefix_tokens {
            per_token.push(self.model.cond_logprob(&history, t));
            history.push(t);
        }
        let l = query.prefix_tokens.len() as u64;
        let work = match query.cache_hint {
            CacheHint::Reuse => l,
            CacheHint::Bypass => t_base as u64 + l,
        };
        self.work_tokens.fetch_add(work, Ordering::Relaxed);
        Ok(LogProbResult {
            per_token,
            prompt_token_count: t_base,
            served_from_cache: query.cache_hint == CacheHint::Reuse,
            wall_time: start.elapsed(),
        })
    }

    fn next_token_candidates(
        &self,
        prompt_text: &str,
        prefix: &[TokenId],
        limit: usize,
    ) -> Result<Vec<(TokenId, f64)>> {
        for &t in prefix {
            self.model.check_token(t)?;
        }
        let mut history = self.model.tokenize(prompt_text)?;
        history.extend_from_slice(prefix);
        let logprobs = self.model.next_token_logprobs(&history);
        let mut ranked: Vec<(TokenId, f64)> = logprobs
            .into_iter()
            .enumerate()
            .map(|(i, lp)| (TokenId(i as u32), lp))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(limit);
        Ok(ranked)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        self.model.tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        self.model.detokenize(tokens)
    }

    fn vocab_size(&self) -> Option<usize> {
        Some(self.model.vocab_len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{batch_prefix_logprobs, prefix_logprobs};
    use std::collections::HashMap;

    fn uniform8() -> ToyProvider {
        let model = ToyModel::uniform(
            &["a", "b", "c", "d", "e", "f", "g", "h"],
            3,
            0.1,
        )
        .unwrap();
        ToyProvider::new(model, "uniform8")
    }

    fn query(prompt: &str, ids: &[u32], hint: CacheHint) -> LogProbQuery {
        LogProbQuery::new(
            prompt,
            ids.iter().map(|&i| TokenId(i)).collect(),
            hint,
        )
        .unwrap()
    }

    #[test]
    fn uniform_model_single_token_is_ln_one_over_v() {
        let provider = uniform8();
        let r = prefix_logprobs(&provider, &query("a b", &[3], CacheHint::Reuse)).unwrap();
        assert_eq!(r.per_token.len(), 1);
        assert!((r.per_token[0] - (1.0f64 / 8.0).ln()).abs() < 1e-12);
        // ~ -2.0794
        assert!((r.per_token[0] + 2.0794).abs() < 1e-4);
    }

    #[test]
    fn cache_hint_never_changes_values() {
        let provider = uniform8();
        let a = prefix_logprobs(&provider, &query("a b c", &[1, 2, 5], CacheHint::Reuse)).unwrap();
        let b = prefix_logprobs(&provider, &query("a b c", &[1, 2, 5], CacheHint::Bypass)).unwrap();
        assert_eq!(a.per_token, b.per_token);
        assert!(a.served_from_cache);
        assert!(!b.served_from_cache);
    }

    #[test]
    fn add_alpha_closed_form_bigram() {
        // corpus ["a b", "a b"], order 2: p(b|a) = (2 + alpha) / (2 + alpha |V|)
        let alpha = 0.1;
        let model = train_toy_model(&["a b", "a b"], 2, alpha).unwrap();
        let v = model.vocab_len() as f64;
        assert_eq!(v, 2.0);
        let a = model.token_of("a").unwrap();
        let b = model.token_of("b").unwrap();
        let expect = ((2.0 + alpha) / (2.0 + alpha * v)).ln();
        assert_eq!(model.cond_logprob(&[a], b), expect);
    }

    #[test]
    fn order_one_ignores_context() {
        let model = train_toy_model(&["a b b", "b c a"], 1, 0.5).unwrap();
        let c = model.token_of("c").unwrap();
        let a = model.token_of("a").unwrap();
        let b = model.token_of("b").unwrap();
        let p1 = model.cond_logprob(&[a, b], c);
        let p2 = model.cond_logprob(&[c], c);
        let p3 = model.cond_logprob(&[], c);
        assert_eq!(p1, p2);
        assert_eq!(p2, p3);
        // unigram: (1 + 0.5) / (6 + 0.5 * 3)
        assert_eq!(p1, ((1.0_f64 + 0.5) / (6.0 + 0.5 * 3.0)).ln());
    }

    #[test]
    fn huge_alpha_approaches_uniform() {
        let model = train_toy_model(&["a b", "a b", "a c"], 2, 1e9).unwrap();
        let a = model.token_of("a").unwrap();
        let b = model.token_of("b").unwrap();
        let v = model.vocab_len() as f64;
        let p = model.cond_logprob(&[a], b).exp();
        assert!((p - 1.0 / v).abs() < 1e-6);
    }

    #[test]
    fn rejects_empty_corpus_and_bad_alpha() {
        assert!(matches!(
            train_toy_model::<&str>(&[], 3, 0.1),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            train_toy_model(&["a"], 3, 0.0),
            Err(Error::NonPositiveAlpha(_))
        ));
        assert!(matches!(
            train_toy_model(&["a"], 0, 0.1),
            Err(Error::ZeroOrder)
        ));
    }

    /// 200-line corpus; the expected conditionals are recomputed from an
    /// independently built count table with explicit add-alpha arithmetic.
    #[test]
    fn trigram_matches_independent_count_table() {
        let phrases = [
            "I'm sorry , but I can't help with that",
            "I'm sorry , that is not something I can do",
            "Sure , here is how you do it",
            "Sure , let's work through this together",
            "the weather is nice today",
            "how do I bake bread at home",
        ];
        let corpus: Vec<String> = (0..200)
            .map(|i| phrases[(i * 7 + 3) % phrases.len()].to_string())
            .collect();
        let alpha = 0.1;
        let model = train_toy_model(&corpus, 3, alpha).unwrap();
        let provider = ToyProvider::new(model, "toy");

        // independent oracle: raw (context -> token) counts over the corpus
        let mut pair: HashMap<(Vec<&str>, &str), u64> = HashMap::new();
        let mut ctx: HashMap<Vec<&str>, u64> = HashMap::new();
        for line in &corpus {
            let words: Vec<&str> = line.split_whitespace().collect();
            for i in 0..words.len() {
                let lo = i.saturating_sub(2);
                if i - lo == 2 {
                    let c = words[lo..i].to_vec();
                    *pair.entry((c.clone(), words[i])).or_insert(0) += 1;
                    *ctx.entry(c).or_insert(0) += 1;
                }
            }
        }
        let vocab_size = {
            let mut set = std::collections::HashSet::new();
            for line in &corpus {
                set.extend(line.split_whitespace());
            }
            set.len() as f64
        };

        let prompt = "how do I bake bread";
        let prefix_words = ["I'm", "sorry"];
        let prefix_ids: Vec<TokenId> = prefix_words
            .iter()
            .map(|w| provider.model().token_of(w).unwrap())
            .collect();
        let got = prefix_logprobs(
            &provider,
            &LogProbQuery::new(prompt, prefix_ids, CacheHint::Reuse).unwrap(),
        )
        .unwrap();

        let full: Vec<&str> = prompt
            .split_whitespace()
            .chain(prefix_words.iter().copied())
            .collect();
        let base = prompt.split_whitespace().count();
        for (i, word) in prefix_words.iter().enumerate() {
            let pos = base + i;
            let c: Vec<&str> = full[pos - 2..pos].to_vec();
            let n_pair = pair.get(&(c.clone(), *word)).copied().unwrap_or(0) as f64;
            let n_ctx = ctx.get(&c).copied().unwrap_or(0) as f64;
            let expect = ((n_pair + alpha) / (n_ctx + alpha * vocab_size)).ln();
            assert!(
                (got.per_token[i] - expect).abs() < 1e-12,
                "position {i}: got {} expected {expect}",
                got.per_token[i]
            );
        }
    }

    #[test]
    fn conditionals_normalize_over_random_contexts() {
        let corpus: Vec<String> = (0..50)
            .map(|i| format!("w{} w{} w{} w{}", i % 7, (i * 3) % 7, (i * 5) % 7, i % 2))
            .collect();
        let model = train_toy_model(&corpus, 3, 0.1).unwrap();
        let v = model.vocab_len() as u32;
        let mut state = 0x9e3779b9u64;
        for _ in 0..100 {
            // xorshift for reproducible pseudo-random contexts
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let h1 = TokenId((state % v as u64) as u32);
            let h2 = TokenId(((state >> 16) % v as u64) as u32);
            let total: f64 = model
                .next_token_logprobs(&[h1, h2])
                .iter()
                .map(|lp| lp.exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "sum {total}");
        }
    }

    #[test]
    fn batch_equals_sequential_and_reports_positional_errors() {
        let provider = uniform8();
        let mut queries: Vec<LogProbQuery> = (0..10)
            .map(|i| query("a b c", &[i % 8, (i + 1) % 8], CacheHint::Reuse))
            .collect();
        let sequential: Vec<_> = queries
            .iter()
            .map(|q| prefix_logprobs(&provider, q).unwrap().per_token)
            .collect();
        let batched = batch_prefix_logprobs(&provider, &queries, 4).unwrap();
        for (s, b) in sequential.iter().zip(&batched) {
            assert_eq!(s, &b.as_ref().unwrap().per_token);
        }

        // one invalid token id -> one positional error, siblings succeed
        queries[4] = query("a b c", &[99], CacheHint::Reuse);
        let mixed = batch_prefix_logprobs(&provider, &queries, 3).unwrap();
        assert_eq!(mixed.iter().filter(|r| r.is_ok()).count(), 9);
        assert!(matches!(
            mixed[4].as_ref().unwrap_err(),
            Error::InvalidToken(TokenId(99))
        ));
    }

    #[test]
    fn all_failures_aggregate() {
        let provider = uniform8();
        let queries = vec![query("a", &[99], CacheHint::Reuse); 3];
        assert!(matches!(
            batch_prefix_logprobs(&provider, &queries, 2),
            Err(Error::AllProbesFailed(3, _))
        ));
    }

    #[test]
    fn work_counter_matches_cost_model() {
        let provider = uniform8();
        let prompt = "a b c d e"; // T_base = 5
        let lens = [1usize, 2, 3, 4, 6, 2, 2, 5, 1, 3];
        let queries: Vec<LogProbQuery> = lens
            .iter()
            .map(|&l| {
                let ids: Vec<u32> = (0..l as u32).map(|i| i % 8).collect();
                query(prompt, &ids, CacheHint::Reuse)
            })
            .collect();
        provider.reset_work();
        batch_prefix_logprobs(&provider, &queries, 4).unwrap();
        let total_l: u64 = lens.iter().map(|&l| l as u64).sum();
        assert_eq!(provider.work_tokens(), total_l);

        let bypass: Vec<LogProbQuery> = queries
            .iter()
            .map(|q| LogProbQuery {
                cache_hint: CacheHint::Bypass,
                ..q.clone()
            })
            .collect();
        provider.reset_work();
        batch_prefix_logprobs(&provider, &bypass, 4).unwrap();
        assert_eq!(provider.work_tokens(), lens.len() as u64 * 5 + total_l);
    }

    #[test]
    fn save_load_round_trip_preserves_conditionals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.json");
        let model = train_toy_model(&["a b c a b", "c b a", "a a b"], 3, 0.25).unwrap();
        model.save(&path).unwrap();
        let loaded = ToyModel::load(&path).unwrap();
        let a = model.token_of("a").unwrap();
        let b = model.token_of("b").unwrap();
        let c = model.token_of("c").unwrap();
        for history in [vec![], vec![a], vec![a, b], vec![c, b]] {
            for t in [a, b, c] {
                assert_eq!(model.cond_logprob(&history, t), loaded.cond_logprob(&history, t));
            }
        }
    }
}
