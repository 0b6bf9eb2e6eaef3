//! Domain types shared by every module: prompts, prefixes, prefix sets and
//! run configuration.
//!
//! All types here are immutable after construction and safe to share across
//! threads. Constructors validate the type invariants so downstream code can
//! rely on them.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a backend's token vocabulary.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which side of the probe a prefix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Compliance-style opener, likelier after benign prompts.
    Agreement,
    /// Refusal-style opener, likelier after harmful prompts.
    Refusal,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Agreement => "agreement",
            Role::Refusal => "refusal",
        }
    }
}

/// One input text with an optional binary harmfulness label (1 = harmful).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

impl Prompt {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<u8>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyPromptText);
        }
        if let Some(l) = label {
            if l > 1 {
                return Err(Error::InvalidLabel(l));
            }
        }
        Ok(Prompt {
            id: id.into(),
            text,
            label,
        })
    }

    /// True when the prompt is labeled harmful, false when labeled benign.
    pub fn is_harmful(&self) -> Option<bool> {
        self.label.map(|l| l == 1)
    }
}

/// A probe prefix: token ids are the ground truth, the display text is
/// advisory (detokenization is backend-specific, leading whitespace is
/// preserved exactly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prefix {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub role: Role,
    /// Safety separation measured at search time, in nats. Manual prefixes
    /// carry `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl Prefix {
    pub fn new(
        tokens: Vec<TokenId>,
        text: impl Into<String>,
        role: Role,
        delta: Option<f64>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        if let Some(d) = delta {
            let sign_ok = match role {
                Role::Agreement => d > 0.0,
                Role::Refusal => d < 0.0,
            };
            if !sign_ok {
                return Err(Error::RoleDeltaMismatch {
                    role: role.as_str(),
                    delta: d,
                });
            }
        }
        Ok(Prefix {
            tokens,
            text: text.into(),
            role,
            delta,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Snapshot of the search configuration a prefix set was created with,
/// kept for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSnapshot {
    pub top_k: usize,
    pub beam_width: usize,
    pub max_length: usize,
    pub final_per_side: usize,
    pub init_benign: usize,
    pub init_harmful: usize,
    /// How one-step candidate tokens are aggregated across init samples.
    pub aggregation: String,
    pub template: TemplateMode,
}

/// The paired agreement/refusal prefix lists for one target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixSet {
    pub model_id: String,
    pub agreement: Vec<Prefix>,
    pub refusal: Vec<Prefix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_with: Option<SearchSnapshot>,
}

impl PrefixSet {
    pub fn new(
        model_id: impl Into<String>,
        agreement: Vec<Prefix>,
        refusal: Vec<Prefix>,
        created_with: Option<SearchSnapshot>,
    ) -> Result<Self> {
        if agreement.is_empty() || refusal.is_empty() {
            return Err(Error::EmptyPrefixSide {
                agreement: agreement.len(),
                refusal: refusal.len(),
            });
        }
        let mut seen: HashSet<&[TokenId]> = HashSet::new();
        for p in agreement.iter().chain(refusal.iter()) {
            if !seen.insert(&p.tokens) {
                return Err(Error::DuplicatePrefixTokens {
                    text: p.text.clone(),
                });
            }
        }
        for p in &agreement {
            debug_assert_eq!(p.role, Role::Agreement);
        }
        for p in &refusal {
            debug_assert_eq!(p.role, Role::Refusal);
        }
        Ok(PrefixSet {
            model_id: model_id.into(),
            agreement,
            refusal,
            created_with,
        })
    }

    /// All prefixes, refusal side first (scoring order is irrelevant, the
    /// means are permutation invariant; this order is just canonical).
    pub fn iter_all(&self) -> impl Iterator<Item = &Prefix> {
        self.refusal.iter().chain(self.agreement.iter())
    }

    /// Total probe tokens per detection: sum of all prefix lengths
    /// (the equivalent token count C_extra).
    pub fn total_prefix_tokens(&self) -> usize {
        self.iter_all().map(Prefix::len).sum()
    }

    /// Number of (agreement, refusal) pairs, the smaller of the two sides.
    pub fn pair_count(&self) -> usize {
        self.agreement.len().min(self.refusal.len())
    }

    /// Keep only the first `pairs` prefixes of each side. Used by the
    /// overhead-vs-pair-count sweep.
    pub fn truncated(&self, pairs: usize) -> Result<PrefixSet> {
        PrefixSet::new(
            self.model_id.clone(),
            self.agreement.iter().take(pairs).cloned().collect(),
            self.refusal.iter().take(pairs).cloned().collect(),
            self.created_with.clone(),
        )
    }
}

/// Default manual agreement opener (ships with the toolkit; tokenized per
/// backend at prefix-set creation).
pub const MANUAL_AGREEMENT_TEXT: &str = "Of course, let's work through this step by step.";
/// Default manual refusal opener.
pub const MANUAL_REFUSAL_TEXT: &str = "I'm sorry, but I can't provide help on that.";

/// A named list of prompts with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub prompts: Vec<Prompt>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, prompts: Vec<Prompt>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, p) in prompts.iter().enumerate() {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::DuplicatePromptId {
                    line: i + 1,
                    id: p.id.clone(),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            prompts,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Split by label: (benign, harmful). Unlabeled prompts are skipped.
    pub fn by_label(&self) -> (Vec<Prompt>, Vec<Prompt>) {
        let mut benign = Vec::new();
        let mut harmful = Vec::new();
        for p in &self.prompts {
            match p.is_harmful() {
                Some(false) => benign.push(p.clone()),
                Some(true) => harmful.push(p.clone()),
                None => {}
            }
        }
        (benign, harmful)
    }
}

/// Whether prompts are probed raw or wrapped in the serving side's chat
/// template (probe prefixes then open the assistant turn).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TemplateMode {
    #[default]
    Raw,
    Chat,
}

/// Which log-probability backend a run talks to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendDescriptor {
    /// Remote inference endpoint speaking the wire contract.
    Remote {
        endpoint: String,
        model_id: String,
        #[serde(default)]
        template: TemplateMode,
    },
    /// Built-in deterministic n-gram reference model loaded from a file.
    Toy { path: PathBuf, model_id: String },
}

/// Beam-search parameters (sizes only; the init prompts live in
/// `search::SearchConfig`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub top_k: usize,
    pub beam_width: usize,
    pub max_length: usize,
    pub final_per_side: usize,
    /// How many prompts of each label to take (in dataset order) as the
    /// search initialization sets.
    pub init_per_class: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            top_k: 20,
            beam_width: 8,
            max_length: 12,
            final_per_side: 5,
            init_per_class: 30,
        }
    }
}

/// Resolved run configuration; embedded in every output file for
/// reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: BackendDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_set: Option<PathBuf>,
    /// Decision threshold in nats.
    pub tau: f64,
    #[serde(default)]
    pub search: SearchParams,
    /// Max in-flight probe requests.
    pub concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Name of the held-out split used to calibrate tau, when calibration
    /// was run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_split: Option<String>,
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_retries() -> u32 {
    3
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concurrency < 1 {
            return Err(Error::InvalidConfig(
                "concurrency limit must be at least 1".into(),
            ));
        }
        if !self.tau.is_finite() {
            return Err(Error::InvalidConfig("tau must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_rejects_blank_text() {
        assert!(matches!(
            Prompt::new("p0", "   \t", None),
            Err(Error::EmptyPromptText)
        ));
    }

    #[test]
    fn prompt_rejects_label_out_of_domain() {
        assert!(matches!(
            Prompt::new("p0", "hello", Some(2)),
            Err(Error::InvalidLabel(2))
        ));
        assert!(Prompt::new("p0", "hello", Some(0)).is_ok());
        assert!(Prompt::new("p0", "hello", Some(1)).is_ok());
    }

    #[test]
    fn prefix_role_must_match_delta_sign() {
        let toks = vec![TokenId(1)];
        assert!(Prefix::new(toks.clone(), "x", Role::Agreement, Some(0.5)).is_ok());
        assert!(Prefix::new(toks.clone(), "x", Role::Refusal, Some(-0.5)).is_ok());
        assert!(Prefix::new(toks.clone(), "x", Role::Agreement, Some(-0.5)).is_err());
        assert!(Prefix::new(toks.clone(), "x", Role::Refusal, Some(0.5)).is_err());
        // delta == 0 matches neither role
        assert!(Prefix::new(toks, "x", Role::Agreement, Some(0.0)).is_err());
    }

    #[test]
    fn prefix_set_rejects_duplicates_across_sides() {
        let a = Prefix::new(vec![TokenId(1), TokenId(2)], "a", Role::Agreement, None).unwrap();
        let r = Prefix::new(vec![TokenId(1), TokenId(2)], "r", Role::Refusal, None).unwrap();
        let err = PrefixSet::new("m", vec![a], vec![r], None);
        assert!(matches!(err, Err(Error::DuplicatePrefixTokens { .. })));
    }

    #[test]
    fn prefix_set_requires_both_sides() {
        let a = Prefix::new(vec![TokenId(1)], "a", Role::Agreement, None).unwrap();
        assert!(matches!(
            PrefixSet::new("m", vec![a], vec![], None),
            Err(Error::EmptyPrefixSide { .. })
        ));
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let p1 = Prompt::new("x", "one", None).unwrap();
        let p2 = Prompt::new("x", "two", None).unwrap();
        assert!(matches!(
            Dataset::new("d", vec![p1, p2]),
            Err(Error::DuplicatePromptId { .. })
        ));
    }

    #[test]
    fn total_prefix_tokens_sums_lengths() {
        let a = Prefix::new(vec![TokenId(1), TokenId(2)], "a", Role::Agreement, None).unwrap();
        let r = Prefix::new(vec![TokenId(3)], "r", Role::Refusal, None).unwrap();
        let set = PrefixSet::new("m", vec![a], vec![r], None).unwrap();
        assert_eq!(set.total_prefix_tokens(), 3);
    }
}
