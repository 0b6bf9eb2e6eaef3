//! Prefix-set persistence. On-disk schema `prefix_set_v1`: a single JSON
//! document with the model id, both prefix lists (token ids, display text,
//! delta) and the optional search snapshot. Token ids are the ground truth;
//! display text is preserved byte-exact, including leading whitespace.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Prefix, PrefixSet, Role, SearchSnapshot, TokenId};

pub const PREFIX_SET_SCHEMA: &str = "prefix_set_v1";

#[derive(Serialize, Deserialize)]
struct StoredPrefix {
    tokens: Vec<TokenId>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredPrefixSet {
    schema: String,
    model_id: String,
    agreement: Vec<StoredPrefix>,
    refusal: Vec<StoredPrefix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_with: Option<SearchSnapshot>,
}

fn strip(p: &Prefix) -> StoredPrefix {
    StoredPrefix {
        tokens: p.tokens.clone(),
        text: p.text.clone(),
        delta: p.delta,
    }
}

fn revive(p: StoredPrefix, role: Role) -> Result<Prefix> {
    Prefix::new(p.tokens, p.text, role, p.delta)
}

pub fn save_prefix_set(set: &PrefixSet, path: &Path) -> Result<()> {
    let stored = StoredPrefixSet {
        schema: PREFIX_SET_SCHEMA.to_string(),
        model_id: set.model_id.clone(),
        agreement: set.agreement.iter().map(strip).collect(),
        refusal: set.refusal.iter().map(strip).collect(),
        created_with: set.created_with.clone(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &stored).map_err(|e| Error::BadFile {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(())
}

/// Load and re-validate every type invariant; any violating file is
/// rejected.
pub fn load_prefix_set(path: &Path) -> Result<PrefixSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let stored: StoredPrefixSet =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::BadFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    if stored.schema != PREFIX_SET_SCHEMA {
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            found: stored.schema,
            expected: PREFIX_SET_SCHEMA.to_string(),
        });
    }
    let agreement = stored
        .agreement
        .into_iter()
        .map(|p| revive(p, Role::Agreement))
        .collect::<Result<Vec<_>>>()?;
    let refusal = stored
        .refusal
        .into_iter()
        .map(|p| revive(p, Role::Refusal))
        .collect::<Result<Vec<_>>>()?;
    PrefixSet::new(stored.model_id, agreement, refusal, stored.created_with)
}
