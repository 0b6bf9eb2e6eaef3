//! Dataset ingestion: JSON-lines and CSV, one prompt per record.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::{Dataset, Prompt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Infer from file extension; `.csv` is CSV, everything else JSONL.
    pub fn from_path(path: &Path) -> DatasetFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default)]
    label: Option<i64>,
}

/// Load a dataset, preserving input order and assigning sequential ids
/// (`p0`, `p1`, ...) to records without one. The dataset name is the file
/// stem.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let prompts = match format {
        DatasetFormat::Jsonl => read_jsonl(BufReader::new(file))?,
        DatasetFormat::Csv => read_csv(file)?,
    };
    Dataset::new(name, prompts)
}

fn finish_record(raw: RawRecord, line: usize, next_seq: &mut usize) -> Result<Prompt> {
    let label = match raw.label {
        None => None,
        Some(v) if v == 0 || v == 1 => Some(v as u8),
        Some(v) => return Err(Error::LabelOutOfRange { line, value: v }),
    };
    let id = raw.id.unwrap_or_else(|| format!("p{}", *next_seq));
    *next_seq += 1;
    Prompt::new(id, raw.text, label).map_err(|e| match e {
        Error::EmptyPromptText => Error::MalformedRecord {
            line,
            msg: "text is empty after trimming".into(),
        },
        other => other,
    })
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Prompt>> {
    let mut prompts = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut next_seq = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: line_no,
                msg: e.to_string(),
            })?;
        let prompt = finish_record(raw, line_no, &mut next_seq)?;
        if !seen.insert(prompt.id.clone()) {
            return Err(Error::DuplicatePromptId {
                line: line_no,
                id: prompt.id,
            });
        }
        prompts.push(prompt);
    }
    Ok(prompts)
}

fn read_csv(file: File) -> Result<Vec<Prompt>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRecord {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let text_col = col("text").ok_or_else(|| Error::MalformedRecord {
        line: 1,
        msg: "CSV header must contain a `text` column".into(),
    })?;
    let label_col = col("label");
    let id_col = col("id");

    let mut prompts = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut next_seq = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let line_no = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::MalformedRecord {
            line: line_no,
            msg: e.to_string(),
        })?;
        let text = record.get(text_col).unwrap_or("").to_string();
        let label = match label_col.and_then(|c| record.get(c)) {
            None | Some("") => None,
            Some(s) => Some(s.trim().parse::<i64>().map_err(|_| Error::MalformedRecord {
                line: line_no,
                msg: format!("label {s:?} is not an integer"),
            })?),
        };
        let id = id_col
            .and_then(|c| record.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let prompt = finish_record(RawRecord { id, text, label }, line_no, &mut next_seq)?;
        if !seen.insert(prompt.id.clone()) {
            return Err(Error::DuplicatePromptId {
                line: line_no,
                id: prompt.id,
            });
        }
        prompts.push(prompt);
    }
    Ok(prompts)
}

/// Write a dataset as JSON-lines, one prompt per line, preserving order.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for p in &dataset.prompts {
        let line = serde_json::to_string(p).expect("prompt serializes");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
