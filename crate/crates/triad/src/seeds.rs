//! Seed question manifests: the corpus a run starts from.
//!
//! A manifest is JSONL, one `{"text": ..., "source": ...}` record per line.
//! Two manifests ship with the crate: the full mixed corpus and a minimal
//! 16-question bootstrap for runs that start from (almost) nothing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    BadRecord { line: usize, message: String },
}

/// One seed question with the dataset it was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub text: String,
    pub source: String,
}

pub fn parse_manifest(content: &str) -> Result<Vec<SeedRecord>, SeedError> {
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SeedRecord =
            serde_json::from_str(line).map_err(|e| SeedError::BadRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        if record.text.trim().is_empty() {
            return Err(SeedError::BadRecord {
                line: i + 1,
                message: "empty question text".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SeedRecord>, SeedError> {
    let content = fs::read_to_string(path).map_err(|source| SeedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&content)
}

/// The full bundled corpus: a mix of short-answer, multiple-choice, math,
/// code, and reading-comprehension questions tagged by source collection.
/// Contains a small number of cross-source duplicate texts, so the pool
/// size after content-hash dedup is smaller than the record count.
pub fn bundled_seed_manifest() -> Vec<SeedRecord> {
    parse_manifest(include_str!("../data/seed_manifest.jsonl"))
        .expect("bundled seed manifest is well-formed")
}

/// The minimal 16-question bootstrap corpus.
pub fn bundled_zero_seeds() -> Vec<SeedRecord> {
    parse_manifest(include_str!("../data/zero_seeds.jsonl"))
        .expect("bundled zero-seed manifest is well-formed")
}

/// Record count per source tag, in source-name order.
pub fn source_counts(records: &[SeedRecord]) -> std::collections::BTreeMap<String, usize> {
    let mut counts = std::collections::BTreeMap::new();
    for record in records {
        *counts.entry(record.source.clone()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_lines_precisely() {
        let good = r#"{"text": "Q1?", "source": "a"}
{"text": "Q2?", "source": "b"}"#;
        let records = parse_manifest(good).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].source, "b");

        let bad = "{\"text\": \"Q1?\", \"source\": \"a\"}\nnot json";
        match parse_manifest(bad) {
            Err(SeedError::BadRecord { line: 2, .. }) => {}
            other => panic!("expected line-2 error, got {other:?}"),
        }

        let empty_text = r#"{"text": "  ", "source": "a"}"#;
        assert!(parse_manifest(empty_text).is_err());
    }

    #[test]
    fn blank_lines_are_skipped() {
        let content = "\n{\"text\": \"Q?\", \"source\": \"a\"}\n\n";
        assert_eq!(parse_manifest(content).unwrap().len(), 1);
    }

    #[test]
    fn bundled_manifests_load() {
        let full = bundled_seed_manifest();
        assert_eq!(full.len(), 1000);
        let zero = bundled_zero_seeds();
        assert_eq!(zero.len(), 16);
        let counts = source_counts(&full);
        assert_eq!(counts.values().sum::<usize>(), 1000);
        assert_eq!(counts.len(), 14);
    }
}
