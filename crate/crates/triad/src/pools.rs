//! The two evolving datasets of a run.
//!
//! The question pool holds seed questions plus every generated question that
//! passed the quality filter; it only ever grows. The pair pool holds every
//! (question, answer) the solver phase produced, unfiltered and append-only.
//! Both persist as JSONL and restore content-identically.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{QAPair, Question, QuestionOrigin};
use crate::seeds::SeedRecord;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("seed ingestion got no records (pass allow_empty only for bootstrap-free runs)")]
    EmptySeed,
    #[error("seed record {index} has empty text")]
    EmptySeedText { index: usize },
    #[error("cannot sample from an empty pool")]
    EmptyPool,
    #[error("sample size must be >= 1")]
    ZeroSample,
    #[error("seed-origin questions are ingested, never admitted through the filter")]
    SeedOriginAdmission,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
}

/// One row of the admission audit trail. Every `admit_question` call leaves
/// exactly one entry, accepted or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionEntry {
    pub step: u64,
    pub question_id: String,
    pub quality_score: f64,
    pub admitted: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum QuestionPoolRecord {
    Question(Question),
    Admission(AdmissionEntry),
}

/// The valid-question dataset. Seeds bypass the filter; generated questions
/// enter only at or above the quality threshold, and duplicates (by content
/// id) never enter twice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuestionPool {
    questions: Vec<Question>,
    ids: HashSet<String>,
    admission_log: Vec<AdmissionEntry>,
}

impl QuestionPool {
    /// Builds a pool from seed records, deduplicating by content hash (first
    /// occurrence wins). Empty input is an error unless `allow_empty` is set
    /// for deliberately bootstrap-free configurations.
    pub fn ingest_seed(records: &[SeedRecord], allow_empty: bool) -> Result<Self, PoolError> {
        if records.is_empty() && !allow_empty {
            return Err(PoolError::EmptySeed);
        }
        let mut pool = QuestionPool::default();
        for (index, record) in records.iter().enumerate() {
            let question = Question::new(
                record.text.clone(),
                QuestionOrigin::Seed {
                    source: record.source.clone(),
                },
            )
            .map_err(|_| PoolError::EmptySeedText { index })?;
            if pool.ids.insert(question.id.clone()) {
                pool.questions.push(question);
            }
        }
        Ok(pool)
    }

    /// Runs the quality filter on a generated question. Returns whether the
    /// question entered the pool; the admission log gains an entry either
    /// way. Boundary semantics: quality exactly at the threshold is in.
    pub fn admit_question(
        &mut self,
        question: Question,
        quality: f64,
        threshold: f64,
        step: u64,
    ) -> Result<bool, PoolError> {
        if question.origin.is_seed() {
            return Err(PoolError::SeedOriginAdmission);
        }
        debug_assert!((0.0..=1.0).contains(&quality) && (0.0..=1.0).contains(&threshold));
        let admitted = quality >= threshold && !self.ids.contains(&question.id);
        self.admission_log.push(AdmissionEntry {
            step,
            question_id: question.id.clone(),
            quality_score: quality,
            admitted,
        });
        if admitted {
            self.ids.insert(question.id.clone());
            self.questions.push(Question {
                quality_score: Some(quality),
                ..question
            });
        }
        Ok(admitted)
    }

    /// Uniform draw over the current contents; the pool is unchanged.
    pub fn sample_reference<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&Question, PoolError> {
        if self.questions.is_empty() {
            return Err(PoolError::EmptyPool);
        }
        Ok(&self.questions[rng.gen_range(0..self.questions.len())])
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn admission_log(&self) -> &[AdmissionEntry] {
        &self.admission_log
    }

    /// Hash over the full serialized content, for cheap equality checks
    /// across snapshot/restore boundaries.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for question in &self.questions {
            hasher.update(serde_json::to_vec(question).expect("question serializes"));
            hasher.update(b"\n");
        }
        for entry in &self.admission_log {
            hasher.update(serde_json::to_vec(entry).expect("entry serializes"));
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn snapshot(&self, path: &Path) -> Result<(), PoolError> {
        let io_err = |source| PoolError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for question in &self.questions {
            let record = QuestionPoolRecord::Question(question.clone());
            serde_json::to_writer(&mut out, &record).map_err(|e| PoolError::Corrupt {
                path: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
            out.write_all(b"\n").map_err(io_err)?;
        }
        for entry in &self.admission_log {
            let record = QuestionPoolRecord::Admission(entry.clone());
            serde_json::to_writer(&mut out, &record).map_err(|e| PoolError::Corrupt {
                path: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
            out.write_all(b"\n").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn restore(path: &Path) -> Result<Self, PoolError> {
        let file = File::open(path).map_err(|source| PoolError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut pool = QuestionPool::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let corrupt = |message: String| PoolError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let line = line.map_err(|e| corrupt(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))? {
                QuestionPoolRecord::Question(question) => {
                    if !pool.ids.insert(question.id.clone()) {
                        return Err(corrupt(format!("duplicate question id {}", question.id)));
                    }
                    pool.questions.push(question);
                }
                QuestionPoolRecord::Admission(entry) => pool.admission_log.push(entry),
            }
        }
        Ok(pool)
    }
}

/// The append-only (question, answer) dataset the judge phase samples from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairPool {
    pairs: Vec<QAPair>,
}

impl PairPool {
    pub fn record_pair(&mut self, pair: QAPair) {
        self.pairs.push(pair);
    }

    /// Uniform with replacement; the pool is unchanged.
    pub fn sample_pairs<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n: usize,
    ) -> Result<Vec<QAPair>, PoolError> {
        if n == 0 {
            return Err(PoolError::ZeroSample);
        }
        if self.pairs.is_empty() {
            return Err(PoolError::EmptyPool);
        }
        Ok((0..n)
            .map(|_| self.pairs[rng.gen_range(0..self.pairs.len())].clone())
            .collect())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[QAPair] {
        &self.pairs
    }

    pub fn snapshot(&self, path: &Path) -> Result<(), PoolError> {
        let io_err = |source| PoolError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for pair in &self.pairs {
            serde_json::to_writer(&mut out, pair).map_err(|e| PoolError::Corrupt {
                path: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
            out.write_all(b"\n").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn restore(path: &Path) -> Result<Self, PoolError> {
        let content = fs::read_to_string(path).map_err(|source| PoolError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut pool = PairPool::default();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let pair: QAPair = serde_json::from_str(line).map_err(|e| PoolError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            pool.pairs.push(pair);
        }
        Ok(pool)
    }
}
