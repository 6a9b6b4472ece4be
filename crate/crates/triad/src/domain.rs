//! Core data types shared by every other module.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tags::FormatLevel;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("question text is empty")]
    EmptyQuestionText,
    #[error("quality score {0} outside [0,1]")]
    QualityScoreOutOfRange(f64),
    #[error("answer belongs to question {answer_question_id}, not {question_id}")]
    PairIdMismatch {
        question_id: String,
        answer_question_id: String,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// The three parts the shared policy plays during training.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum RoleId {
    Proposer,
    Solver,
    Judge,
}

impl RoleId {
    pub const ALL: [RoleId; 3] = [RoleId::Proposer, RoleId::Solver, RoleId::Judge];

    pub fn name(self) -> &'static str {
        match self {
            RoleId::Proposer => "proposer",
            RoleId::Solver => "solver",
            RoleId::Judge => "judge",
        }
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a question came from: the seed corpus, or generation at some step
/// (with or without a reference question to riff on).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionOrigin {
    Seed { source: String },
    WithReference { parent_id: String, step: u64 },
    FromScratch { step: u64 },
}

impl QuestionOrigin {
    pub fn is_seed(&self) -> bool {
        matches!(self, QuestionOrigin::Seed { .. })
    }
}

/// A question in the evolving pool. `id` is a content hash so duplicates are
/// detectable regardless of origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub origin: QuestionOrigin,
    /// Normalized judge quality score in [0,1]; absent until judged.
    pub quality_score: Option<f64>,
}

impl Question {
    pub fn new(text: impl Into<String>, origin: QuestionOrigin) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyQuestionText);
        }
        Ok(Question {
            id: Question::content_id(&text),
            text,
            origin,
            quality_score: None,
        })
    }

    /// Hash of the whitespace-normalized text; two questions differing only
    /// in whitespace share an id.
    pub fn content_id(text: &str) -> String {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
        let digest = Sha256::digest(normalized.as_bytes());
        hex::encode(&digest[..16])
    }
}

/// A solver generation for one question. `text` is the extracted answer body
/// (empty when no `<answer>` tag was found); `format_level` is always derived
/// from `raw_output` by tag extraction, never set by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question_id: String,
    pub text: String,
    pub raw_output: String,
    pub format_level: FormatLevel,
}

impl Answer {
    pub fn from_generation(question_id: impl Into<String>, raw_output: impl Into<String>) -> Self {
        let raw_output = raw_output.into();
        let extraction = crate::tags::extract_tagged(&raw_output, "answer");
        let text = extraction.segments.first().cloned().unwrap_or_default();
        Answer {
            question_id: question_id.into(),
            text,
            raw_output,
            format_level: crate::tags::format_reward(&extraction),
        }
    }
}

/// A solved question, as stored in the pair pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: Question,
    pub answer: Answer,
    pub step_created: u64,
}

impl QAPair {
    pub fn new(question: Question, answer: Answer, step_created: u64) -> Result<Self, DomainError> {
        if answer.question_id != question.id {
            return Err(DomainError::PairIdMismatch {
                question_id: question.id,
                answer_question_id: answer.question_id,
            });
        }
        Ok(QAPair {
            question,
            answer,
            step_created,
        })
    }
}

/// What the judge was asked to rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictTarget {
    Question,
    Answer,
}

/// One parsed judge generation. When `parse_failed` is false, `normalized`
/// is `raw_score / 10`; otherwise it is the configured neutral value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub target: VerdictTarget,
    pub raw_score: Option<u8>,
    pub normalized: f64,
    pub parse_failed: bool,
    pub raw_output: String,
    pub format_level: FormatLevel,
}

impl JudgeVerdict {
    pub fn from_output(target: VerdictTarget, raw_output: impl Into<String>, neutral: f64) -> Self {
        let raw_output = raw_output.into();
        let parse = crate::tags::parse_score(&raw_output, neutral);
        JudgeVerdict {
            target,
            raw_score: parse.raw_score,
            normalized: parse.normalized,
            parse_failed: parse.parse_failed,
            raw_output,
            format_level: parse.format_level,
        }
    }
}

/// Mixing weights for the proposer's three reward components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposerWeights {
    pub quality: f64,
    pub difficulty: f64,
    pub format: f64,
}

impl Default for ProposerWeights {
    fn default() -> Self {
        ProposerWeights {
            quality: 1.0 / 3.0,
            difficulty: 1.0 / 3.0,
            format: 1.0 / 3.0,
        }
    }
}

/// Mixing weights for the solver's two reward components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverWeights {
    pub judge: f64,
    pub format: f64,
}

impl Default for SolverWeights {
    fn default() -> Self {
        SolverWeights {
            judge: 0.5,
            format: 0.5,
        }
    }
}

/// Reward mixing weights per role. Defaults sum to 1 per role; custom
/// configs may choose otherwise and are only checked for non-negativity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardWeights {
    #[serde(default)]
    pub proposer: ProposerWeights,
    #[serde(default)]
    pub solver: SolverWeights,
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), DomainError> {
        let entries = [
            ("proposer.quality", self.proposer.quality),
            ("proposer.difficulty", self.proposer.difficulty),
            ("proposer.format", self.proposer.format),
            ("solver.judge", self.solver.judge),
            ("solver.format", self.solver.format),
        ];
        for (name, value) in entries {
            if !value.is_finite() || value < 0.0 {
                return Err(DomainError::InvalidConfig(format!(
                    "weight {name} must be finite and >= 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// A role's total reward with its named components. `total` is the dot
/// product of the components with that role's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub role: RoleId,
    pub components: BTreeMap<String, f64>,
    pub total: f64,
}

/// One (prompt, completion, reward) atom of a training step. `advantage`
/// stays empty until per-role normalization runs over the step's batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub role: RoleId,
    pub prompt: String,
    pub completion: String,
    pub reward: f64,
    pub advantage: Option<f64>,
    pub step: u64,
}

/// Per-role batch statistics produced by advantage normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageStats {
    pub role: RoleId,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Everything that shapes a training run's behavior (not its plumbing:
/// output paths and parallelism live in run options instead).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    /// Solver attempts used to estimate a proposed question's difficulty.
    pub n_difficulty_samples: usize,
    /// Minimum normalized quality score for pool admission.
    pub quality_threshold: f64,
    /// Probability that a proposal riffs on a sampled reference question
    /// (0.0 = always from scratch, 1.0 = always from a reference).
    pub reference_probability: f64,
    /// Fallback normalized score when a judge output has no parsable tag.
    pub neutral_score: f64,
    pub temperature: f64,
    pub top_p: f64,
    pub rng_seed: u64,
    pub weights: RewardWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 300,
            batch_size: 128,
            n_difficulty_samples: 5,
            quality_threshold: 0.7,
            reference_probability: 0.5,
            neutral_score: 0.5,
            temperature: 1.0,
            top_p: 1.0,
            rng_seed: 0,
            weights: RewardWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |msg: String| Err(DomainError::InvalidConfig(msg));
        if self.total_steps == 0 {
            return fail("total_steps must be > 0".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be > 0".into());
        }
        if self.n_difficulty_samples == 0 {
            return fail("n_difficulty_samples must be >= 1".into());
        }
        for (name, value) in [
            ("quality_threshold", self.quality_threshold),
            ("reference_probability", self.reference_probability),
            ("neutral_score", self.neutral_score),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return fail(format!("{name} must lie in [0,1], got {value}"));
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return fail(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return fail(format!("top_p must lie in (0,1], got {}", self.top_p));
        }
        self.weights.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn question_ids_ignore_whitespace_differences() {
        let a = Question::new("what  is\n2 + 2?", QuestionOrigin::FromScratch { step: 1 }).unwrap();
        let b = Question::new("what is 2 + 2?", QuestionOrigin::FromScratch { step: 2 }).unwrap();
        assert_eq!(a.id, b.id);
        let c = Question::new("what is 2 + 3?", QuestionOrigin::FromScratch { step: 1 }).unwrap();
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn empty_question_text_is_rejected() {
        assert!(matches!(
            Question::new("  \n", QuestionOrigin::FromScratch { step: 0 }),
            Err(DomainError::EmptyQuestionText)
        ));
    }

    #[test]
    fn answer_derives_body_and_format_from_raw_output() {
        let a = Answer::from_generation("qid", "text <answer>42</answer> more");
        assert_eq!(a.text, "42");
        assert_eq!(a.format_level, FormatLevel::ExactlyOne);

        let none = Answer::from_generation("qid", "no tags here");
        assert_eq!(none.text, "");
        assert_eq!(none.format_level, FormatLevel::Missing);

        let multi = Answer::from_generation("qid", "<answer>a</answer><answer>b</answer>");
        assert_eq!(multi.text, "a");
        assert_eq!(multi.format_level, FormatLevel::Multiple);
    }

    #[test]
    fn pair_requires_matching_ids() {
        let q = Question::new("q?", QuestionOrigin::FromScratch { step: 0 }).unwrap();
        let a = Answer::from_generation(q.id.clone(), "<answer>yes</answer>");
        assert!(QAPair::new(q.clone(), a, 3).is_ok());
        let other = Answer::from_generation("someone-else", "<answer>no</answer>");
        assert!(QAPair::new(q, other, 3).is_err());
    }

    #[test]
    fn verdict_from_output_tracks_parse_outcome() {
        let v = JudgeVerdict::from_output(VerdictTarget::Answer, "<score>7</score>", 0.5);
        assert_eq!(v.raw_score, Some(7));
        assert_eq!(v.normalized, 0.7);
        assert!(!v.parse_failed);

        let bad = JudgeVerdict::from_output(VerdictTarget::Question, "mumble", 0.5);
        assert_eq!(bad.raw_score, None);
        assert_eq!(bad.normalized, 0.5);
        assert!(bad.parse_failed);
        assert_eq!(bad.format_level, FormatLevel::Missing);
    }

    #[test]
    fn default_weights_match_paper_defaults() {
        let w = RewardWeights::default();
        assert!((w.proposer.quality - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.proposer.difficulty - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.proposer.format - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.solver.judge, 0.5);
        assert_eq!(w.solver.format, 0.5);
    }

    #[test]
    fn config_validation_catches_bad_ranges() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());

        let mut bad = TrainConfig::default();
        bad.quality_threshold = 1.5;
        assert!(bad.validate().is_err());

        let mut bad = TrainConfig::default();
        bad.top_p = 0.0;
        assert!(bad.validate().is_err());

        let mut bad = TrainConfig::default();
        bad.weights.solver.judge = -0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn core_types_round_trip_through_json() {
        let q = Question::new(
            "round trip?",
            QuestionOrigin::Seed {
                source: "unit".into(),
            },
        )
        .unwrap();
        let q = Question {
            quality_score: Some(0.8),
            ..q
        };
        let a = Answer::from_generation(q.id.clone(), "<answer>yes</answer>");
        let pair = QAPair::new(q.clone(), a, 2).unwrap();
        let verdict = JudgeVerdict::from_output(VerdictTarget::Answer, "<score>9</score>", 0.5);
        let rollout = RolloutRecord {
            role: RoleId::Solver,
            prompt: "p".into(),
            completion: "c".into(),
            reward: 0.75,
            advantage: Some(1.25),
            step: 4,
        };
        let config = TrainConfig::default();

        macro_rules! round_trip {
            ($value:expr, $ty:ty) => {{
                let json = serde_json::to_string(&$value).unwrap();
                let back: $ty = serde_json::from_str(&json).unwrap();
                assert_eq!(back, $value);
            }};
        }
        round_trip!(q, Question);
        round_trip!(pair, QAPair);
        round_trip!(verdict, JudgeVerdict);
        round_trip!(rollout, RolloutRecord);
        round_trip!(config, TrainConfig);
    }
}
