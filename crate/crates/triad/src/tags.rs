//! Tag extraction and format grading for raw model generations.
//!
//! Generations are expected to wrap their payload in literal tags such as
//! `<question>...</question>` or `<score>...</score>`. This module extracts
//! those segments, grades how well a generation complied with the
//! exactly-one-tag instruction, and parses judge scores and grader verdicts.

use serde::{Deserialize, Serialize};

/// Three-level compliance grade for tagged output: exactly one well-formed
/// pair scores 1.0, more than one scores 0.5, none scores 0.0.
///
/// Serializes as its numeric value so persisted records stay plain numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub enum FormatLevel {
    ExactlyOne,
    Multiple,
    Missing,
}

impl FormatLevel {
    pub fn from_count(count: usize) -> Self {
        match count {
            0 => FormatLevel::Missing,
            1 => FormatLevel::ExactlyOne,
            _ => FormatLevel::Multiple,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            FormatLevel::ExactlyOne => 1.0,
            FormatLevel::Multiple => 0.5,
            FormatLevel::Missing => 0.0,
        }
    }
}

impl From<FormatLevel> for f64 {
    fn from(level: FormatLevel) -> f64 {
        level.value()
    }
}

impl TryFrom<f64> for FormatLevel {
    type Error = String;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        if value == 1.0 {
            Ok(FormatLevel::ExactlyOne)
        } else if value == 0.5 {
            Ok(FormatLevel::Multiple)
        } else if value == 0.0 {
            Ok(FormatLevel::Missing)
        } else {
            Err(format!("format level must be 1.0, 0.5 or 0.0, got {value}"))
        }
    }
}

/// All `<tag>...</tag>` segments found in one generation, in document order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagExtraction {
    pub tag_name: String,
    pub segments: Vec<String>,
    pub well_formed_count: usize,
}

fn is_valid_tag_name(tag_name: &str) -> bool {
    !tag_name.is_empty()
        && tag_name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Scans `text` left to right for literal `<tag>`/`</tag>` pairs.
///
/// An opening tag with no later closing tag contributes nothing. Nesting of
/// the same tag is not recognized: the first closing tag terminates the
/// earliest open segment, so `<q>a<q>b</q>` yields the single segment
/// `a<q>b`. Inner whitespace is preserved verbatim.
pub fn extract_tagged(text: &str, tag_name: &str) -> TagExtraction {
    assert!(
        is_valid_tag_name(tag_name),
        "tag name must be a non-empty identifier, got {tag_name:?}"
    );
    let open = format!("<{tag_name}>");
    let close = format!("</{tag_name}>");
    let mut segments = Vec::new();
    let mut cursor = 0;
    while let Some(found) = text[cursor..].find(&open) {
        let body_start = cursor + found + open.len();
        match text[body_start..].find(&close) {
            Some(rel) => {
                segments.push(text[body_start..body_start + rel].to_string());
                cursor = body_start + rel + close.len();
            }
            None => break,
        }
    }
    TagExtraction {
        tag_name: tag_name.to_string(),
        well_formed_count: segments.len(),
        segments,
    }
}

/// Grades an extraction on the three-level rule. Pure function of
/// `well_formed_count`.
pub fn format_reward(extraction: &TagExtraction) -> FormatLevel {
    FormatLevel::from_count(extraction.well_formed_count)
}

/// Outcome of parsing a judge generation for a `<score>` tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParse {
    /// First valid integer score in document order, when any exists.
    pub raw_score: Option<u8>,
    /// `raw_score / 10`, or the configured neutral value on parse failure.
    pub normalized: f64,
    pub parse_failed: bool,
    /// Graded on the count of *valid* score segments, not raw tag pairs.
    pub format_level: FormatLevel,
}

/// Extracts `<score>` segments and takes the first whose trimmed content is
/// an integer in [1,10]. Segments with out-of-range or non-integer content do
/// not count as valid. With no valid segment the score falls back to
/// `neutral` and `parse_failed` is set.
pub fn parse_score(judge_output: &str, neutral: f64) -> ScoreParse {
    assert!(
        (0.0..=1.0).contains(&neutral),
        "neutral score must lie in [0,1], got {neutral}"
    );
    let extraction = extract_tagged(judge_output, "score");
    let valid: Vec<u8> = extraction
        .segments
        .iter()
        .filter_map(|segment| {
            segment
                .trim()
                .parse::<i64>()
                .ok()
                .filter(|v| (1..=10).contains(v))
                .map(|v| v as u8)
        })
        .collect();
    let format_level = FormatLevel::from_count(valid.len());
    match valid.first() {
        Some(&raw) => ScoreParse {
            raw_score: Some(raw),
            normalized: f64::from(raw) / 10.0,
            parse_failed: false,
            format_level,
        },
        None => ScoreParse {
            raw_score: None,
            normalized: neutral,
            parse_failed: true,
            format_level,
        },
    }
}

/// A grader's TRUE/FALSE judgment, with unparsable output kept as its own
/// outcome rather than coerced to FALSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GraderVerdict {
    True,
    False,
    Unparsable,
}

/// Reads the single `<answer>` segment of a grader output. Anything other
/// than exactly one segment containing (case-insensitively) `true` or
/// `false` is unparsable.
pub fn parse_verdict(grader_output: &str) -> GraderVerdict {
    let extraction = extract_tagged(grader_output, "answer");
    if extraction.well_formed_count != 1 {
        return GraderVerdict::Unparsable;
    }
    match extraction.segments[0].trim().to_ascii_lowercase().as_str() {
        "true" => GraderVerdict::True,
        "false" => GraderVerdict::False,
        _ => GraderVerdict::Unparsable,
    }
}
