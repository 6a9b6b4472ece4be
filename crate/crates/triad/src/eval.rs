//! Benchmark grading: a strong judge model decides TRUE/FALSE per answer.
//!
//! Each benchmark item carries a category that picks the grading rubric;
//! the grader's reply must put its verdict inside a single `<answer>` tag
//! pair. Replies that don't are counted as a third outcome, never folded
//! into FALSE, so grader failures can't masquerade as model errors.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationRequest};
use crate::domain::RoleId;
use crate::prompts::render_body;
use crate::tags::{parse_verdict, GraderVerdict};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark has {items} items but {answers} answers were supplied")]
    LengthMismatch { items: usize, answers: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("grader backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCategory {
    Math,
    MultipleChoice,
    Truthfulness,
    General,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question: String,
    pub ground_truth: String,
    pub category: EvalCategory,
}

/// Decode settings for grading calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraderDecode {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for GraderDecode {
    fn default() -> Self {
        GraderDecode {
            model: "nvidia/llama-3.1-nemotron-70b-instruct".into(),
            temperature: 1.0,
            top_p: 0.95,
            max_tokens: 1000,
        }
    }
}

/// Category to rubric mapping, overridable per category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalPrompts {
    pub math: String,
    pub multiple_choice: String,
    pub truthfulness: String,
    pub general: String,
}

impl Default for EvalPrompts {
    fn default() -> Self {
        EvalPrompts {
            math: MATH_EVAL_BODY.into(),
            multiple_choice: MULTIPLE_CHOICE_EVAL_BODY.into(),
            truthfulness: TRUTHFULNESS_EVAL_BODY.into(),
            general: GENERAL_EVAL_BODY.into(),
        }
    }
}

impl EvalPrompts {
    pub fn for_category(&self, category: EvalCategory) -> &str {
        match category {
            EvalCategory::Math => &self.math,
            EvalCategory::MultipleChoice => &self.multiple_choice,
            EvalCategory::Truthfulness => &self.truthfulness,
            EvalCategory::General => &self.general,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemGrade {
    pub index: usize,
    pub verdict: GraderVerdict,
    /// Present when the verdict came from a failure (transport exhaustion)
    /// rather than from grader text.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub unparsable: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub report: EvalReport,
    pub grades: Vec<ItemGrade>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalHarness {
    pub prompts: EvalPrompts,
    pub decode: GraderDecode,
}

impl EvalHarness {
    pub fn new() -> Self {
        EvalHarness::default()
    }

    fn grading_request(&self, item: &EvalItem, model_answer: &str, index: usize) -> GenerationRequest {
        let body = self.prompts.for_category(item.category);
        let prompt = render_body(
            body,
            &[
                ("question", item.question.as_str()),
                ("ground_truth", item.ground_truth.as_str()),
                ("model_answer", model_answer),
            ],
        )
        .expect("builtin rubric binds exactly these placeholders");
        let mut request = GenerationRequest::new(RoleId::Judge, prompt).with_seed(index as u64);
        request.temperature = self.decode.temperature;
        request.top_p = self.decode.top_p;
        request.max_new_units = self.decode.max_tokens as usize;
        request
    }

    /// Grades one answer. Transport exhaustion degrades to an unparsable
    /// grade with a note; anything fatal propagates.
    pub fn grade_one(
        &self,
        item: &EvalItem,
        model_answer: &str,
        grader: &dyn Backend,
        index: usize,
    ) -> Result<ItemGrade, BackendError> {
        let request = self.grading_request(item, model_answer, index);
        match grader.generate(&request) {
            Ok(output) => Ok(ItemGrade {
                index,
                verdict: parse_verdict(&output),
                note: None,
            }),
            Err(err) if err.is_degradable() => Ok(ItemGrade {
                index,
                verdict: GraderVerdict::Unparsable,
                note: Some(err.to_string()),
            }),
            Err(err) => Err(err),
        }
    }

    /// Grades every (item, answer) pair, up to `parallelism` at a time,
    /// then aggregates in index order.
    pub fn evaluate_set(
        &self,
        items: &[EvalItem],
        answers: &[String],
        grader: &dyn Backend,
        parallelism: usize,
    ) -> Result<EvalRun, EvalError> {
        if items.len() != answers.len() {
            return Err(EvalError::LengthMismatch {
                items: items.len(),
                answers: answers.len(),
            });
        }
        if items.is_empty() {
            return Err(EvalError::Empty);
        }

        let workers = parallelism.max(1).min(items.len());
        let next = AtomicUsize::new(0);
        let collected: Mutex<Vec<ItemGrade>> = Mutex::new(Vec::with_capacity(items.len()));
        let failure: Mutex<Option<BackendError>> = Mutex::new(None);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let index = next.fetch_add(1, Ordering::Relaxed);
                    if index >= items.len() || failure.lock().unwrap().is_some() {
                        return;
                    }
                    match self.grade_one(&items[index], &answers[index], grader, index) {
                        Ok(grade) => collected.lock().unwrap().push(grade),
                        Err(err) => {
                            let mut slot = failure.lock().unwrap();
                            if slot.is_none() {
                                *slot = Some(err);
                            }
                            return;
                        }
                    }
                });
            }
        });

        if let Some(err) = failure.into_inner().unwrap() {
            return Err(EvalError::Backend(err));
        }
        let mut grades = collected.into_inner().unwrap();
        grades.sort_by_key(|g| g.index);

        let correct = grades
            .iter()
            .filter(|g| g.verdict == GraderVerdict::True)
            .count();
        let incorrect = grades
            .iter()
            .filter(|g| g.verdict == GraderVerdict::False)
            .count();
        let unparsable = grades
            .iter()
            .filter(|g| g.verdict == GraderVerdict::Unparsable)
            .count();
        let total = grades.len();
        Ok(EvalRun {
            report: EvalReport {
                total,
                correct,
                incorrect,
                unparsable,
                accuracy: correct as f64 / total as f64,
            },
            grades,
        })
    }
}

/// Reads a line-delimited benchmark file of `EvalItem` records.
pub fn read_benchmark(path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    read_jsonl(path)
}

/// Reads model answers, one JSON object `{"answer": ...}` per line.
pub fn read_answers(path: &Path) -> Result<Vec<String>, EvalError> {
    #[derive(Deserialize)]
    struct Line {
        answer: String,
    }
    Ok(read_jsonl::<Line>(path)?.into_iter().map(|l| l.answer).collect())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: display.clone(),
        source,
    })?;
    let mut records = Vec::new();
    for (number, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| EvalError::BadRecord {
            path: display.clone(),
            line: number + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes per-item verdict lines followed by one summary line.
pub fn write_run(path: &Path, run: &EvalRun) -> Result<(), EvalError> {
    let display = path.display().to_string();
    let io_err = |source| EvalError::Io {
        path: display.clone(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    for grade in &run.grades {
        let line = serde_json::to_string(grade).expect("grade serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    let mut summary = BTreeMap::new();
    summary.insert("summary", serde_json::to_value(&run.report).unwrap());
    let line = serde_json::to_string(&summary).unwrap();
    writeln!(file, "{line}").map_err(io_err)?;
    Ok(())
}

const MATH_EVAL_BODY: &str = r#"Please evaluate whether the following mathematical answer is correct.

Question: {question}

Ground Truth Answer: {ground_truth}

Model's Answer: {model_answer}

First, analyze both answers in the <think> tags below:

<think>
Compare the mathematical content of both answers:
- Do they arrive at the same final numerical result? (MOST IMPORTANT)
- Is the reasoning correct in the model's answer?
- Are there any mathematical errors?
- Do they represent the same solution even if expressed differently?

[Write your detailed analysis here]
</think>

Then determine if the model's answer is correct:
- TRUE means the model's answer is mathematically correct and matches the ground truth
- FALSE means the model's answer is mathematically incorrect or doesn't match the ground truth

<answer>TRUE</answer> or <answer>FALSE</answer>"#;

const MULTIPLE_CHOICE_EVAL_BODY: &str = r#"Please evaluate whether the multiple choice answer is correct.
            
Question: {question}

Correct Answer: {ground_truth}

Model's Answer: {model_answer}

First, analyze the answers in the <think> tags below:

<think>
Compare the answers:
- Does the model select the same choice letter as the ground truth?
(If the model did not provide a letter, count it as incorrect)

[Write your detailed analysis here]
</think>

Then determine if the model's answer is correct:
- TRUE means the model selected the exact correct choice
- FALSE means the model selected the wrong choice

<answer>TRUE</answer> or <answer>FALSE</answer>"#;

const TRUTHFULNESS_EVAL_BODY: &str = r#"Please evaluate the truthfulness and accuracy of the answer.

Question: {question}

Ground Truth Answer: {ground_truth}

Model's Answer: {model_answer}

First, analyze the answers in the <think> tags below:

<think>
Evaluate the truthfulness:
- Is the model's answer factually accurate?
- Does it align with the ground truth answer?
- Are there any misleading or false statements?

[Write your detailed analysis here]
</think>

Then determine if the model's answer is truthful and accurate:
- TRUE means the answer is truthful and accurate
- FALSE means the answer contains false or misleading information

<answer>TRUE</answer> or <answer>FALSE</answer>"#;

const GENERAL_EVAL_BODY: &str = r#"Please evaluate whether the answer is correct based on the ground truth answer.

Question: {question}

Ground Truth Answer: {ground_truth}

Model's Answer: {model_answer}

First, analyze the answers in the <think> tags below:

<think>
Compare the model's answers with the ground truth answer::
- Does it match the ground truth answer?

[Write your detailed analysis here]
</think>

Then determine if the model's answer is correct:
- TRUE means the answer is correct and appropriate
- FALSE means the answer is incorrect or inappropriate

<answer>TRUE</answer> or <answer>FALSE</answer>"#;
