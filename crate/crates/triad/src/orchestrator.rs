//! The training loop: propose, solve, judge, update, once per step.
//!
//! Each step runs four stages in a fixed logical order. The proposer drafts
//! a batch of candidate questions; the judge scores each one's quality and
//! the solver's sampled attempts estimate its difficulty; passing questions
//! join the question pool. The solver then answers freshly sampled pool
//! questions and its answers join the pair pool. The judge renders verdicts
//! on sampled pairs. Finally advantages are normalized per role over the
//! step's rollouts and the backend applies exactly one update.
//!
//! Pool edits happen on working copies committed only when the step
//! finishes, so a backend failure aborts the step with state untouched.
//! Every random choice flows from a per-step generator derived from the
//! config seed, which makes runs replayable and resumable: generation
//! requests carry pre-drawn seeds, so in-phase parallelism changes timing
//! but never results.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::advantage::{compute_role_advantages, DEFAULT_EPSILON};
use crate::backend::{
    Backend, BackendError, GenerationRequest, UpdateBatch, UpdateItem, UpdateReport,
};
use crate::domain::{
    AdvantageStats, Answer, DomainError, JudgeVerdict, QAPair, Question, QuestionOrigin, RoleId,
    RolloutRecord, TrainConfig, VerdictTarget,
};
use crate::pools::{PairPool, PoolError, QuestionPool};
use crate::prompts::{build_prompt, PromptTemplate, PromptVariant};
use crate::reward::{difficulty_reward, judge_total, mean_solve_score, proposer_total, solver_total};
use crate::tags::extract_tagged;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(#[from] DomainError),
    #[error("pool error: {0}")]
    Pool(#[from] PoolError),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("run directory was produced by a different configuration: {}", diff.join("; "))]
    ConfigMismatch { diff: Vec<String> },
}

/// How one proposal is drafted: riffing on a pool question or from nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    WithReference,
    FromScratch,
}

/// Draws the proposal mode; `p_ref` is the with-reference probability.
pub fn choose_generation_mode<R: Rng + ?Sized>(p_ref: f64, rng: &mut R) -> GenerationMode {
    debug_assert!((0.0..=1.0).contains(&p_ref));
    if rng.gen::<f64>() < p_ref {
        GenerationMode::WithReference
    } else {
        GenerationMode::FromScratch
    }
}

/// One entry in a step's logical operation record. Order is the dataflow
/// order of the loop body, independent of in-phase parallelism: per
/// proposal slot [Propose, JudgeQuality, DifficultySample x N, Admission]
/// (quality, samples, and admission are absent when no question could be
/// extracted), then per solver slot [SolverGenerate, SolverJudge], then per
/// judge slot JudgePhase, then AdvantageComputed and UpdateApplied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Propose { slot: usize },
    JudgeQuality { slot: usize },
    DifficultySample { slot: usize, sample: usize },
    Admission { slot: usize, admitted: bool },
    SolverGenerate { slot: usize },
    SolverJudge { slot: usize },
    JudgePhase { slot: usize },
    AdvantageComputed,
    UpdateApplied,
}

/// Per-step metrics, one line of the run's steps file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Slots that yielded an extractable candidate question.
    pub proposed: usize,
    pub admitted: usize,
    pub pool_size: usize,
    pub mean_solver_reward: f64,
    pub mean_difficulty: f64,
    pub mean_proposer_reward: f64,
    /// Mean format reward over the judge phase's own outputs.
    pub judge_format_rate: f64,
    pub advantage_stats: BTreeMap<RoleId, AdvantageStats>,
    pub aborted: bool,
    pub abort_reason: Option<String>,
}

/// Everything a step produced. `rollouts` carry their final advantages;
/// `aborted_by` holds the backend error when the step rolled back.
#[derive(Debug)]
pub struct StepOutcome {
    pub report: StepReport,
    pub trace: Vec<TraceEvent>,
    pub rollouts: Vec<RolloutRecord>,
    pub update: Option<UpdateReport>,
    pub aborted_by: Option<BackendError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Snapshot cadence in steps; 0 snapshots only after the final step.
    pub snapshot_every: u64,
    /// Stop after this many executed steps in this invocation (the run
    /// stays resumable); None runs to completion.
    pub step_limit: Option<u64>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            snapshot_every: 10,
            step_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps_completed: u64,
    pub total_steps: u64,
    pub pool_size: usize,
    pub resumed_from: Option<u64>,
    pub aborted_steps: u64,
    pub stopped_early: bool,
}

/// First line of a run directory: the resolved config and its hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub config_hash: String,
}

struct Templates {
    propose_no_ref: PromptTemplate,
    propose_with_ref: PromptTemplate,
    solve: PromptTemplate,
    judge_answer: PromptTemplate,
    judge_question: PromptTemplate,
}

impl Templates {
    fn builtin() -> Self {
        Templates {
            propose_no_ref: PromptTemplate::builtin(PromptVariant::ProposeNoRef),
            propose_with_ref: PromptTemplate::builtin(PromptVariant::ProposeWithRef),
            solve: PromptTemplate::builtin(PromptVariant::Solve),
            judge_answer: PromptTemplate::builtin(PromptVariant::JudgeAnswer),
            judge_question: PromptTemplate::builtin(PromptVariant::JudgeQuestion),
        }
    }
}

/// A question-quality judging call kept for the judge phase's fallback
/// accounting when the pair pool has nothing to sample.
struct QualityCall {
    slot: usize,
    prompt: String,
    completion: String,
}

pub struct Orchestrator {
    config: TrainConfig,
    templates: Templates,
    question_pool: QuestionPool,
    pair_pool: PairPool,
    parallelism: usize,
}

/// Derives the per-step generator so steps are independent of each other:
/// re-running step k never needs the generator state left by step k-1.
fn step_rng(master_seed: u64, step: u64) -> ChaCha8Rng {
    let mut x = master_seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(x ^ (x >> 31))
}

/// Runs every request, preserving input order in the output. Requests
/// carry their own seeds, so concurrency cannot change any result.
fn generate_all(
    backend: &dyn Backend,
    requests: &[GenerationRequest],
    parallelism: usize,
) -> Vec<Result<String, BackendError>> {
    if parallelism <= 1 || requests.len() <= 1 {
        return requests.iter().map(|r| backend.generate(r)).collect();
    }
    let slots: Mutex<Vec<Option<Result<String, BackendError>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(requests.len()) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= requests.len() {
                    return;
                }
                let result = backend.generate(&requests[index]);
                slots.lock().unwrap()[index] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every request dispatched"))
        .collect()
}

/// First error in a batch of generation results, if any.
fn first_error(results: &mut Vec<Result<String, BackendError>>) -> Option<BackendError> {
    let position = results.iter().position(|r| r.is_err())?;
    Some(results.swap_remove(position).unwrap_err())
}

fn config_hash(config: &TrainConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Top-level fields whose values differ, as "name: stored -> current".
fn config_diff(stored: &TrainConfig, current: &TrainConfig) -> Vec<String> {
    let stored = serde_json::to_value(stored).expect("config serializes");
    let current = serde_json::to_value(current).expect("config serializes");
    let (stored, current) = (
        stored.as_object().expect("config is an object"),
        current.as_object().expect("config is an object"),
    );
    stored
        .iter()
        .filter(|(key, value)| current.get(*key) != Some(value))
        .map(|(key, value)| format!("{key}: {value} -> {}", current[key]))
        .collect()
}

impl Orchestrator {
    pub fn new(config: TrainConfig, question_pool: QuestionPool) -> Result<Self, RunError> {
        config.validate()?;
        if question_pool.is_empty() {
            return Err(RunError::Pool(PoolError::EmptyPool));
        }
        Ok(Orchestrator {
            config,
            templates: Templates::builtin(),
            question_pool,
            pair_pool: PairPool::default(),
            parallelism: 1,
        })
    }

    /// Concurrent generation requests per phase sub-stage; 1 = serial.
    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn question_pool(&self) -> &QuestionPool {
        &self.question_pool
    }

    pub fn pair_pool(&self) -> &PairPool {
        &self.pair_pool
    }

    fn request(&self, role: RoleId, prompt: String, seed: u64) -> GenerationRequest {
        GenerationRequest::new(role, prompt)
            .with_decode(self.config.temperature, self.config.top_p)
            .with_seed(seed)
    }

    /// Executes one full step against working copies of the pools,
    /// committing them only on success. A backend failure rolls everything
    /// back and reports the abort instead of returning an error.
    pub fn run_training_step(&mut self, backend: &mut dyn Backend, step: u64) -> StepOutcome {
        let batch = self.config.batch_size;
        let n_samples = self.config.n_difficulty_samples;
        let neutral = self.config.neutral_score;
        let mut rng = step_rng(self.config.rng_seed, step);
        let mut trace: Vec<TraceEvent> = Vec::new();

        let mut questions = self.question_pool.clone();
        let mut pairs = self.pair_pool.clone();

        macro_rules! try_generate {
            ($requests:expr) => {{
                let mut results = generate_all(backend, &$requests, self.parallelism);
                if let Some(err) = first_error(&mut results) {
                    return self.aborted(step, trace, err);
                }
                results.into_iter().map(|r| r.unwrap()).collect::<Vec<String>>()
            }};
        }

        // Proposer phase: draft one candidate question per slot.
        let mut propose_prompts = Vec::with_capacity(batch);
        let mut parent_ids: Vec<Option<String>> = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mode = choose_generation_mode(self.config.reference_probability, &mut rng);
            let (prompt, parent) = match mode {
                GenerationMode::WithReference => {
                    let reference = questions
                        .sample_reference(&mut rng)
                        .expect("pool is never empty");
                    let prompt = build_prompt(
                        &self.templates.propose_with_ref,
                        &[("reference", reference.text.as_str())],
                    )
                    .expect("template binds reference");
                    (prompt, Some(reference.id.clone()))
                }
                GenerationMode::FromScratch => (self.templates.propose_no_ref.body.clone(), None),
            };
            propose_prompts.push(prompt);
            parent_ids.push(parent);
        }
        let propose_requests: Vec<GenerationRequest> = propose_prompts
            .iter()
            .map(|p| self.request(RoleId::Proposer, p.clone(), rng.gen()))
            .collect();
        let propose_outputs = try_generate!(propose_requests);

        // Best-effort extraction: the first well-formed segment stands in
        // for the candidate even when the format is multiple (0.5).
        let candidates: Vec<Option<String>> = propose_outputs
            .iter()
            .map(|output| extract_tagged(output, "question").segments.first().cloned())
            .collect();

        // Judge scores quality for every slot that has a candidate.
        let quality_slots: Vec<usize> = (0..batch).filter(|&s| candidates[s].is_some()).collect();
        let quality_requests: Vec<GenerationRequest> = quality_slots
            .iter()
            .map(|&slot| {
                let prompt = build_prompt(
                    &self.templates.judge_question,
                    &[("question", candidates[slot].as_deref().unwrap())],
                )
                .expect("template binds question");
                self.request(RoleId::Judge, prompt, rng.gen())
            })
            .collect();
        let quality_outputs = try_generate!(quality_requests);
        let mut quality_scores = vec![neutral; batch];
        let mut quality_calls: Vec<QualityCall> = Vec::with_capacity(quality_slots.len());
        for (request, (output, &slot)) in quality_requests
            .iter()
            .zip(quality_outputs.iter().zip(&quality_slots))
        {
            let verdict = JudgeVerdict::from_output(VerdictTarget::Question, output.clone(), neutral);
            quality_scores[slot] = verdict.normalized;
            quality_calls.push(QualityCall {
                slot,
                prompt: request.prompt.clone(),
                completion: output.clone(),
            });
        }

        // Difficulty estimation: the solver attacks each candidate
        // n_samples times and the judge scores every attempt. These calls
        // estimate the proposer's reward and are not training rollouts.
        let mut attempt_requests = Vec::with_capacity(quality_slots.len() * n_samples);
        for &slot in &quality_slots {
            let prompt = build_prompt(
                &self.templates.solve,
                &[("question", candidates[slot].as_deref().unwrap())],
            )
            .expect("template binds question");
            for _ in 0..n_samples {
                attempt_requests.push(self.request(RoleId::Solver, prompt.clone(), rng.gen()));
            }
        }
        let attempt_outputs = try_generate!(attempt_requests);

        let mut attempt_score_requests = Vec::with_capacity(attempt_outputs.len());
        for (i, &slot) in quality_slots.iter().enumerate() {
            let question_text = candidates[slot].as_deref().unwrap();
            for j in 0..n_samples {
                let attempt = Answer::from_generation("difficulty", &attempt_outputs[i * n_samples + j]);
                let answer_text = if attempt.text.is_empty() {
                    attempt.raw_output.as_str()
                } else {
                    attempt.text.as_str()
                };
                let prompt = build_prompt(
                    &self.templates.judge_answer,
                    &[("question", question_text), ("answer", answer_text)],
                )
                .expect("template binds question and answer");
                attempt_score_requests.push(self.request(RoleId::Judge, prompt, rng.gen()));
            }
        }
        let attempt_score_outputs = try_generate!(attempt_score_requests);

        let mut difficulties = vec![difficulty_reward(neutral); batch];
        for (i, &slot) in quality_slots.iter().enumerate() {
            let verdicts: Vec<JudgeVerdict> = attempt_score_outputs
                [i * n_samples..(i + 1) * n_samples]
                .iter()
                .map(|o| JudgeVerdict::from_output(VerdictTarget::Answer, o.clone(), neutral))
                .collect();
            let mean = mean_solve_score(&verdicts, n_samples).expect("n_samples >= 1");
            difficulties[slot] = difficulty_reward(mean.value);
        }

        // Admission walks slots in order so dedup outcomes are stable;
        // questions admitted here are sampleable in this step's solver
        // phase. The trace is assembled in the same walk.
        let mut proposer_rollouts = Vec::with_capacity(batch);
        let mut admitted_count = 0usize;
        for slot in 0..batch {
            trace.push(TraceEvent::Propose { slot });
            let output = &propose_outputs[slot];
            let extraction = extract_tagged(output, "question");
            let format = crate::tags::format_reward(&extraction);
            if let Some(text) = &candidates[slot] {
                trace.push(TraceEvent::JudgeQuality { slot });
                for sample in 0..n_samples {
                    trace.push(TraceEvent::DifficultySample { slot, sample });
                }
                let origin = match &parent_ids[slot] {
                    Some(parent_id) => QuestionOrigin::WithReference {
                        parent_id: parent_id.clone(),
                        step,
                    },
                    None => QuestionOrigin::FromScratch { step },
                };
                let question = Question::new(text.clone(), origin).expect("segment is non-blank");
                let admitted = questions
                    .admit_question(
                        question,
                        quality_scores[slot],
                        self.config.quality_threshold,
                        step,
                    )
                    .expect("origin is never seed");
                if admitted {
                    admitted_count += 1;
                }
                trace.push(TraceEvent::Admission { slot, admitted });
            }
            let breakdown = proposer_total(
                quality_scores[slot],
                difficulties[slot],
                format,
                &self.config.weights,
            );
            proposer_rollouts.push(RolloutRecord {
                role: RoleId::Proposer,
                prompt: propose_prompts[slot].clone(),
                completion: output.clone(),
                reward: breakdown.total,
                advantage: None,
                step,
            });
        }
        let proposed = candidates.iter().flatten().count();

        // Solver phase: fresh questions from the pool, answers recorded
        // into the pair pool whether or not they parsed.
        let mut solve_prompts = Vec::with_capacity(batch);
        let mut solve_questions = Vec::with_capacity(batch);
        for _ in 0..batch {
            let question = questions
                .sample_reference(&mut rng)
                .expect("pool is never empty")
                .clone();
            let prompt = build_prompt(&self.templates.solve, &[("question", question.text.as_str())])
                .expect("template binds question");
            solve_prompts.push(prompt);
            solve_questions.push(question);
        }
        let solve_requests: Vec<GenerationRequest> = solve_prompts
            .iter()
            .map(|p| self.request(RoleId::Solver, p.clone(), rng.gen()))
            .collect();
        let solve_outputs = try_generate!(solve_requests);

        let answers: Vec<Answer> = solve_outputs
            .iter()
            .enumerate()
            .map(|(slot, output)| Answer::from_generation(solve_questions[slot].id.clone(), output))
            .collect();
        let solve_score_requests: Vec<GenerationRequest> = (0..batch)
            .map(|slot| {
                let answer_text = if answers[slot].text.is_empty() {
                    answers[slot].raw_output.as_str()
                } else {
                    answers[slot].text.as_str()
                };
                let prompt = build_prompt(
                    &self.templates.judge_answer,
                    &[
                        ("question", solve_questions[slot].text.as_str()),
                        ("answer", answer_text),
                    ],
                )
                .expect("template binds question and answer");
                self.request(RoleId::Judge, prompt, rng.gen())
            })
            .collect();
        let solve_score_outputs = try_generate!(solve_score_requests);

        let mut solver_rollouts = Vec::with_capacity(batch);
        for slot in 0..batch {
            trace.push(TraceEvent::SolverGenerate { slot });
            trace.push(TraceEvent::SolverJudge { slot });
            let verdict = JudgeVerdict::from_output(
                VerdictTarget::Answer,
                solve_score_outputs[slot].clone(),
                neutral,
            );
            let breakdown = solver_total(
                verdict.normalized,
                answers[slot].format_level,
                &self.config.weights,
            );
            solver_rollouts.push(RolloutRecord {
                role: RoleId::Solver,
                prompt: solve_prompts[slot].clone(),
                completion: solve_outputs[slot].clone(),
                reward: breakdown.total,
                advantage: None,
                step,
            });
            let pair = QAPair::new(solve_questions[slot].clone(), answers[slot].clone(), step)
                .expect("answer was built for this question");
            pairs.record_pair(pair);
        }

        // Judge phase.
        let (judge_rollouts, judge_format_rate) =
            match self.judge_phase(backend, &mut rng, &pairs, &quality_calls, step, &mut trace) {
                Ok(result) => result,
                Err(err) => return self.aborted(step, trace, err),
            };

        // Advantages, then the step's single update.
        let mut rollouts = proposer_rollouts;
        rollouts.extend(solver_rollouts);
        rollouts.extend(judge_rollouts);
        let stats = compute_role_advantages(&mut rollouts, DEFAULT_EPSILON)
            .expect("rollouts are non-empty with finite fresh rewards");
        trace.push(TraceEvent::AdvantageComputed);

        let update_batch = UpdateBatch {
            items: rollouts
                .iter()
                .map(|r| UpdateItem {
                    role: r.role,
                    prompt: r.prompt.clone(),
                    completion: r.completion.clone(),
                    advantage: r.advantage.expect("advantage just computed"),
                })
                .collect(),
        };
        let update = match backend.apply_update(&update_batch) {
            Ok(report) => report,
            Err(err) => return self.aborted(step, trace, err),
        };
        trace.push(TraceEvent::UpdateApplied);

        self.question_pool = questions;
        self.pair_pool = pairs;

        let mean = |values: &[f64]| values.iter().sum::<f64>() / values.len().max(1) as f64;
        let solver_rewards: Vec<f64> = rollouts
            .iter()
            .filter(|r| r.role == RoleId::Solver)
            .map(|r| r.reward)
            .collect();
        let proposer_rewards: Vec<f64> = rollouts
            .iter()
            .filter(|r| r.role == RoleId::Proposer)
            .map(|r| r.reward)
            .collect();
        let report = StepReport {
            step,
            proposed,
            admitted: admitted_count,
            pool_size: self.question_pool.len(),
            mean_solver_reward: mean(&solver_rewards),
            mean_difficulty: mean(&difficulties),
            mean_proposer_reward: mean(&proposer_rewards),
            judge_format_rate,
            advantage_stats: stats,
            aborted: false,
            abort_reason: None,
        };
        StepOutcome {
            report,
            trace,
            rollouts,
            update: Some(update),
            aborted_by: None,
        }
    }

    /// Judge verdicts over sampled pairs; when the pair pool offers
    /// nothing, the step's question-quality calls stand in so the judge
    /// still gets format-level training signal.
    fn judge_phase(
        &self,
        backend: &dyn Backend,
        rng: &mut ChaCha8Rng,
        pairs: &PairPool,
        quality_calls: &[QualityCall],
        step: u64,
        trace: &mut Vec<TraceEvent>,
    ) -> Result<(Vec<RolloutRecord>, f64), BackendError> {
        let neutral = self.config.neutral_score;
        let mut rollouts = Vec::new();

        if pairs.is_empty() {
            for call in quality_calls {
                trace.push(TraceEvent::JudgePhase { slot: call.slot });
                let verdict =
                    JudgeVerdict::from_output(VerdictTarget::Question, call.completion.clone(), neutral);
                rollouts.push(RolloutRecord {
                    role: RoleId::Judge,
                    prompt: call.prompt.clone(),
                    completion: call.completion.clone(),
                    reward: judge_total(verdict.format_level).total,
                    advantage: None,
                    step,
                });
            }
        } else {
            let sampled = pairs
                .sample_pairs(rng, self.config.batch_size)
                .expect("pair pool checked non-empty");
            let requests: Vec<GenerationRequest> = sampled
                .iter()
                .map(|pair| {
                    let answer_text = if pair.answer.text.is_empty() {
                        pair.answer.raw_output.as_str()
                    } else {
                        pair.answer.text.as_str()
                    };
                    let prompt = build_prompt(
                        &self.templates.judge_answer,
                        &[
                            ("question", pair.question.text.as_str()),
                            ("answer", answer_text),
                        ],
                    )
                    .expect("template binds question and answer");
                    self.request(RoleId::Judge, prompt, rng.gen())
                })
                .collect();
            let mut results = generate_all(backend, &requests, self.parallelism);
            if let Some(err) = first_error(&mut results) {
                return Err(err);
            }
            for (slot, (request, result)) in requests.iter().zip(results).enumerate() {
                trace.push(TraceEvent::JudgePhase { slot });
                let output = result.expect("errors drained above");
                let verdict = JudgeVerdict::from_output(VerdictTarget::Answer, output.clone(), neutral);
                rollouts.push(RolloutRecord {
                    role: RoleId::Judge,
                    prompt: request.prompt.clone(),
                    completion: output,
                    reward: judge_total(verdict.format_level).total,
                    advantage: None,
                    step,
                });
            }
        }

        let rate = if rollouts.is_empty() {
            0.0
        } else {
            rollouts.iter().map(|r| r.reward).sum::<f64>() / rollouts.len() as f64
        };
        Ok((rollouts, rate))
    }

    fn aborted(&self, step: u64, trace: Vec<TraceEvent>, err: BackendError) -> StepOutcome {
        StepOutcome {
            report: StepReport {
                step,
                proposed: 0,
                admitted: 0,
                pool_size: self.question_pool.len(),
                mean_solver_reward: 0.0,
                mean_difficulty: 0.0,
                mean_proposer_reward: 0.0,
                judge_format_rate: 0.0,
                advantage_stats: BTreeMap::new(),
                aborted: true,
                abort_reason: Some(err.to_string()),
            },
            trace,
            rollouts: Vec::new(),
            update: None,
            aborted_by: Some(err),
        }
    }

    /// Runs (or resumes) the configured number of steps, streaming one
    /// report line per step and snapshotting state on the configured
    /// cadence. An existing run directory resumes from its last snapshot
    /// after verifying the stored config hash; re-executed trailing steps
    /// are truncated from the report stream first.
    pub fn run_training(
        &mut self,
        backend: &mut dyn Backend,
        options: &RunOptions,
    ) -> Result<RunSummary, RunError> {
        self.run_training_with(backend, options, |_| {})
    }

    /// `run_training` with a per-step observer, called after each report
    /// is durably written.
    pub fn run_training_with(
        &mut self,
        backend: &mut dyn Backend,
        options: &RunOptions,
        mut on_step: impl FnMut(&StepReport),
    ) -> Result<RunSummary, RunError> {
        let out_dir = &options.out_dir;
        std::fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
            path: out_dir.display().to_string(),
            source,
        })?;
        let manifest_path = out_dir.join("manifest.json");
        let steps_path = out_dir.join("steps.jsonl");
        let manifest = RunManifest {
            config: self.config.clone(),
            config_hash: config_hash(&self.config),
        };

        let mut start_step = 1u64;
        let mut resumed_from = None;
        if manifest_path.exists() {
            let stored = read_manifest_file(&manifest_path)?;
            if stored.config_hash != manifest.config_hash {
                return Err(RunError::ConfigMismatch {
                    diff: config_diff(&stored.config, &self.config),
                });
            }
            if let Some(snapshot_step) = latest_snapshot(out_dir)? {
                self.restore_snapshot(out_dir, snapshot_step, backend)?;
                start_step = snapshot_step + 1;
                resumed_from = Some(snapshot_step);
                truncate_reports(&steps_path, snapshot_step)?;
            } else {
                truncate_reports(&steps_path, 0)?;
            }
        } else {
            write_line(&manifest_path, &serde_json::to_string(&manifest).unwrap())?;
            write_line(&steps_path, "")?;
        }

        let mut steps_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&steps_path)
            .map_err(|source| RunError::Io {
                path: steps_path.display().to_string(),
                source,
            })?;

        let total = self.config.total_steps;
        let mut executed = 0u64;
        let mut aborted_steps = 0u64;
        let mut stopped_early = false;
        let mut last_completed = start_step.saturating_sub(1);

        for step in start_step..=total {
            if options.step_limit.is_some_and(|limit| executed >= limit) {
                stopped_early = true;
                break;
            }
            let outcome = self.run_training_step(backend, step);
            executed += 1;
            let line = serde_json::to_string(&outcome.report).expect("report serializes");
            writeln!(steps_file, "{line}").map_err(|source| RunError::Io {
                path: steps_path.display().to_string(),
                source,
            })?;
            steps_file.flush().map_err(|source| RunError::Io {
                path: steps_path.display().to_string(),
                source,
            })?;
            on_step(&outcome.report);

            if let Some(err) = outcome.aborted_by {
                aborted_steps += 1;
                // Transient failures skip the step and move on; anything
                // fatal ends the run with its state still resumable.
                if !err.is_degradable() {
                    return Err(RunError::Backend(err));
                }
                continue;
            }
            last_completed = step;
            let cadence_hit = options.snapshot_every > 0 && step % options.snapshot_every == 0;
            if cadence_hit || step == total {
                self.write_snapshot(out_dir, step, backend)?;
            }
        }

        Ok(RunSummary {
            steps_completed: last_completed,
            total_steps: total,
            pool_size: self.question_pool.len(),
            resumed_from,
            aborted_steps,
            stopped_early,
        })
    }

    fn snapshot_dir(out_dir: &Path, step: u64) -> PathBuf {
        out_dir.join("snapshots").join(format!("step_{step:06}"))
    }

    fn write_snapshot(
        &self,
        out_dir: &Path,
        step: u64,
        backend: &dyn Backend,
    ) -> Result<(), RunError> {
        let dir = Self::snapshot_dir(out_dir, step);
        std::fs::create_dir_all(&dir).map_err(|source| RunError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        self.question_pool.snapshot(&dir.join("questions.pool"))?;
        self.pair_pool.snapshot(&dir.join("pairs.pool"))?;
        let state = backend.snapshot_state().unwrap_or(serde_json::Value::Null);
        write_line(
            &dir.join("backend.json"),
            &serde_json::to_string(&state).unwrap(),
        )?;
        // meta.json lands last; a snapshot without it is ignored on resume.
        write_line(
            &dir.join("meta.json"),
            &serde_json::to_string(&serde_json::json!({ "step": step })).unwrap(),
        )?;
        Ok(())
    }

    fn restore_snapshot(
        &mut self,
        out_dir: &Path,
        step: u64,
        backend: &mut dyn Backend,
    ) -> Result<(), RunError> {
        let dir = Self::snapshot_dir(out_dir, step);
        self.question_pool = QuestionPool::restore(&dir.join("questions.pool"))?;
        self.pair_pool = PairPool::restore(&dir.join("pairs.pool"))?;
        let backend_path = dir.join("backend.json");
        let raw = std::fs::read_to_string(&backend_path).map_err(|source| RunError::Io {
            path: backend_path.display().to_string(),
            source,
        })?;
        let state: serde_json::Value =
            serde_json::from_str(raw.trim()).map_err(|e| RunError::Corrupt {
                path: backend_path.display().to_string(),
                message: e.to_string(),
            })?;
        if !state.is_null() {
            backend.restore_state(&state)?;
        }
        Ok(())
    }
}

fn write_line(path: &Path, line: &str) -> Result<(), RunError> {
    let text = if line.is_empty() {
        String::new()
    } else {
        format!("{line}\n")
    };
    std::fs::write(path, text).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_manifest_file(path: &Path) -> Result<RunManifest, RunError> {
    let raw = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(raw.trim()).map_err(|e| RunError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Highest step among snapshot directories holding a readable meta.json.
fn latest_snapshot(out_dir: &Path) -> Result<Option<u64>, RunError> {
    let snapshots = out_dir.join("snapshots");
    if !snapshots.exists() {
        return Ok(None);
    }
    let mut best = None;
    let entries = std::fs::read_dir(&snapshots).map_err(|source| RunError::Io {
        path: snapshots.display().to_string(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| RunError::Io {
            path: snapshots.display().to_string(),
            source,
        })?;
        let meta_path = entry.path().join("meta.json");
        let Ok(raw) = std::fs::read_to_string(&meta_path) else {
            continue;
        };
        let Ok(meta) = serde_json::from_str::<serde_json::Value>(raw.trim()) else {
            continue;
        };
        if let Some(step) = meta.get("step").and_then(|v| v.as_u64()) {
            best = best.max(Some(step));
        }
    }
    Ok(best)
}

/// Drops report lines beyond `keep_through` so re-executed steps are not
/// duplicated in the stream.
fn truncate_reports(path: &Path, keep_through: u64) -> Result<(), RunError> {
    if !path.exists() {
        return write_line(path, "");
    }
    let io_err = |source| RunError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let report: StepReport = serde_json::from_str(&line).map_err(|e| RunError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if report.step <= keep_through {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(io_err)
}

/// Reads a run directory's manifest.
pub fn read_run_manifest(out_dir: &Path) -> Result<RunManifest, RunError> {
    read_manifest_file(&out_dir.join("manifest.json"))
}

/// Reads a run's report stream back, in order.
pub fn read_step_reports(out_dir: &Path) -> Result<Vec<StepReport>, RunError> {
    let path = out_dir.join("steps.jsonl");
    let io_err = |source| RunError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(&path).map_err(io_err)?;
    let mut reports = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let report: StepReport = serde_json::from_str(&line).map_err(|e| RunError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        reports.push(report);
    }
    Ok(reports)
}
