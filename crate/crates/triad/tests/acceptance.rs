//! The exit gate: ten numbered end-to-end checks, each with an explicit
//! time budget and an independently coded oracle where arithmetic is
//! involved. Every check prints one PASS/FAIL line (visible with
//! --nocapture; the harness line per test carries the same verdict).

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triad::advantage::{compute_role_advantages, DEFAULT_EPSILON};
use triad::backend::{
    Backend, BackendError, GenerationRequest, ReferencePolicy, ReferencePolicyParams,
    RoleRoutingBackend, ScriptRule, ScriptedBackend, UpdateBatch, UpdateReport,
};
use triad::domain::{
    JudgeVerdict, RoleId, RolloutRecord, SolverWeights, TrainConfig, VerdictTarget,
};
use triad::eval::{EvalCategory, EvalHarness, EvalItem};
use triad::orchestrator::{Orchestrator, RunOptions, TraceEvent};
use triad::pools::QuestionPool;
use triad::reward::{difficulty_reward, judge_total, mean_solve_score, proposer_total, solver_total};
use triad::seeds::{bundled_seed_manifest, source_counts, SeedRecord};
use triad::tags::{extract_tagged, format_reward, parse_score, FormatLevel, GraderVerdict};

fn check(number: u8, name: &str, budget: Duration, body: impl FnOnce()) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let ok = result.is_ok() && elapsed <= budget;
    println!(
        "criterion {number:02} {name}: {} ({elapsed:.2?} of {budget:?})",
        if ok { "PASS" } else { "FAIL" }
    );
    if let Err(panic) = result {
        std::panic::resume_unwind(panic);
    }
    assert!(
        elapsed <= budget,
        "criterion {number} blew its {budget:?} budget: took {elapsed:?}"
    );
}

fn seeds(n: usize) -> Vec<SeedRecord> {
    (0..n)
        .map(|i| SeedRecord {
            text: format!("Starter question number {i}?"),
            source: "acceptance".into(),
        })
        .collect()
}

#[test]
fn criterion_01_format_reward_truth_table() {
    check(1, "format reward truth table", Duration::from_secs(1), || {
        let cases = [(0usize, 0.0), (1, 1.0), (2, 0.5), (5, 0.5)];
        for tag in ["question", "answer", "score"] {
            for (count, expected) in cases {
                // Valid content throughout; score content must be a 1-10
                // integer to count as well-formed.
                let mut text = String::from("preamble ");
                for i in 0..count {
                    let body = if tag == "score" {
                        "7".to_string()
                    } else {
                        format!("content {i}")
                    };
                    text.push_str(&format!("<{tag}>{body}</{tag}> filler "));
                }
                let level = format_reward(&extract_tagged(&text, tag));
                assert_eq!(
                    level.value(),
                    expected,
                    "tag {tag} with {count} pairs graded {level:?}"
                );
                if tag == "score" {
                    assert_eq!(parse_score(&text, 0.5).format_level, level);
                }
            }
        }
        // Exhaustive sweep: every count above one grades 0.5.
        for count in 2..=16usize {
            let text = "<answer>x</answer> ".repeat(count);
            assert_eq!(format_reward(&extract_tagged(&text, "answer")).value(), 0.5);
        }
    });
}

#[test]
fn criterion_02_reward_arithmetic_matches_an_independent_oracle() {
    check(2, "reward arithmetic oracle", Duration::from_secs(1), || {
        let weights = triad::domain::RewardWeights::default();
        let levels = [FormatLevel::Missing, FormatLevel::ExactlyOne, FormatLevel::Multiple];
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
        for _ in 0..1000 {
            let quality: f64 = rng.gen();
            let difficulty: f64 = rng.gen();
            let judge: f64 = rng.gen();
            let level = levels[rng.gen_range(0..levels.len())];
            let format = level.value();

            // Oracle coded as plain literal arithmetic, not weight lookups.
            let proposer_oracle = (quality + difficulty + format) / 3.0;
            let solver_oracle = (judge + format) / 2.0;
            let judge_oracle = format;

            let proposer = proposer_total(quality, difficulty, level, &weights).total;
            let solver = solver_total(judge, level, &weights).total;
            let judge_reward = judge_total(level).total;
            assert!(
                (proposer - proposer_oracle).abs() <= 1e-12,
                "proposer {proposer} vs oracle {proposer_oracle}"
            );
            assert!(
                (solver - solver_oracle).abs() <= 1e-12,
                "solver {solver} vs oracle {solver_oracle}"
            );
            assert_eq!(judge_reward, judge_oracle);
        }

        // The difficulty complement holds exactly, both on raw means and on
        // means assembled from parsed verdicts.
        for _ in 0..1000 {
            let mean: f64 = rng.gen();
            assert_eq!(difficulty_reward(mean) + mean, 1.0, "mean {mean}");
        }
        for _ in 0..200 {
            let n = rng.gen_range(1..=8usize);
            let verdicts: Vec<JudgeVerdict> = (0..n)
                .map(|_| {
                    let score = rng.gen_range(1..=10u8);
                    JudgeVerdict::from_output(
                        VerdictTarget::Answer,
                        format!("<score>{score}</score>"),
                        0.5,
                    )
                })
                .collect();
            let mean = mean_solve_score(&verdicts, n).unwrap().value;
            assert_eq!(difficulty_reward(mean) + mean, 1.0, "verdict mean {mean}");
        }
    });
}

fn scripted(proposer: &str, judge: &str) -> ScriptedBackend {
    ScriptedBackend::new(vec![
        ScriptRule::for_role(RoleId::Proposer, proposer),
        ScriptRule::for_role(RoleId::Solver, "<answer>An attempt at {seed}.</answer>"),
        ScriptRule::for_role(RoleId::Judge, judge),
    ])
}

#[test]
fn criterion_03_quality_filter_threshold_and_monotone_pool() {
    check(3, "quality filter and pool growth", Duration::from_secs(5), || {
        for (score, expected_admissions) in [(6u8, 0usize), (7, 1), (8, 1)] {
            let pool = QuestionPool::ingest_seed(&seeds(3), false).unwrap();
            let config = TrainConfig {
                total_steps: 1,
                batch_size: 1,
                n_difficulty_samples: 2,
                rng_seed: 40 + u64::from(score),
                ..TrainConfig::default()
            };
            assert_eq!(config.quality_threshold, 0.7);
            let mut orchestrator = Orchestrator::new(config, pool).unwrap();
            let mut backend = scripted(
                "<question>Does a judge score of {seed} pass?</question>",
                &format!("<score>{score}</score>"),
            );
            let outcome = orchestrator.run_training_step(&mut backend, 1);
            assert!(!outcome.report.aborted);
            assert_eq!(
                outcome.report.admitted, expected_admissions,
                "score {score} admitted {}",
                outcome.report.admitted
            );
        }

        // Fifty compliant steps: the pool never shrinks and does grow.
        let pool = QuestionPool::ingest_seed(&seeds(3), false).unwrap();
        let config = TrainConfig {
            total_steps: 50,
            batch_size: 2,
            n_difficulty_samples: 2,
            rng_seed: 17,
            ..TrainConfig::default()
        };
        let mut orchestrator = Orchestrator::new(config, pool).unwrap();
        let mut backend = scripted(
            "<question>Variation {seed} of the starter?</question>",
            "<score>8</score>",
        );
        let mut sizes = Vec::with_capacity(50);
        for step in 1..=50 {
            let outcome = orchestrator.run_training_step(&mut backend, step);
            assert!(!outcome.report.aborted);
            sizes.push(outcome.report.pool_size);
        }
        assert!(
            sizes.windows(2).all(|w| w[0] <= w[1]),
            "pool sizes must be monotone non-decreasing: {sizes:?}"
        );
        assert!(sizes[49] > sizes[0], "a compliant run must grow the pool");
    });
}

#[test]
fn criterion_04_advantage_normalization_per_role() {
    check(4, "advantage normalization", Duration::from_secs(1), || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rollout = |role: RoleId, reward: f64| RolloutRecord {
            role,
            prompt: String::new(),
            completion: String::new(),
            reward,
            advantage: None,
            step: 1,
        };
        let mut records = Vec::new();
        for (role, count) in [(RoleId::Proposer, 17), (RoleId::Solver, 9), (RoleId::Judge, 23)] {
            for _ in 0..count {
                records.push(rollout(role, rng.gen::<f64>()));
            }
        }
        compute_role_advantages(&mut records, DEFAULT_EPSILON).unwrap();
        for role in RoleId::ALL {
            let advantages: Vec<f64> = records
                .iter()
                .filter(|r| r.role == role)
                .map(|r| r.advantage.unwrap())
                .collect();
            let n = advantages.len() as f64;
            let mean = advantages.iter().sum::<f64>() / n;
            let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-9, "{role} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 1e-6, "{role} std {}", var.sqrt());
        }

        // Zero variance collapses to exactly zero advantages.
        let mut flat: Vec<RolloutRecord> = (0..12).map(|_| rollout(RoleId::Solver, 0.75)).collect();
        compute_role_advantages(&mut flat, DEFAULT_EPSILON).unwrap();
        assert!(flat.iter().all(|r| r.advantage == Some(0.0)));

        // Role isolation: perturbing one solver reward must not move any
        // proposer or judge advantage by a single bit.
        let mut base: Vec<RolloutRecord> = Vec::new();
        for (role, count) in [(RoleId::Proposer, 8), (RoleId::Solver, 8), (RoleId::Judge, 8)] {
            for _ in 0..count {
                base.push(rollout(role, rng.gen::<f64>()));
            }
        }
        let mut perturbed: Vec<RolloutRecord> = base.clone();
        let solver_index = perturbed
            .iter()
            .position(|r| r.role == RoleId::Solver)
            .unwrap();
        perturbed[solver_index].reward = 1.0 - perturbed[solver_index].reward * 0.5;
        compute_role_advantages(&mut base, DEFAULT_EPSILON).unwrap();
        compute_role_advantages(&mut perturbed, DEFAULT_EPSILON).unwrap();
        for (a, b) in base.iter().zip(&perturbed) {
            if a.role != RoleId::Solver {
                assert_eq!(
                    a.advantage.unwrap().to_bits(),
                    b.advantage.unwrap().to_bits(),
                    "{:?} advantage moved under a solver perturbation",
                    a.role
                );
            }
        }
        let solver_moved = base
            .iter()
            .zip(&perturbed)
            .any(|(a, b)| a.role == RoleId::Solver && a.advantage != b.advantage);
        assert!(solver_moved, "the perturbation itself must show up");
    });
}

#[test]
fn criterion_05_analytic_gradient_matches_finite_differences() {
    check(5, "softmax policy gradient check", Duration::from_secs(5), || {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut draws = 0;
        while draws < 120 {
            let role = RoleId::ALL[rng.gen_range(0..3)];
            let k = rng.gen_range(2..=5usize);
            let actions: Vec<String> = (0..k).map(|i| format!("action-{i}")).collect();
            let mut vocab = BTreeMap::new();
            vocab.insert(role, actions.clone());
            let mut policy =
                ReferencePolicy::new(ReferencePolicyParams::new(vocab, 0.1)).unwrap();

            // Random parameter point, installed through the public
            // snapshot/restore surface.
            let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut state = policy.snapshot_state().unwrap();
            state["tables"][role.name()]["logits"] = serde_json::json!(logits);
            policy.restore_state(&state).unwrap();

            let action = &actions[rng.gen_range(0..k)];
            let (_, analytic) = policy.logprob_and_grad(role, action).unwrap();

            let logprob_at = |theta: &[f64]| -> f64 {
                let mut probe = state.clone();
                probe["tables"][role.name()]["logits"] = serde_json::json!(theta);
                let mut p =
                    ReferencePolicy::new(ReferencePolicyParams::new(
                        BTreeMap::from([(role, actions.clone())]),
                        0.1,
                    ))
                    .unwrap();
                p.restore_state(&probe).unwrap();
                p.logprob_and_grad(role, action).unwrap().0
            };
            for j in 0..k {
                let mut plus = logits.clone();
                plus[j] += h;
                let mut minus = logits.clone();
                minus[j] -= h;
                let fd = (logprob_at(&plus) - logprob_at(&minus)) / (2.0 * h);
                let tolerance = 1e-6 * analytic[j].abs().max(1.0);
                assert!(
                    (fd - analytic[j]).abs() <= tolerance,
                    "component {j}: analytic {} vs central difference {fd}",
                    analytic[j]
                );
            }
            draws += 1;
        }
    });
}

#[test]
fn criterion_06_closed_loop_training_beats_the_uniform_policy() {
    check(6, "closed-loop improvement", Duration::from_secs(60), || {
        // Bandit-shaped task: one fixed question, three solver responses
        // the judge values at 0.2 / 0.5 / 0.9.
        let seed_text = "Choose the strongest option.";
        let uniform_mean: f64 = (0.2 + 0.5 + 0.9) / 3.0;
        assert!((uniform_mean - 0.5333333333333333_f64).abs() <= 1e-12);

        let pool = QuestionPool::ingest_seed(
            &[SeedRecord {
                text: seed_text.into(),
                source: "bandit".into(),
            }],
            false,
        )
        .unwrap();
        let mut config = TrainConfig {
            total_steps: 200,
            batch_size: 16,
            n_difficulty_samples: 2,
            rng_seed: 66,
            ..TrainConfig::default()
        };
        // Mean solver reward is then exactly the mean judged score.
        config.weights.solver = SolverWeights {
            judge: 1.0,
            format: 0.0,
        };

        let proposer = ScriptedBackend::new(vec![ScriptRule::for_role(
            RoleId::Proposer,
            format!("<question>{seed_text}</question>"),
        )]);
        let solver = ReferencePolicy::new(ReferencePolicyParams::new(
            BTreeMap::from([(
                RoleId::Solver,
                vec![
                    "<answer>alpha</answer>".to_string(),
                    "<answer>beta</answer>".to_string(),
                    "<answer>gamma</answer>".to_string(),
                ],
            )]),
            0.05,
        ))
        .unwrap();
        let judge = ScriptedBackend::new(vec![
            ScriptRule::matching(RoleId::Judge, "alpha", "<score>2</score>"),
            ScriptRule::matching(RoleId::Judge, "beta", "<score>5</score>"),
            ScriptRule::matching(RoleId::Judge, "gamma", "<score>9</score>"),
        ])
        .with_fallback("<score>8</score>");
        let mut backend =
            RoleRoutingBackend::three_way(Box::new(proposer), Box::new(solver), Box::new(judge));

        let mut orchestrator = Orchestrator::new(config, pool).unwrap();
        let mut first_mean = None;
        let mut last_mean = 0.0;
        for step in 1..=200 {
            let outcome = orchestrator.run_training_step(&mut backend, step);
            assert!(!outcome.report.aborted, "step {step} aborted");
            assert_eq!(
                outcome.report.pool_size, 1,
                "the fixed question is a duplicate and must never be admitted"
            );
            first_mean.get_or_insert(outcome.report.mean_solver_reward);
            last_mean = outcome.report.mean_solver_reward;
        }
        let first_mean = first_mean.unwrap();
        assert!(
            (first_mean - uniform_mean).abs() <= 0.2,
            "untrained batch should sit near the uniform value {uniform_mean:.4}, got {first_mean:.4}"
        );
        assert!(
            last_mean >= 0.85,
            "trained mean solver reward {last_mean:.4} below 0.85 (uniform is {uniform_mean:.4})"
        );
    });
}

/// Counts update calls while delegating everything to an inner backend.
struct CountingBackend<B: Backend> {
    inner: B,
    updates: usize,
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.inner.generate(request)
    }

    fn apply_update(&mut self, batch: &UpdateBatch) -> Result<UpdateReport, BackendError> {
        self.updates += 1;
        self.inner.apply_update(batch)
    }

    fn kind(&self) -> &'static str {
        "counting"
    }
}

#[test]
fn criterion_07_step_trace_follows_the_algorithm_order() {
    check(7, "single-step phase order", Duration::from_secs(5), || {
        let pool = QuestionPool::ingest_seed(&seeds(2), false).unwrap();
        let config = TrainConfig {
            total_steps: 1,
            batch_size: 1,
            rng_seed: 7,
            ..TrainConfig::default()
        };
        assert_eq!(config.n_difficulty_samples, 5);
        let mut orchestrator = Orchestrator::new(config, pool).unwrap();
        let mut backend = CountingBackend {
            inner: scripted("<question>Trace {seed}?</question>", "<score>8</score>"),
            updates: 0,
        };
        let outcome = orchestrator.run_training_step(&mut backend, 1);
        assert!(!outcome.report.aborted);

        // Independently constructed expectation, straight from the phase
        // order: propose, judge quality, five difficulty samples,
        // admission, solver generate + judge, judge phase, advantages,
        // one update.
        let mut expected = vec![
            TraceEvent::Propose { slot: 0 },
            TraceEvent::JudgeQuality { slot: 0 },
        ];
        for sample in 0..5 {
            expected.push(TraceEvent::DifficultySample { slot: 0, sample });
        }
        expected.extend([
            TraceEvent::Admission {
                slot: 0,
                admitted: true,
            },
            TraceEvent::SolverGenerate { slot: 0 },
            TraceEvent::SolverJudge { slot: 0 },
            TraceEvent::JudgePhase { slot: 0 },
            TraceEvent::AdvantageComputed,
            TraceEvent::UpdateApplied,
        ]);
        assert_eq!(outcome.trace, expected);
        assert_eq!(backend.updates, 1, "exactly one synchronized update per step");
        assert_eq!(
            outcome
                .trace
                .iter()
                .filter(|e| matches!(e, TraceEvent::UpdateApplied))
                .count(),
            1
        );
    });
}

#[test]
fn criterion_08_deterministic_transcripts_and_resume() {
    check(8, "determinism and resume", Duration::from_secs(30), || {
        let config = TrainConfig {
            total_steps: 10,
            batch_size: 2,
            n_difficulty_samples: 2,
            rng_seed: 88,
            ..TrainConfig::default()
        };
        let run = |options: &RunOptions| {
            let pool = QuestionPool::ingest_seed(&seeds(4), false).unwrap();
            let mut orchestrator = Orchestrator::new(config.clone(), pool).unwrap();
            let mut backend = scripted("<question>Run {seed}?</question>", "<score>8</score>");
            orchestrator.run_training(&mut backend, options).unwrap()
        };

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let options = |dir: &std::path::Path, limit: Option<u64>| RunOptions {
            out_dir: dir.to_path_buf(),
            snapshot_every: 1,
            step_limit: limit,
        };
        run(&options(dir_a.path(), None));
        run(&options(dir_b.path(), None));
        let stream_a = std::fs::read(dir_a.path().join("steps.jsonl")).unwrap();
        let stream_b = std::fs::read(dir_b.path().join("steps.jsonl")).unwrap();
        assert_eq!(stream_a, stream_b, "identical seeds must give identical bytes");

        // Interrupt after 4 steps, then resume in a fresh process-alike.
        let dir_c = tempfile::tempdir().unwrap();
        let summary = run(&options(dir_c.path(), Some(4)));
        assert!(summary.stopped_early);
        let summary = run(&options(dir_c.path(), None));
        assert_eq!(summary.resumed_from, Some(4));
        assert_eq!(summary.steps_completed, 10);
        let stream_c = std::fs::read(dir_c.path().join("steps.jsonl")).unwrap();
        assert_eq!(stream_c, stream_a, "resume must reproduce the transcript");
    });
}

#[test]
fn criterion_09_seed_manifest_ingests_to_exactly_967() {
    check(9, "seed ingestion", Duration::from_secs(1), || {
        let records = bundled_seed_manifest();
        let expected: BTreeMap<String, usize> = [
            ("CommonsenseQA", 70),
            ("TriviaQA", 71),
            ("Natural Questions", 79),
            ("OpenBookQA", 75),
            ("BoolQ", 88),
            ("SQuAD", 82),
            ("MATH", 84),
            ("Hellaswag", 90),
            ("GSM8K", 77),
            ("GPQA", 69),
            ("MBPP", 53),
            ("ARC-Challenge", 78),
            ("MMLU", 69),
            ("HumanEval", 15),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        assert_eq!(source_counts(&records), expected);
        let pool = QuestionPool::ingest_seed(&records, false).unwrap();
        assert_eq!(pool.len(), 967, "unique questions after dedup");
    });
}

#[test]
fn criterion_10_eval_harness_matches_a_known_fixture() {
    check(10, "eval harness fixture", Duration::from_secs(5), || {
        let categories = [
            EvalCategory::Math,
            EvalCategory::MultipleChoice,
            EvalCategory::Truthfulness,
            EvalCategory::General,
        ];
        let items: Vec<EvalItem> = (0..20)
            .map(|i| EvalItem {
                question: format!("fixture-{i:02} asks something"),
                ground_truth: format!("truth {i}"),
                category: categories[i % 4],
            })
            .collect();
        let answers: Vec<String> = (0..20).map(|i| format!("answer {i}")).collect();

        // Twelve graded TRUE, six FALSE, two outputs with no verdict tag.
        let expected: Vec<GraderVerdict> = (0..20)
            .map(|i| match i {
                0..=11 => GraderVerdict::True,
                12..=17 => GraderVerdict::False,
                _ => GraderVerdict::Unparsable,
            })
            .collect();
        let rules: Vec<ScriptRule> = (0..20)
            .map(|i| {
                let response = match expected[i] {
                    GraderVerdict::True => "<answer>TRUE</answer>",
                    GraderVerdict::False => "reasoning first <answer>FALSE</answer>",
                    GraderVerdict::Unparsable => "I cannot decide.",
                };
                ScriptRule::matching(RoleId::Judge, format!("fixture-{i:02}"), response)
            })
            .collect();
        let grader = ScriptedBackend::new(rules);

        let harness = EvalHarness::new();
        let run = harness.evaluate_set(&items, &answers, &grader, 4).unwrap();
        assert_eq!(run.report.total, 20);
        assert_eq!(run.report.correct, 12);
        assert_eq!(run.report.incorrect, 6);
        assert_eq!(run.report.unparsable, 2);
        assert_eq!(run.report.accuracy, 12.0 / 20.0);
        assert_eq!(run.grades.len(), 20);
        for (i, grade) in run.grades.iter().enumerate() {
            assert_eq!(grade.index, i, "grades must come back in item order");
            assert_eq!(grade.verdict, expected[i], "item {i}");
        }
    });
}
