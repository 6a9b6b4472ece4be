//! Browser surface for the demo page: three functions taking and returning
//! JSON strings, so the page needs no generated TypeScript glue beyond the
//! wasm-bindgen loader. Every function returns `{"error": "..."}` instead of
//! throwing, which keeps the vanilla-JS caller to one code path.
//!
//! The crate is plain Rust apart from the `#[wasm_bindgen]` attributes, so
//! the full test suite runs on the host as well as under wasm.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

use triad::advantage::{compute_role_advantages, DEFAULT_EPSILON};
use triad::backend::{
    Backend, ReferencePolicy, ReferencePolicyParams, RoleRoutingBackend, ScriptRule,
    ScriptedBackend,
};
use triad::domain::{RoleId, RolloutRecord, SolverWeights, TrainConfig};
use triad::orchestrator::Orchestrator;
use triad::pools::QuestionPool;
use triad::seeds::SeedRecord;
use triad::tags::{extract_tagged, format_reward, parse_score, parse_verdict, FormatLevel, GraderVerdict};

fn error_json(message: impl std::fmt::Display) -> String {
    json!({ "error": message.to_string() }).to_string()
}

fn level_name(level: FormatLevel) -> &'static str {
    match level {
        FormatLevel::ExactlyOne => "exactly_one",
        FormatLevel::Multiple => "multiple",
        FormatLevel::Missing => "missing",
    }
}

/// One solver option the scripted judge knows how to score.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoAction {
    answer: String,
    score: u8,
}

/// Page-facing knobs for a closed-loop run. Everything has a default so the
/// page can start from `{}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DemoConfig {
    steps: u64,
    batch_size: usize,
    rng_seed: u64,
    learning_rate: f64,
    question: String,
    actions: Vec<DemoAction>,
    /// Weight on the judged score inside the solver reward; the remainder
    /// goes to format compliance. 1.0 makes the reward curve read directly
    /// as "mean judged score".
    judge_weight: f64,
    /// Record every Nth step in the output series (the final step is always
    /// recorded).
    sample_every: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            steps: 80,
            batch_size: 8,
            rng_seed: 7,
            learning_rate: 0.05,
            question: "Which of the known options is the strongest?".into(),
            actions: vec![
                DemoAction { answer: "a cautious guess".into(), score: 2 },
                DemoAction { answer: "a plausible answer".into(), score: 5 },
                DemoAction { answer: "the precise solution".into(), score: 9 },
            ],
            judge_weight: 1.0,
            sample_every: 1,
        }
    }
}

impl DemoConfig {
    fn validate(&self) -> Result<(), String> {
        if !(1..=2000).contains(&self.steps) {
            return Err(format!("steps must be 1..=2000, got {}", self.steps));
        }
        if !(1..=64).contains(&self.batch_size) {
            return Err(format!("batch_size must be 1..=64, got {}", self.batch_size));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0 && self.learning_rate <= 10.0) {
            return Err(format!("learning_rate must be in (0, 10], got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.judge_weight) {
            return Err(format!("judge_weight must be in [0, 1], got {}", self.judge_weight));
        }
        if self.sample_every == 0 {
            return Err("sample_every must be at least 1".into());
        }
        if self.question.trim().is_empty() {
            return Err("question must not be empty".into());
        }
        if !(2..=8).contains(&self.actions.len()) {
            return Err(format!("need 2..=8 actions, got {}", self.actions.len()));
        }
        for (i, action) in self.actions.iter().enumerate() {
            let text = action.answer.trim();
            if text.is_empty() {
                return Err(format!("action {i} has an empty answer"));
            }
            if action.answer.contains('<') || action.answer.contains('>') {
                return Err(format!("action {i} must not contain angle brackets"));
            }
            if !(1..=10).contains(&action.score) {
                return Err(format!("action {i} score must be 1..=10, got {}", action.score));
            }
            // The judge matches by substring, so overlapping texts would
            // misroute scores.
            if self.question.contains(&action.answer) {
                return Err(format!("action {i} appears inside the question text"));
            }
            for (j, other) in self.actions.iter().enumerate() {
                if i != j && other.answer.contains(&action.answer) {
                    return Err(format!("action {i} is a substring of action {j}"));
                }
            }
        }
        Ok(())
    }
}

fn demo_run(config_json: &str) -> Result<serde_json::Value, String> {
    let demo: DemoConfig = if config_json.trim().is_empty() {
        DemoConfig::default()
    } else {
        serde_json::from_str(config_json).map_err(|e| format!("config: {e}"))?
    };
    demo.validate()?;

    let mut config = TrainConfig {
        total_steps: demo.steps,
        batch_size: demo.batch_size,
        n_difficulty_samples: 2,
        rng_seed: demo.rng_seed,
        ..TrainConfig::default()
    };
    config.weights.solver = SolverWeights {
        judge: demo.judge_weight,
        format: 1.0 - demo.judge_weight,
    };

    let pool = QuestionPool::ingest_seed(
        &[SeedRecord {
            text: demo.question.clone(),
            source: "demo".into(),
        }],
        false,
    )
    .map_err(|e| e.to_string())?;

    // A constant proposer re-emitting the lone seed keeps the pool pinned:
    // the run is then a clean bandit over the solver's options.
    let proposer = ScriptedBackend::new(vec![ScriptRule::for_role(
        RoleId::Proposer,
        format!("<question>{}</question>", demo.question),
    )]);
    let actions: Vec<String> = demo
        .actions
        .iter()
        .map(|a| format!("<answer>{}</answer>", a.answer))
        .collect();
    let params = ReferencePolicyParams::new(
        BTreeMap::from([(RoleId::Solver, actions)]),
        demo.learning_rate,
    );
    let solver = ReferencePolicy::new(params.clone()).map_err(|e| e.to_string())?;
    let mut judge_rules: Vec<ScriptRule> = demo
        .actions
        .iter()
        .map(|a| {
            ScriptRule::matching(RoleId::Judge, a.answer.clone(), format!("<score>{}</score>", a.score))
        })
        .collect();
    judge_rules.push(ScriptRule::for_role(RoleId::Judge, "<score>8</score>"));
    let judge = ScriptedBackend::new(judge_rules);
    let mut backend =
        RoleRoutingBackend::three_way(Box::new(proposer), Box::new(solver), Box::new(judge));

    let mut orchestrator = Orchestrator::new(config, pool).map_err(|e| e.to_string())?;

    let solver_distribution = |backend: &RoleRoutingBackend| -> Result<Vec<f64>, String> {
        let state = backend
            .backend(RoleId::Solver)
            .and_then(|b| b.snapshot_state())
            .ok_or_else(|| "solver state unavailable".to_string())?;
        let mut probe = ReferencePolicy::new(params.clone()).map_err(|e| e.to_string())?;
        probe.restore_state(&state).map_err(|e| e.to_string())?;
        probe.distribution(RoleId::Solver).map_err(|e| e.to_string())
    };

    let mut series = Vec::new();
    for step in 1..=demo.steps {
        let outcome = orchestrator.run_training_step(&mut backend, step);
        if outcome.report.aborted {
            return Err(format!(
                "step {step} aborted: {}",
                outcome.report.abort_reason.as_deref().unwrap_or("unknown")
            ));
        }
        if step % demo.sample_every == 0 || step == demo.steps {
            series.push(json!({
                "step": step,
                "mean_solver_reward": outcome.report.mean_solver_reward,
                "mean_proposer_reward": outcome.report.mean_proposer_reward,
                "judge_format_rate": outcome.report.judge_format_rate,
                "pool_size": outcome.report.pool_size,
                "distribution": solver_distribution(&backend)?,
            }));
        }
    }

    let final_distribution = solver_distribution(&backend)?;
    let answers: Vec<&str> = demo.actions.iter().map(|a| a.answer.as_str()).collect();
    let scores: Vec<f64> = demo.actions.iter().map(|a| f64::from(a.score) / 10.0).collect();
    let uniform_mean = scores
        .iter()
        .map(|s| demo.judge_weight * s + (1.0 - demo.judge_weight))
        .sum::<f64>()
        / scores.len() as f64;
    let argmax = |values: &[f64]| {
        values
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    };
    Ok(json!({
        "actions": answers,
        "scores": scores,
        "uniform_mean": uniform_mean,
        "steps": series,
        "final_distribution": final_distribution,
        "best_action": answers[argmax(&scores)],
        "learned_action": answers[argmax(&final_distribution)],
    }))
}

/// Runs a self-contained closed-loop training run (scripted proposer and
/// judge, trainable softmax solver) and returns the reward and policy
/// series as JSON.
#[wasm_bindgen]
pub fn run_demo_training(config_json: &str) -> String {
    match demo_run(config_json) {
        Ok(value) => value.to_string(),
        Err(message) => error_json(message),
    }
}

/// Extracts `<tag>...</tag>` segments from free text and grades format
/// compliance; for `score` and `answer` tags the parsed judge score or
/// grader verdict is included.
#[wasm_bindgen]
pub fn analyze_tags(text: &str, tag: &str) -> String {
    let tag = tag.trim();
    if tag.is_empty() || !tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return error_json("tag must be non-empty ascii alphanumeric/underscore");
    }
    let extraction = extract_tagged(text, tag);
    let level = format_reward(&extraction);
    let mut out = json!({
        "tag": tag,
        "segments": extraction.segments,
        "well_formed_count": extraction.well_formed_count,
        "format_level": level_name(level),
        "format_value": level.value(),
    });
    if tag == "score" {
        let parse = parse_score(text, 0.5);
        out["score"] = json!({
            "raw_score": parse.raw_score,
            "normalized": parse.normalized,
            "parse_failed": parse.parse_failed,
            "format_level": level_name(parse.format_level),
        });
    }
    if tag == "answer" {
        let verdict = match parse_verdict(text) {
            GraderVerdict::True => "true",
            GraderVerdict::False => "false",
            GraderVerdict::Unparsable => "unparsable",
        };
        out["grader_verdict"] = json!(verdict);
    }
    out.to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardEntry {
    role: RoleId,
    reward: f64,
}

fn normalize(rewards_json: &str) -> Result<serde_json::Value, String> {
    let entries: Vec<RewardEntry> =
        serde_json::from_str(rewards_json).map_err(|e| format!("rewards: {e}"))?;
    let mut records: Vec<RolloutRecord> = entries
        .iter()
        .map(|e| RolloutRecord {
            role: e.role,
            prompt: String::new(),
            completion: String::new(),
            reward: e.reward,
            advantage: None,
            step: 0,
        })
        .collect();
    let stats =
        compute_role_advantages(&mut records, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let records: Vec<serde_json::Value> = records
        .iter()
        .map(|r| {
            json!({
                "role": r.role.name(),
                "reward": r.reward,
                "advantage": r.advantage,
            })
        })
        .collect();
    let stats: BTreeMap<&str, serde_json::Value> = stats
        .iter()
        .map(|(role, s)| {
            (
                role.name(),
                json!({ "mean": s.mean, "std": s.std, "count": s.count }),
            )
        })
        .collect();
    Ok(json!({ "records": records, "stats": stats }))
}

/// Normalizes a batch of `{role, reward}` entries to per-role advantages,
/// returning the filled records plus each role's batch statistics.
#[wasm_bindgen]
pub fn normalize_advantages(rewards_json: &str) -> String {
    match normalize(rewards_json) {
        Ok(value) => value.to_string(),
        Err(message) => error_json(message),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(s: String) -> serde_json::Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn default_demo_learns_the_best_action() {
        let out = parsed(run_demo_training("{}"));
        assert!(out.get("error").is_none(), "{out}");
        assert_eq!(out["best_action"], "the precise solution");
        assert_eq!(out["learned_action"], "the precise solution");
        let steps = out["steps"].as_array().unwrap();
        assert_eq!(steps.len(), 80);
        let first = steps[0]["mean_solver_reward"].as_f64().unwrap();
        let last = steps[79]["mean_solver_reward"].as_f64().unwrap();
        assert!(last > first, "reward must improve: {first} -> {last}");
        assert!(last >= 0.8, "trained reward {last}");
        let distribution = out["final_distribution"].as_array().unwrap();
        assert_eq!(distribution.len(), 3);
        let best = distribution[2].as_f64().unwrap();
        assert!(best > 0.8, "best-action probability {best}");
        // The lone demo question is a duplicate of itself; the pool never
        // grows.
        assert!(steps.iter().all(|s| s["pool_size"] == 1));
    }

    #[test]
    fn demo_respects_sampling_and_custom_actions() {
        let config = serde_json::json!({
            "steps": 30,
            "batch_size": 4,
            "rng_seed": 11,
            "sample_every": 10,
            "actions": [
                {"answer": "first choice", "score": 3},
                {"answer": "second choice", "score": 8},
            ],
        })
        .to_string();
        let out = parsed(run_demo_training(&config));
        assert!(out.get("error").is_none(), "{out}");
        let steps = out["steps"].as_array().unwrap();
        let recorded: Vec<u64> = steps.iter().map(|s| s["step"].as_u64().unwrap()).collect();
        assert_eq!(recorded, vec![10, 20, 30]);
        assert_eq!(out["best_action"], "second choice");
    }

    #[test]
    fn demo_config_errors_come_back_as_json() {
        for bad in [
            "{\"steps\": 0}",
            "{\"actions\": [{\"answer\": \"only one\", \"score\": 5}]}",
            "{\"actions\": [{\"answer\": \"x\", \"score\": 5}, {\"answer\": \"xy\", \"score\": 6}]}",
            "{\"judge_weight\": 1.5}",
            "not json at all",
        ] {
            let out = parsed(run_demo_training(bad));
            assert!(out.get("error").is_some(), "expected an error for {bad}");
        }
    }

    #[test]
    fn tag_analysis_reports_segments_and_grades() {
        let out = parsed(analyze_tags(
            "note <answer>TRUE</answer> trailing",
            "answer",
        ));
        assert_eq!(out["segments"], serde_json::json!(["TRUE"]));
        assert_eq!(out["well_formed_count"], 1);
        assert_eq!(out["format_level"], "exactly_one");
        assert_eq!(out["format_value"], 1.0);
        assert_eq!(out["grader_verdict"], "true");

        // Multiple valid scores: the first is used, the format grade
        // carries the penalty.
        let out = parsed(analyze_tags("<score>7</score> <score>9</score>", "score"));
        assert_eq!(out["format_level"], "multiple");
        assert_eq!(out["score"]["parse_failed"], false);
        assert_eq!(out["score"]["raw_score"], 7);

        let out = parsed(analyze_tags("<score>eleven</score>", "score"));
        assert_eq!(out["score"]["parse_failed"], true);
        assert_eq!(out["score"]["normalized"], 0.5);

        let out = parsed(analyze_tags("<score>8</score>", "score"));
        assert_eq!(out["score"]["raw_score"], 8);
        assert_eq!(out["score"]["normalized"], 0.8);

        let out = parsed(analyze_tags("no tags here", "question"));
        assert_eq!(out["format_level"], "missing");
        assert_eq!(out["format_value"], 0.0);

        let out = parsed(analyze_tags("text", "bad tag!"));
        assert!(out.get("error").is_some());
    }

    #[test]
    fn advantage_normalization_round_trips() {
        let input = serde_json::json!([
            {"role": "solver", "reward": 0.2},
            {"role": "solver", "reward": 0.8},
            {"role": "judge", "reward": 1.0},
            {"role": "judge", "reward": 1.0},
        ])
        .to_string();
        let out = parsed(normalize_advantages(&input));
        let records = out["records"].as_array().unwrap();
        assert_eq!(records.len(), 4);
        let a0 = records[0]["advantage"].as_f64().unwrap();
        let a1 = records[1]["advantage"].as_f64().unwrap();
        assert!((a0 + a1).abs() < 1e-9, "solver advantages sum to zero");
        assert!(a1 > 0.0 && a0 < 0.0);
        // Constant judge rewards normalize to exactly zero.
        assert_eq!(records[2]["advantage"], 0.0);
        assert_eq!(records[3]["advantage"], 0.0);
        assert_eq!(out["stats"]["solver"]["count"], 2);
        assert_eq!(out["stats"]["judge"]["mean"], 1.0);

        let out = parsed(normalize_advantages("[]"));
        assert!(out.get("error").is_some());
        let out = parsed(normalize_advantages("[{\"role\": \"pilot\", \"reward\": 1}]"));
        assert!(out.get("error").is_some());
    }
}
