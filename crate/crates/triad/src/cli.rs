//! Operator entry point: training runs, answer grading, pool files, and
//! report replay, one subcommand each.
//!
//! Global flags override the loaded config so one run can be re-seeded or
//! re-pointed without editing the file. stdout carries one human summary
//! line per step; machine-readable records go to the run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::config::{BackendChoice, FileConfig};
use crate::eval::{read_answers, read_benchmark, write_run, EvalHarness};
use crate::orchestrator::{
    read_run_manifest, read_step_reports, Orchestrator, RunOptions, StepReport,
};
use crate::pools::{PairPool, QuestionPool};

#[derive(Debug, Parser)]
#[command(
    name = "triad",
    version,
    about = "Self-play training loop: a proposer invents questions, a solver answers them, a judge scores both"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Override the config's RNG seed; every random choice flows from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the configured backend.
    #[arg(long, global = true)]
    pub backend: Option<BackendChoice>,
    /// Override the configured generation parallelism.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Override the configured snapshot cadence, in steps.
    #[arg(long, global = true)]
    pub snapshot_every: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) a training loop described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many steps in this invocation; the run stays
        /// resumable from its last snapshot.
        #[arg(long)]
        step_limit: Option<u64>,
    },
    /// Grade model answers against a benchmark with the configured backend.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Benchmark items, one JSON object per line.
        #[arg(long)]
        benchmark: PathBuf,
        /// Model answers, one JSON object per line, aligned with the benchmark.
        #[arg(long)]
        answers: PathBuf,
        /// Where per-item verdicts are written (default: answers path with
        /// a .grades.jsonl extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect, materialize, or verify pool files.
    Pool {
        #[command(subcommand)]
        action: PoolAction,
    },
    /// Re-emit step reports from a run directory without any backend calls.
    Replay {
        /// Run directory, or its manifest.json.
        manifest: PathBuf,
        /// Inclusive step range, as N, N.., ..M, or N..M.
        #[arg(long)]
        steps: Option<String>,
        /// Emit the raw report records instead of summary lines.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum PoolAction {
    /// Summarize a question or pair pool file.
    Inspect { path: PathBuf },
    /// Build the configured seed pool and write it to a file.
    Snapshot {
        path: PathBuf,
        /// Config supplying the seed source; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Load a pool file, verify it, and rewrite it in canonical form.
    Restore { path: PathBuf },
}

/// Parses argv. `--help` and version requests surface as clap errors that
/// exit 0; real usage errors exit nonzero with usage text on stderr.
pub fn parse_command<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

pub fn main() -> anyhow::Result<()> {
    dispatch(Cli::parse())
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Run { config, step_limit } => run_command(&cli, config, *step_limit),
        Command::Eval {
            config,
            benchmark,
            answers,
            out,
        } => eval_command(&cli, config, benchmark, answers, out.as_deref()),
        Command::Pool { action } => pool_command(action),
        Command::Replay {
            manifest,
            steps,
            json,
        } => replay_command(manifest, steps.as_deref(), *json),
    }
}

/// Loads the config file and applies the global override flags.
fn load_config(cli: &Cli, path: &Path) -> anyhow::Result<FileConfig> {
    let mut config =
        FileConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.train.rng_seed = seed;
    }
    if let Some(backend) = cli.backend {
        config.run.backend = backend;
    }
    if let Some(parallelism) = cli.parallelism {
        config.run.parallelism = parallelism;
    }
    if let Some(snapshot_every) = cli.snapshot_every {
        config.run.snapshot_every = snapshot_every;
    }
    Ok(config)
}

fn step_line(report: &StepReport, total: u64) -> String {
    if report.aborted {
        return format!(
            "step {}/{}  aborted: {}",
            report.step,
            total,
            report.abort_reason.as_deref().unwrap_or("unknown")
        );
    }
    format!(
        "step {}/{}  proposed {:>3}  admitted {:>3}  pool {:>5}  solver {:.3}  proposer {:.3}  difficulty {:.3}  judge_format {:.3}",
        report.step,
        total,
        report.proposed,
        report.admitted,
        report.pool_size,
        report.mean_solver_reward,
        report.mean_proposer_reward,
        report.mean_difficulty,
        report.judge_format_rate
    )
}

fn run_command(cli: &Cli, config_path: &Path, step_limit: Option<u64>) -> anyhow::Result<()> {
    let config = load_config(cli, config_path)?;
    let pool = config.build_question_pool()?;
    let mut backend = config.build_backend()?;
    let total = config.train.total_steps;
    let mut orchestrator = Orchestrator::new(config.train.clone(), pool)?
        .with_parallelism(config.run.parallelism);
    let options = RunOptions {
        step_limit,
        ..config.run_options()
    };
    let summary = orchestrator.run_training_with(backend.as_mut(), &options, |report| {
        println!("{}", step_line(report, total));
    })?;
    println!(
        "run {}: {}/{} steps, pool {}, {} aborted{}{}",
        options.out_dir.display(),
        summary.steps_completed,
        summary.total_steps,
        summary.pool_size,
        summary.aborted_steps,
        summary
            .resumed_from
            .map(|s| format!(", resumed from step {s}"))
            .unwrap_or_default(),
        if summary.stopped_early { ", stopped early" } else { "" },
    );
    Ok(())
}

fn eval_command(
    cli: &Cli,
    config_path: &Path,
    benchmark_path: &Path,
    answers_path: &Path,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let config = load_config(cli, config_path)?;
    let grader = config.build_backend()?;
    let items = read_benchmark(benchmark_path)?;
    let answers = read_answers(answers_path)?;
    let harness = EvalHarness::new();
    let run = harness.evaluate_set(&items, &answers, grader.as_ref(), config.run.parallelism)?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| answers_path.with_extension("grades.jsonl"));
    write_run(&out_path, &run)?;
    let report = &run.report;
    println!(
        "graded {}: {} correct, {} incorrect, {} unparsable, accuracy {:.4}",
        report.total, report.correct, report.incorrect, report.unparsable, report.accuracy
    );
    println!("verdicts written to {}", out_path.display());
    Ok(())
}

fn describe_question_pool(pool: &QuestionPool) {
    let questions = pool.questions();
    let seeded = questions.iter().filter(|q| q.origin.is_seed()).count();
    println!(
        "question pool: {} questions ({} seed, {} generated), {} admission decisions, content hash {}",
        questions.len(),
        seeded,
        questions.len() - seeded,
        pool.admission_log().len(),
        pool.content_hash()
    );
}

fn describe_pair_pool(pool: &PairPool) {
    let pairs = pool.pairs();
    let parsed = pairs.iter().filter(|p| !p.answer.text.is_empty()).count();
    println!(
        "pair pool: {} pairs, {} with extractable answers",
        pairs.len(),
        parsed
    );
}

fn pool_command(action: &PoolAction) -> anyhow::Result<()> {
    match action {
        PoolAction::Inspect { path } => {
            // A pool file is one of two record shapes; try both.
            match QuestionPool::restore(path) {
                Ok(pool) => describe_question_pool(&pool),
                Err(first) => match PairPool::restore(path) {
                    Ok(pool) => describe_pair_pool(&pool),
                    Err(_) => bail!("{}: not a readable pool file: {first}", path.display()),
                },
            }
            Ok(())
        }
        PoolAction::Snapshot { path, config } => {
            let config = match config {
                Some(config_path) => FileConfig::load(config_path)?,
                None => FileConfig::default(),
            };
            let pool = config.build_question_pool()?;
            pool.snapshot(path)?;
            println!("wrote {} questions to {}", pool.len(), path.display());
            Ok(())
        }
        PoolAction::Restore { path } => {
            match QuestionPool::restore(path) {
                Ok(pool) => {
                    pool.snapshot(path)?;
                    describe_question_pool(&pool);
                }
                Err(first) => match PairPool::restore(path) {
                    Ok(pool) => {
                        pool.snapshot(path)?;
                        describe_pair_pool(&pool);
                    }
                    Err(_) => bail!("{}: not a restorable pool file: {first}", path.display()),
                },
            }
            Ok(())
        }
    }
}

/// Inclusive step range: "3" keeps step 3, "3.." from 3 on, "..5" through
/// 5, "3..5" both bounds.
fn parse_step_range(spec: &str) -> anyhow::Result<(u64, u64)> {
    let parse = |s: &str, what: &str| -> anyhow::Result<u64> {
        s.parse()
            .with_context(|| format!("invalid {what} step `{s}` in range `{spec}`"))
    };
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo = if lo.is_empty() { 1 } else { parse(lo, "start")? };
        let hi = if hi.is_empty() { u64::MAX } else { parse(hi, "end")? };
        if lo > hi {
            bail!("empty step range `{spec}`");
        }
        return Ok((lo, hi));
    }
    let step = parse(spec, "single")?;
    Ok((step, step))
}

fn replay_command(manifest: &Path, steps: Option<&str>, json: bool) -> anyhow::Result<()> {
    let run_dir = if manifest.is_file() {
        manifest.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        manifest.to_path_buf()
    };
    let run_manifest = read_run_manifest(&run_dir)?;
    let reports = read_step_reports(&run_dir)?;
    let (lo, hi) = match steps {
        Some(spec) => parse_step_range(spec)?,
        None => (1, u64::MAX),
    };
    let total = run_manifest.config.total_steps;
    for report in reports.iter().filter(|r| (lo..=hi).contains(&r.step)) {
        if json {
            println!("{}", serde_json::to_string(report)?);
        } else {
            println!("{}", step_line(report, total));
        }
    }
    Ok(())
}
