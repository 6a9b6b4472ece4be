//! A three-role self-play training loop.
//!
//! One generation backend plays three roles against itself: a *proposer*
//! invents questions, a *solver* answers them, and a *judge* scores both.
//! Rewards are assembled from judge scores, question difficulty, and output
//! formatting; advantages are normalized per role; accepted questions and
//! solved pairs accumulate in evolving pools that feed later steps.
//!
//! The crate ships three backends behind one trait: a scripted backend for
//! deterministic tests, a trainable softmax policy over a fixed response
//! vocabulary (so the whole loop can be exercised end to end at desk scale),
//! and an HTTP client for OpenAI-compatible inference servers.

pub mod advantage;
pub mod backend;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod domain;
pub mod eval;
pub mod orchestrator;
pub mod pools;
pub mod prompts;
pub mod reward;
pub mod seeds;
pub mod tags;

pub use domain::{RoleId, TrainConfig};
pub use orchestrator::{Orchestrator, RunOptions, RunSummary, StepOutcome, StepReport};
