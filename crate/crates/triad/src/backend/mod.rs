//! The generation-and-update contract shared by all three roles.
//!
//! One backend serves every role: the orchestrator tags each request with
//! the role whose prompt it carries. Generation is read-only and safe to
//! run concurrently; `apply_update` takes `&mut self` so the type system
//! enforces the barrier between rollout collection and the parameter step.

mod reference;
mod routing;
mod scripted;

#[cfg(feature = "http")]
mod http;

pub use reference::{reference_logprob_and_grad, ReferencePolicy, ReferencePolicyParams};
pub use routing::RoleRoutingBackend;
pub use scripted::{ScriptRule, ScriptedBackend};

#[cfg(feature = "http")]
pub use http::{HttpBackend, HttpBackendConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RoleId;

#[derive(Debug, Error)]
pub enum BackendError {
    /// Retryable trouble that exhausted its retry budget. The orchestrator
    /// degrades this to an empty completion instead of aborting the step.
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    /// Misconfiguration or a server-side rejection that retrying cannot fix.
    #[error("{0}")]
    Fatal(String),
    #[error("update item {index} ({role}) has non-finite advantage {advantage}")]
    NonFiniteAdvantage {
        index: usize,
        role: RoleId,
        advantage: f64,
    },
    #[error("empty update batch")]
    EmptyBatch,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("no action vocabulary for role {0}")]
    UnknownRole(RoleId),
    #[error("action {action:?} is not in the {role} vocabulary")]
    UnknownAction { role: RoleId, action: String },
    #[error("cannot restore backend state: {0}")]
    BadState(String),
}

impl BackendError {
    /// True for failures the orchestrator should absorb as a zero-format
    /// completion rather than abort the step.
    pub fn is_degradable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// One generation call. Decode parameters default to the training defaults
/// (temperature 1.0, top_p 1.0); `rng_seed` pins sampling backends so runs
/// replay exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role: RoleId,
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_units: usize,
    pub rng_seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(role: RoleId, prompt: impl Into<String>) -> Self {
        GenerationRequest {
            role,
            prompt: prompt.into(),
            temperature: 1.0,
            top_p: 1.0,
            max_new_units: 8192,
            rng_seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = Some(seed);
        self
    }

    pub fn with_decode(mut self, temperature: f64, top_p: f64) -> Self {
        self.temperature = temperature;
        self.top_p = top_p;
        self
    }
}

/// One rollout's contribution to the synchronized update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateItem {
    pub role: RoleId,
    pub prompt: String,
    pub completion: String,
    pub advantage: f64,
}

/// Everything the per-step update sees, all three roles together.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateBatch {
    pub items: Vec<UpdateItem>,
}

impl UpdateBatch {
    /// Checks the batch-level preconditions shared by every backend.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.items.is_empty() {
            return Err(BackendError::EmptyBatch);
        }
        for (index, item) in self.items.iter().enumerate() {
            if !item.advantage.is_finite() {
                return Err(BackendError::NonFiniteAdvantage {
                    index,
                    role: item.role,
                    advantage: item.advantage,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleUpdateSummary {
    pub items: usize,
    pub mean_advantage: f64,
}

/// What a backend did with an update batch. Inference-only backends fill
/// the counts and report `applied: false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub per_role: BTreeMap<RoleId, RoleUpdateSummary>,
    pub applied: bool,
}

impl UpdateReport {
    /// Count-and-mean bookkeeping over a validated batch.
    pub fn tally(batch: &UpdateBatch, applied: bool) -> Self {
        let mut sums: BTreeMap<RoleId, (usize, f64)> = BTreeMap::new();
        for item in &batch.items {
            let entry = sums.entry(item.role).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += item.advantage;
        }
        UpdateReport {
            per_role: sums
                .into_iter()
                .map(|(role, (items, sum))| {
                    (
                        role,
                        RoleUpdateSummary {
                            items,
                            mean_advantage: sum / items as f64,
                        },
                    )
                })
                .collect(),
            applied,
        }
    }
}

/// A policy that can speak for all three roles and (optionally) learn.
///
/// `generate` must be safe to call from several threads at once; parameter
/// mutation happens only inside `apply_update`, whose `&mut self` receiver
/// makes overlap with generation impossible to compile.
pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;

    fn apply_update(&mut self, batch: &UpdateBatch) -> Result<UpdateReport, BackendError>;

    /// Stable identifier recorded in run manifests.
    fn kind(&self) -> &'static str;

    /// Learnable backends expose their parameters for run snapshots; pure
    /// inference backends have nothing to save.
    fn snapshot_state(&self) -> Option<serde_json::Value> {
        None
    }

    fn restore_state(&mut self, _state: &serde_json::Value) -> Result<(), BackendError> {
        Ok(())
    }
}

impl<T: Backend + ?Sized> Backend for Box<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).generate(request)
    }

    fn apply_update(&mut self, batch: &UpdateBatch) -> Result<UpdateReport, BackendError> {
        (**self).apply_update(batch)
    }

    fn kind(&self) -> &'static str {
        (**self).kind()
    }

    fn snapshot_state(&self) -> Option<serde_json::Value> {
        (**self).snapshot_state()
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<(), BackendError> {
        (**self).restore_state(state)
    }
}
