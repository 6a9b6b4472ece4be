//! A trainable softmax policy over a fixed response vocabulary.
//!
//! Each role owns a logit table over a small set of complete response
//! strings; sampling one IS the generation. This is deliberately the
//! smallest policy on which the full reward → advantage → update pipeline
//! is numerically verifiable end to end: the score-function gradient of
//! `log softmax` has a closed form that finite differences can check.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest, UpdateBatch, UpdateReport};
use crate::domain::RoleId;

/// Construction parameters: one action vocabulary per role the policy will
/// speak for, plus ascent hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicyParams {
    pub vocab: BTreeMap<RoleId, Vec<String>>,
    pub learning_rate: f64,
    /// Coefficient for an optional entropy bonus added to the update; the
    /// training objective is plain expected advantage when this is 0.
    pub entropy_coefficient: f64,
}

impl ReferencePolicyParams {
    pub fn new(vocab: BTreeMap<RoleId, Vec<String>>, learning_rate: f64) -> Self {
        ReferencePolicyParams {
            vocab,
            learning_rate,
            entropy_coefficient: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RoleTable {
    actions: Vec<String>,
    logits: Vec<f64>,
}

/// The policy itself: per-role logits, uniform at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    tables: BTreeMap<RoleId, RoleTable>,
    learning_rate: f64,
    entropy_coefficient: f64,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

impl ReferencePolicy {
    pub fn new(params: ReferencePolicyParams) -> Result<Self, BackendError> {
        if !(params.learning_rate.is_finite() && params.learning_rate > 0.0) {
            return Err(BackendError::Fatal(format!(
                "learning_rate must be finite and > 0, got {}",
                params.learning_rate
            )));
        }
        if !(params.entropy_coefficient.is_finite() && params.entropy_coefficient >= 0.0) {
            return Err(BackendError::Fatal(format!(
                "entropy_coefficient must be finite and >= 0, got {}",
                params.entropy_coefficient
            )));
        }
        if params.vocab.is_empty() {
            return Err(BackendError::Fatal(
                "reference policy needs at least one role vocabulary".into(),
            ));
        }
        let mut tables = BTreeMap::new();
        for (role, actions) in params.vocab {
            if actions.is_empty() {
                return Err(BackendError::Fatal(format!(
                    "empty action vocabulary for role {role}"
                )));
            }
            let logits = vec![0.0; actions.len()];
            tables.insert(role, RoleTable { actions, logits });
        }
        Ok(ReferencePolicy {
            tables,
            learning_rate: params.learning_rate,
            entropy_coefficient: params.entropy_coefficient,
        })
    }

    fn table(&self, role: RoleId) -> Result<&RoleTable, BackendError> {
        self.tables.get(&role).ok_or(BackendError::UnknownRole(role))
    }

    pub fn actions(&self, role: RoleId) -> Result<&[String], BackendError> {
        Ok(&self.table(role)?.actions)
    }

    pub fn logits(&self, role: RoleId) -> Result<&[f64], BackendError> {
        Ok(&self.table(role)?.logits)
    }

    /// Action probabilities under the training policy (softmax of the raw
    /// logits; decode temperature and top_p shape sampling only).
    pub fn distribution(&self, role: RoleId) -> Result<Vec<f64>, BackendError> {
        Ok(softmax(&self.table(role)?.logits))
    }

    /// Exact log-probability of `action` under the training policy, with
    /// the analytic gradient with respect to that role's logits:
    /// d log pi(a) / d z_j = [a = j] - pi_j.
    pub fn logprob_and_grad(
        &self,
        role: RoleId,
        action: &str,
    ) -> Result<(f64, Vec<f64>), BackendError> {
        let table = self.table(role)?;
        let index = table
            .actions
            .iter()
            .position(|a| a == action)
            .ok_or_else(|| BackendError::UnknownAction {
                role,
                action: action.to_string(),
            })?;
        let logprob = table.logits[index] - log_sum_exp(&table.logits);
        let probs = softmax(&table.logits);
        let grad = probs
            .iter()
            .enumerate()
            .map(|(j, p)| if j == index { 1.0 - p } else { -p })
            .collect();
        Ok((logprob, grad))
    }

    fn sample(&self, role: RoleId, request: &GenerationRequest) -> Result<String, BackendError> {
        let table = self.table(role)?;
        let n = table.actions.len();

        // Temperature 0 is greedy decoding; ties break to the lowest index.
        if request.temperature == 0.0 {
            let best = table
                .logits
                .iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
                .map(|(i, _)| i)
                .unwrap();
            return Ok(table.actions[best].clone());
        }

        let scaled: Vec<f64> = table
            .logits
            .iter()
            .map(|z| z / request.temperature)
            .collect();
        let probs = softmax(&scaled);

        // Nucleus filter: smallest probability-sorted prefix reaching top_p.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| probs[j].partial_cmp(&probs[i]).unwrap().then(i.cmp(&j)));
        let mut kept = Vec::with_capacity(n);
        let mut mass = 0.0;
        for &i in &order {
            kept.push(i);
            mass += probs[i];
            if request.top_p < 1.0 && mass >= request.top_p {
                break;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(request.rng_seed.unwrap_or(0));
        let draw: f64 = rng.gen::<f64>() * mass;
        let mut cumulative = 0.0;
        for &i in &kept {
            cumulative += probs[i];
            if draw < cumulative {
                return Ok(table.actions[i].clone());
            }
        }
        Ok(table.actions[*kept.last().unwrap()].clone())
    }
}

impl Backend for ReferencePolicy {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        self.sample(request.role, request)
    }

    /// One plain gradient-ascent step over the whole batch:
    /// z += lr * sum_i advantage_i * grad log pi(action_i), per role, with
    /// every gradient evaluated at the pre-update parameters.
    fn apply_update(&mut self, batch: &UpdateBatch) -> Result<UpdateReport, BackendError> {
        batch.validate()?;

        // Resolve every item before touching any parameter so a bad item
        // cannot leave a half-applied update behind.
        let mut resolved: Vec<(RoleId, usize, f64)> = Vec::with_capacity(batch.items.len());
        for item in &batch.items {
            let table = self.table(item.role)?;
            let index = table
                .actions
                .iter()
                .position(|a| a == &item.completion)
                .ok_or_else(|| BackendError::UnknownAction {
                    role: item.role,
                    action: item.completion.clone(),
                })?;
            resolved.push((item.role, index, item.advantage));
        }

        let mut grads: BTreeMap<RoleId, Vec<f64>> = BTreeMap::new();
        let mut probs_cache: BTreeMap<RoleId, Vec<f64>> = BTreeMap::new();
        for &(role, index, advantage) in &resolved {
            let probs = probs_cache
                .entry(role)
                .or_insert_with(|| softmax(&self.tables[&role].logits));
            let grad = grads
                .entry(role)
                .or_insert_with(|| vec![0.0; probs.len()]);
            for (j, g) in grad.iter_mut().enumerate() {
                let indicator = if j == index { 1.0 } else { 0.0 };
                *g += advantage * (indicator - probs[j]);
            }
        }

        if self.entropy_coefficient > 0.0 {
            for (role, grad) in grads.iter_mut() {
                let probs = &probs_cache[role];
                let entropy: f64 = probs
                    .iter()
                    .filter(|p| **p > 0.0)
                    .map(|p| -p * p.ln())
                    .sum();
                for (j, g) in grad.iter_mut().enumerate() {
                    if probs[j] > 0.0 {
                        *g += self.entropy_coefficient * (-probs[j] * (probs[j].ln() + entropy));
                    }
                }
            }
        }

        for (role, grad) in grads {
            let table = self.tables.get_mut(&role).expect("resolved role exists");
            for (z, g) in table.logits.iter_mut().zip(grad) {
                *z += self.learning_rate * g;
            }
        }
        Ok(UpdateReport::tally(batch, true))
    }

    fn kind(&self) -> &'static str {
        "reference"
    }

    fn snapshot_state(&self) -> Option<serde_json::Value> {
        Some(serde_json::to_value(self).expect("policy serializes"))
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<(), BackendError> {
        let restored: ReferencePolicy = serde_json::from_value(state.clone())
            .map_err(|e| BackendError::BadState(e.to_string()))?;
        for (role, table) in &self.tables {
            match restored.tables.get(role) {
                Some(other) if other.actions == table.actions => {}
                Some(_) => {
                    return Err(BackendError::BadState(format!(
                        "snapshot vocabulary for role {role} differs from the configured one"
                    )))
                }
                None => {
                    return Err(BackendError::BadState(format!(
                        "snapshot has no table for role {role}"
                    )))
                }
            }
        }
        *self = restored;
        Ok(())
    }
}

/// Free-function spelling of [`ReferencePolicy::logprob_and_grad`].
pub fn reference_logprob_and_grad(
    policy: &ReferencePolicy,
    role: RoleId,
    action: &str,
) -> Result<(f64, Vec<f64>), BackendError> {
    policy.logprob_and_grad(role, action)
}
