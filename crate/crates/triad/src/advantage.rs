//! Per-role advantage normalization.
//!
//! Each role gets its own baseline: rewards are partitioned by role and each
//! record's advantage is `(r - mean) / (std + epsilon)` using that role's
//! batch statistics. Rewards never mix across roles, so a judge with easy
//! format rewards cannot flatten the solver's learning signal.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{AdvantageStats, RoleId, RolloutRecord};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AdvantageError {
    #[error("advantage over an empty batch")]
    EmptyBatch,
    #[error("record {index} already has an advantage: double normalization")]
    AlreadyNormalized { index: usize },
    #[error("record {index} has non-finite reward {reward}")]
    NonFiniteReward { index: usize, reward: f64 },
    #[error("epsilon must be finite and > 0, got {0}")]
    BadEpsilon(f64),
}

/// Fills in `advantage` on every record and returns the per-role statistics.
///
/// Mean is the sample mean; std is the population standard deviation, so a
/// batch of one (or any constant batch) gets all-zero advantages through the
/// epsilon guard rather than a division by zero.
pub fn compute_role_advantages(
    records: &mut [RolloutRecord],
    epsilon: f64,
) -> Result<BTreeMap<RoleId, AdvantageStats>, AdvantageError> {
    if records.is_empty() {
        return Err(AdvantageError::EmptyBatch);
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(AdvantageError::BadEpsilon(epsilon));
    }
    for (index, record) in records.iter().enumerate() {
        if record.advantage.is_some() {
            return Err(AdvantageError::AlreadyNormalized { index });
        }
        if !record.reward.is_finite() {
            return Err(AdvantageError::NonFiniteReward {
                index,
                reward: record.reward,
            });
        }
    }

    let mut by_role: BTreeMap<RoleId, Vec<usize>> = BTreeMap::new();
    for (index, record) in records.iter().enumerate() {
        by_role.entry(record.role).or_default().push(index);
    }

    let mut stats = BTreeMap::new();
    for (role, indices) in &by_role {
        let count = indices.len();
        // A constant batch's exact mean is that constant; taking the
        // floating-point sum instead would leave ~1e-16 residues and break
        // the all-zero guarantee for zero-variance batches.
        let first = records[indices[0]].reward;
        let (mean, std) = if indices.iter().all(|&i| records[i].reward == first) {
            (first, 0.0)
        } else {
            let mean = indices.iter().map(|&i| records[i].reward).sum::<f64>() / count as f64;
            let variance = indices
                .iter()
                .map(|&i| {
                    let d = records[i].reward - mean;
                    d * d
                })
                .sum::<f64>()
                / count as f64;
            (mean, variance.sqrt())
        };
        for &i in indices {
            records[i].advantage = Some((records[i].reward - mean) / (std + epsilon));
        }
        stats.insert(
            *role,
            AdvantageStats {
                role: *role,
                mean,
                std,
                count,
            },
        );
    }
    Ok(stats)
}
