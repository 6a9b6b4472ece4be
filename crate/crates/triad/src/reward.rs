//! Total rewards for the three roles.
//!
//! The proposer is paid for question quality, question difficulty (one minus
//! the solver's average judged score over several attempts), and format
//! compliance. The solver is paid for its judged score and format. The judge
//! is paid for format alone.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{JudgeVerdict, RewardBreakdown, RewardWeights, RoleId, VerdictTarget};
use crate::tags::FormatLevel;

pub const COMPONENT_QUALITY: &str = "quality";
pub const COMPONENT_DIFFICULTY: &str = "difficulty";
pub const COMPONENT_FORMAT: &str = "format";
pub const COMPONENT_JUDGE: &str = "judge";

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("mean solve score over an empty verdict list: upstream pipeline bug")]
    NoVerdicts,
}

/// Average normalized judge score over a question's solver attempts, with a
/// flag preserved when the backend delivered fewer (or more) verdicts than
/// asked for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSolveScore {
    pub value: f64,
    pub sample_count: usize,
    pub expected_count: usize,
}

impl MeanSolveScore {
    /// True when the verdict count differs from the configured sample count;
    /// the mean is still taken over what actually arrived.
    pub fn short_delivery(&self) -> bool {
        self.sample_count != self.expected_count
    }
}

pub fn mean_solve_score(
    verdicts: &[JudgeVerdict],
    expected_n: usize,
) -> Result<MeanSolveScore, RewardError> {
    if verdicts.is_empty() {
        return Err(RewardError::NoVerdicts);
    }
    debug_assert!(
        verdicts.iter().all(|v| v.target == VerdictTarget::Answer),
        "difficulty estimation consumes answer verdicts only"
    );
    let sum: f64 = verdicts.iter().map(|v| v.normalized).sum();
    Ok(MeanSolveScore {
        value: sum / verdicts.len() as f64,
        sample_count: verdicts.len(),
        expected_count: expected_n,
    })
}

/// A question is worth more the less often the solver gets it right.
pub fn difficulty_reward(mean_solve: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&mean_solve));
    1.0 - mean_solve
}

pub fn proposer_total(
    quality: f64,
    difficulty: f64,
    format: FormatLevel,
    weights: &RewardWeights,
) -> RewardBreakdown {
    let w = weights.proposer;
    let format = format.value();
    let total = w.quality * quality + w.difficulty * difficulty + w.format * format;
    let mut components = BTreeMap::new();
    components.insert(COMPONENT_QUALITY.to_string(), quality);
    components.insert(COMPONENT_DIFFICULTY.to_string(), difficulty);
    components.insert(COMPONENT_FORMAT.to_string(), format);
    RewardBreakdown {
        role: RoleId::Proposer,
        components,
        total,
    }
}

pub fn solver_total(judge: f64, format: FormatLevel, weights: &RewardWeights) -> RewardBreakdown {
    let w = weights.solver;
    let format = format.value();
    let total = w.judge * judge + w.format * format;
    let mut components = BTreeMap::new();
    components.insert(COMPONENT_JUDGE.to_string(), judge);
    components.insert(COMPONENT_FORMAT.to_string(), format);
    RewardBreakdown {
        role: RoleId::Solver,
        components,
        total,
    }
}

/// The judge's reward is its format compliance alone.
pub fn judge_total(format: FormatLevel) -> RewardBreakdown {
    let format = format.value();
    let mut components = BTreeMap::new();
    components.insert(COMPONENT_FORMAT.to_string(), format);
    RewardBreakdown {
        role: RoleId::Judge,
        components,
        total: format,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VerdictTarget;
    use proptest::prelude::*;

    fn verdict(normalized: f64) -> JudgeVerdict {
        JudgeVerdict {
            target: VerdictTarget::Answer,
            raw_score: Some((normalized * 10.0).round() as u8),
            normalized,
            parse_failed: false,
            raw_output: String::new(),
            format_level: FormatLevel::ExactlyOne,
        }
    }

    #[test]
    fn mean_solve_score_matches_hand_sums() {
        let constant: Vec<_> = (0..5).map(|_| verdict(0.8)).collect();
        let m = mean_solve_score(&constant, 5).unwrap();
        assert_eq!(m.value, 0.8);
        assert!(!m.short_delivery());

        let pair = [verdict(1.0), verdict(0.0)];
        assert_eq!(mean_solve_score(&pair, 2).unwrap().value, 0.5);

        let mixed: Vec<_> = [0.7, 0.9, 0.5, 0.3, 0.6].map(verdict).into();
        let m = mean_solve_score(&mixed, 5).unwrap();
        assert!((m.value - 0.6).abs() < 1e-15);
    }

    #[test]
    fn short_delivery_is_flagged_not_fatal() {
        let three: Vec<_> = (0..3).map(|_| verdict(0.4)).collect();
        let m = mean_solve_score(&three, 5).unwrap();
        assert!(m.short_delivery());
        assert!((m.value - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_verdicts_error() {
        assert!(mean_solve_score(&[], 5).is_err());
    }

    #[test]
    fn difficulty_is_the_complement() {
        assert_eq!(difficulty_reward(1.0), 0.0);
        assert_eq!(difficulty_reward(0.0), 1.0);
        assert!((difficulty_reward(0.4) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn proposer_total_matches_forced_arithmetic() {
        let w = RewardWeights::default();
        let r = proposer_total(0.9, 0.6, FormatLevel::ExactlyOne, &w);
        assert!((r.total - 2.5 / 3.0).abs() < 1e-12);
        assert_eq!(r.role, RoleId::Proposer);
        assert_eq!(r.components.len(), 3);

        assert_eq!(
            proposer_total(0.0, 0.0, FormatLevel::Missing, &w).total,
            0.0
        );
        let full = proposer_total(1.0, 1.0, FormatLevel::ExactlyOne, &w);
        assert!((full.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solver_total_matches_forced_arithmetic() {
        let w = RewardWeights::default();
        assert!((solver_total(0.8, FormatLevel::ExactlyOne, &w).total - 0.9).abs() < 1e-15);
        assert_eq!(solver_total(0.0, FormatLevel::Missing, &w).total, 0.0);
        assert!((solver_total(0.6, FormatLevel::Multiple, &w).total - 0.55).abs() < 1e-15);
    }

    #[test]
    fn judge_total_is_format_alone() {
        for level in [FormatLevel::ExactlyOne, FormatLevel::Multiple, FormatLevel::Missing] {
            let r = judge_total(level);
            assert_eq!(r.total, level.value());
            assert_eq!(r.components.len(), 1);
            assert_eq!(r.role, RoleId::Judge);
        }
    }

    proptest! {
        #[test]
        fn totals_are_dot_products_of_their_components(
            quality in 0.0f64..=1.0,
            mean_solve in 0.0f64..=1.0,
            judge in 0.0f64..=1.0,
            format_count in 0usize..4,
        ) {
            let w = RewardWeights::default();
            let format = FormatLevel::from_count(format_count);
            let difficulty = difficulty_reward(mean_solve);

            let p = proposer_total(quality, difficulty, format, &w);
            let p_dot = w.proposer.quality * p.components[COMPONENT_QUALITY]
                + w.proposer.difficulty * p.components[COMPONENT_DIFFICULTY]
                + w.proposer.format * p.components[COMPONENT_FORMAT];
            prop_assert!((p.total - p_dot).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&p.total));

            let s = solver_total(judge, format, &w);
            let s_dot = w.solver.judge * s.components[COMPONENT_JUDGE]
                + w.solver.format * s.components[COMPONENT_FORMAT];
            prop_assert!((s.total - s_dot).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&s.total));

            // Complement identity holds exactly, not within a tolerance.
            prop_assert_eq!(difficulty + mean_solve, 1.0f64);
        }

        #[test]
        fn proposer_total_is_monotone_in_each_argument(
            base in 0.0f64..=0.9,
            bump in 0.0f64..=0.1,
        ) {
            let w = RewardWeights::default();
            let lo = proposer_total(base, base, FormatLevel::Multiple, &w).total;
            prop_assert!(proposer_total(base + bump, base, FormatLevel::Multiple, &w).total >= lo);
            prop_assert!(proposer_total(base, base + bump, FormatLevel::Multiple, &w).total >= lo);
            prop_assert!(proposer_total(base, base, FormatLevel::ExactlyOne, &w).total >= lo);
        }
    }
}
