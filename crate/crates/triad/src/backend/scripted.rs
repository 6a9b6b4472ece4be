//! Deterministic canned-response backend for tests and dry runs.

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest, UpdateBatch, UpdateReport};
use crate::domain::RoleId;

/// One match rule: `role` and `contains` both None matches everything.
/// The response may embed `{seed}`, replaced by the request's rng seed, so
/// scripted outputs can vary across slots while staying replayable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub role: Option<RoleId>,
    #[serde(default)]
    pub contains: Option<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn for_role(role: RoleId, response: impl Into<String>) -> Self {
        ScriptRule {
            role: Some(role),
            contains: None,
            response: response.into(),
        }
    }

    pub fn matching(role: RoleId, contains: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            role: Some(role),
            contains: Some(contains.into()),
            response: response.into(),
        }
    }

    fn matches(&self, request: &GenerationRequest) -> bool {
        self.role.map_or(true, |r| r == request.role)
            && self
                .contains
                .as_ref()
                .map_or(true, |needle| request.prompt.contains(needle))
    }
}

/// First matching rule wins; no match falls through to the fallback
/// (default empty, which downstream grading treats as format level 0).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBackend {
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub fallback: String,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedBackend {
            rules,
            fallback: String::new(),
        }
    }

    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = fallback.into();
        self
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let template = self
            .rules
            .iter()
            .find(|rule| rule.matches(request))
            .map_or(self.fallback.as_str(), |rule| rule.response.as_str());
        let seed = request.rng_seed.unwrap_or(0);
        Ok(template.replace("{seed}", &seed.to_string()))
    }

    fn apply_update(&mut self, batch: &UpdateBatch) -> Result<UpdateReport, BackendError> {
        batch.validate()?;
        Ok(UpdateReport::tally(batch, false))
    }

    fn kind(&self) -> &'static str {
        "scripted"
    }
}
