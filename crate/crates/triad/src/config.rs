//! Declarative run configuration.
//!
//! A config file is a TOML document whose top-level keys mirror the
//! training config fields, plus optional sections: `[run]` for output
//! plumbing, `[seeds]` for the starting question set, `[backend.*]` for
//! backend construction, and `[trainer_passthrough]` for fields an
//! external trainer would consume. Every key is optional; omissions take
//! the built-in defaults. Secrets never appear in the file: the HTTP
//! backend names an environment variable and the key is read from there
//! at construction time.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ReferencePolicy, ReferencePolicyParams, ScriptRule, ScriptedBackend};
use crate::domain::{RoleId, TrainConfig};
use crate::orchestrator::RunOptions;
use crate::pools::{PoolError, QuestionPool};
use crate::seeds::{bundled_seed_manifest, bundled_zero_seeds, read_manifest, SeedError, SeedRecord};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown config key `{key}` (expected one of: {expected})")]
    UnknownKey { key: String, expected: String },
    #[error("config section [{section}] is required for this backend")]
    MissingSection { section: &'static str },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Seeds(#[from] SeedError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Which backend implementation a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Http,
    #[default]
    Scripted,
    Reference,
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendChoice::Http => "http",
            BackendChoice::Scripted => "scripted",
            BackendChoice::Reference => "reference",
        })
    }
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendChoice::Http),
            "scripted" => Ok(BackendChoice::Scripted),
            "reference" => Ok(BackendChoice::Reference),
            other => Err(format!("unknown backend `{other}` (expected http, scripted, or reference)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: PathBuf,
    pub snapshot_every: u64,
    pub parallelism: usize,
    pub backend: BackendChoice,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: PathBuf::from("runs/triad"),
            snapshot_every: 10,
            parallelism: 1,
            backend: BackendChoice::default(),
        }
    }
}

/// Where the initial question pool comes from: the bundled general corpus
/// (`"default"`), the bundled 16-question bootstrap set (`"zero"`), or a
/// path to a line-delimited JSON manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub source: String,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection {
            source: "default".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedRuleConfig {
    pub role: RoleId,
    /// Substring the prompt must contain; omitted means any prompt.
    #[serde(default)]
    pub contains: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptedSection {
    pub rules: Vec<ScriptedRuleConfig>,
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    /// Response vocabulary per role; each entry is a complete output the
    /// policy can emit.
    pub vocab: BTreeMap<RoleId, Vec<String>>,
    pub learning_rate: f64,
    pub entropy_coefficient: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection {
            vocab: BTreeMap::new(),
            learning_rate: 0.05,
            entropy_coefficient: 0.0,
        }
    }
}

/// Mirror of the HTTP backend settings, parsed regardless of whether the
/// crate was built with the `http` feature so configs stay portable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSection {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpSection {
    fn default() -> Self {
        HttpSection {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            max_retries: 3,
            retry_base_ms: 200,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub http: Option<HttpSection>,
    pub scripted: Option<ScriptedSection>,
    pub reference: Option<ReferenceSection>,
}

/// Optimizer settings carried verbatim into the run manifest for external
/// trainers. The built-in reference policy uses plain gradient ascent and
/// reads none of these except as documentation of intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerPassthrough {
    pub learning_rate: f64,
    pub optimizer: String,
    pub grad_clip: f64,
    pub ppo_epochs: u32,
    pub entropy_coefficient: f64,
    pub max_prompt_length: usize,
    pub max_response_length: usize,
    pub n_rollout: u32,
    pub n_reference_problem: u32,
}

impl Default for TrainerPassthrough {
    fn default() -> Self {
        TrainerPassthrough {
            learning_rate: 1e-6,
            optimizer: "adamw".into(),
            grad_clip: 1.0,
            ppo_epochs: 1,
            entropy_coefficient: 0.001,
            max_prompt_length: 8192,
            max_response_length: 8192,
            n_rollout: 1,
            n_reference_problem: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FileConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub seeds: SeedsSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub trainer_passthrough: TrainerPassthrough,
}

const SECTION_KEYS: [&str; 4] = ["run", "seeds", "backend", "trainer_passthrough"];

/// Top-level keys the file may use: every training field plus the section
/// names. Derived from the live struct so the list cannot drift.
fn known_keys() -> Vec<String> {
    let train = serde_json::to_value(TrainConfig::default()).expect("config serializes");
    let mut keys: Vec<String> = train
        .as_object()
        .expect("config is an object")
        .keys()
        .cloned()
        .collect();
    keys.extend(SECTION_KEYS.iter().map(|s| s.to_string()));
    keys.sort();
    keys
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_named(&text, &path.display().to_string())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_named(text, "<inline>")
    }

    fn parse_named(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        // Flattening swallows stray top-level keys, so reject them here.
        if let Some(table) = value.as_table() {
            let known = known_keys();
            for key in table.keys() {
                if !known.iter().any(|k| k == key) {
                    return Err(ConfigError::UnknownKey {
                        key: key.clone(),
                        expected: known.join(", "),
                    });
                }
            }
        }
        value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load_seeds(&self) -> Result<Vec<SeedRecord>, ConfigError> {
        match self.seeds.source.as_str() {
            "default" => Ok(bundled_seed_manifest()),
            "zero" => Ok(bundled_zero_seeds()),
            path => Ok(read_manifest(Path::new(path))?),
        }
    }

    pub fn build_question_pool(&self) -> Result<QuestionPool, ConfigError> {
        let records = self.load_seeds()?;
        let allow_empty = self.seeds.source == "zero";
        Ok(QuestionPool::ingest_seed(&records, allow_empty)?)
    }

    pub fn build_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        match self.run.backend {
            BackendChoice::Scripted => {
                let section = self
                    .backend
                    .scripted
                    .as_ref()
                    .ok_or(ConfigError::MissingSection {
                        section: "backend.scripted",
                    })?;
                let rules = section
                    .rules
                    .iter()
                    .map(|rule| match &rule.contains {
                        Some(fragment) => {
                            ScriptRule::matching(rule.role, fragment.clone(), rule.response.clone())
                        }
                        None => ScriptRule::for_role(rule.role, rule.response.clone()),
                    })
                    .collect();
                let mut backend = ScriptedBackend::new(rules);
                if let Some(fallback) = &section.fallback {
                    backend = backend.with_fallback(fallback.clone());
                }
                Ok(Box::new(backend))
            }
            BackendChoice::Reference => {
                let section = self
                    .backend
                    .reference
                    .as_ref()
                    .ok_or(ConfigError::MissingSection {
                        section: "backend.reference",
                    })?;
                let mut params = ReferencePolicyParams::new(section.vocab.clone(), section.learning_rate);
                params.entropy_coefficient = section.entropy_coefficient;
                Ok(Box::new(ReferencePolicy::new(params)?))
            }
            BackendChoice::Http => self.build_http_backend(),
        }
    }

    #[cfg(feature = "http")]
    fn build_http_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        use crate::backend::{HttpBackend, HttpBackendConfig};
        let section = self.backend.http.clone().unwrap_or_default();
        let config = HttpBackendConfig {
            base_url: section.base_url,
            model: section.model,
            api_key_env: section.api_key_env,
            max_retries: section.max_retries,
            retry_base_ms: section.retry_base_ms,
            timeout_secs: section.timeout_secs,
        };
        Ok(Box::new(HttpBackend::new(config)?))
    }

    #[cfg(not(feature = "http"))]
    fn build_http_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        Err(ConfigError::Unsupported(
            "this build does not include the http backend (enable the `http` feature)".into(),
        ))
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.run.out_dir.clone(),
            snapshot_every: self.run.snapshot_every,
            step_limit: None,
        }
    }
}
