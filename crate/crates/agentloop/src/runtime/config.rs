//! Run configuration: a TOML file describing the goal, the backend, the
//! orchestration mode and all tunables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm::{
    Backend, HttpBackend, HttpConfig, RecordingBackend, ReplayBackend, Scenario, ScriptedBackend,
};
use crate::planner::EchoBackend;
use crate::progress::DependencyMode;
use crate::tools::WebMode;

use super::RuntimeError;

/// Orchestration mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Full loop: the planner revises the list after every outcome.
    #[default]
    Dynamic,
    /// Ablation: plan once, dispatch the initial pending leaves in document
    /// order, apply all conclusions at the end. No replanning ever happens.
    StaticBaseline,
}

/// Which backend drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Pick http when `AGENTLOOP_BASE_URL` is set, else scripted when a
    /// scenario file is configured, else the offline echo backend.
    #[default]
    Auto,
    Scripted,
    Http,
    /// Serve responses from a recorded cache; any miss is an error.
    Replay,
    /// Drive the live http backend and append every exchange to the cache.
    Record,
    /// Offline self-driving backend; completes every subtask in one step.
    Echo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Scenario TOML for the scripted backend.
    pub scenario: Option<PathBuf>,
    /// JSONL cache file for replay/record.
    pub cache: Option<PathBuf>,
    /// Overrides for the http backend; fall back to `AGENTLOOP_BASE_URL`,
    /// `AGENTLOOP_MODEL` and `AGENTLOOP_API_KEY`.
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Initial plan used by the echo backend.
    pub initial_plan: Option<String>,
}

fn default_budget() -> usize {
    50
}

fn default_step_limit() -> usize {
    20
}

fn default_true() -> bool {
    true
}

fn default_knowledge_limit() -> usize {
    3
}

/// Everything a run needs, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub goal: String,
    pub mode: RunMode,
    pub backend: BackendConfig,
    /// Extra bundle manifests loaded on top of the builtin registry.
    pub bundle_manifests: Vec<PathBuf>,
    pub knowledge_dir: Option<PathBuf>,
    /// Root directory actors may touch; defaults to `<run dir>/sandbox`.
    pub sandbox_root: Option<PathBuf>,
    /// Canned responses for mock web fetches.
    pub fixtures_dir: Option<PathBuf>,
    pub web_mode: WebMode,
    #[serde(rename = "planner_budget")]
    pub planner_budget: usize,
    pub actor_step_limit: usize,
    pub dependency_mode: DependencyMode,
    pub persona_generation: bool,
    /// Shared environment facts handed to every actor.
    pub environment: BTreeMap<String, String>,
    pub knowledge_limit: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            goal: String::new(),
            mode: RunMode::default(),
            backend: BackendConfig::default(),
            bundle_manifests: Vec::new(),
            knowledge_dir: None,
            sandbox_root: None,
            fixtures_dir: None,
            web_mode: WebMode::default(),
            planner_budget: default_budget(),
            actor_step_limit: default_step_limit(),
            dependency_mode: DependencyMode::default(),
            persona_generation: default_true(),
            environment: BTreeMap::new(),
            knowledge_limit: default_knowledge_limit(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, RuntimeError> {
        let text = fs::read_to_string(path).map_err(|e| RuntimeError::Io(e.to_string()))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| RuntimeError::Config(e.to_string()))?;
        if config.goal.trim().is_empty() {
            return Err(RuntimeError::Config("goal must be non-empty".into()));
        }
        Ok(config)
    }

    /// Build the configured backend. Relative scenario/cache paths are kept
    /// as given; resolve them before calling if needed.
    pub fn build_backend(&self) -> Result<Box<dyn Backend>, RuntimeError> {
        let scripted = |path: &PathBuf| -> Result<Box<dyn Backend>, RuntimeError> {
            let scenario =
                Scenario::load(path).map_err(|e| RuntimeError::Config(e.to_string()))?;
            Ok(Box::new(ScriptedBackend::new(scenario)))
        };
        let http = || -> Result<Box<dyn Backend>, RuntimeError> {
            let mut cfg = HttpConfig::from_env().map_err(|e| RuntimeError::Config(e.to_string()))?;
            if let Some(url) = &self.backend.base_url {
                cfg.base_url = url.clone();
            }
            if let Some(model) = &self.backend.model {
                cfg.model = model.clone();
            }
            HttpBackend::new(cfg)
                .map(|b| Box::new(b) as Box<dyn Backend>)
                .map_err(|e| RuntimeError::Config(e.to_string()))
        };
        let echo = || -> Box<dyn Backend> {
            match &self.backend.initial_plan {
                Some(plan) => Box::new(EchoBackend::new(plan.clone(), self.dependency_mode)),
                None => Box::new(EchoBackend::trivial(&self.goal)),
            }
        };
        match self.backend.kind {
            BackendKind::Scripted => {
                let path = self.backend.scenario.as_ref().ok_or_else(|| {
                    RuntimeError::Config("scripted backend needs `backend.scenario`".into())
                })?;
                scripted(path)
            }
            BackendKind::Http => http(),
            BackendKind::Replay => {
                let path = self.backend.cache.as_ref().ok_or_else(|| {
                    RuntimeError::Config("replay backend needs `backend.cache`".into())
                })?;
                ReplayBackend::load(path)
                    .map(|b| Box::new(b) as Box<dyn Backend>)
                    .map_err(|e| RuntimeError::Config(e.to_string()))
            }
            BackendKind::Record => {
                let path = self.backend.cache.as_ref().ok_or_else(|| {
                    RuntimeError::Config("record backend needs `backend.cache`".into())
                })?;
                Ok(Box::new(RecordingBackend::new(http()?, path.clone())))
            }
            BackendKind::Echo => Ok(echo()),
            BackendKind::Auto => {
                if std::env::var("AGENTLOOP_BASE_URL").is_ok() || self.backend.base_url.is_some() {
                    http()
                } else if let Some(path) = &self.backend.scenario {
                    scripted(path)
                } else {
                    Ok(echo())
                }
            }
        }
    }
}
