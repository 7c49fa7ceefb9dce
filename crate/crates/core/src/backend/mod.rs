//! Text-generation backends.
//!
//! A [`Backend`] turns one rendered prompt into one completion. Backends hold
//! no conversation state: everything an agent knows travels inside the prompt.
//! Two implementations ship: [`RemoteBackend`] speaks the chat-completion wire
//! format to any compatible endpoint, and [`ScriptedBackend`] replays a table
//! of canned replies with a deterministic fallback for missing entries.

mod remote;
mod scripted;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{fallback_text, load_script, parse_script, ScriptTable, ScriptedBackend};

/// Which generation a call belongs to. Part of the scripted lookup key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Message,
    Memory,
    Move,
    Mbti,
    /// Hallucination judging over finished transcripts.
    Judge,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Message => "message",
            Phase::Memory => "memory",
            Phase::Move => "move",
            Phase::Mbti => "mbti",
            Phase::Judge => "judge",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies a logical generation call: who, when, and for what.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallKey {
    pub agent: String,
    pub step: u32,
    pub phase: Phase,
}

impl CallKey {
    pub fn new(agent: impl Into<String>, step: u32, phase: Phase) -> Self {
        Self {
            agent: agent.into(),
            step,
            phase,
        }
    }
}

/// Sampling parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub top_k: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 256,
            top_p: 0.95,
            top_k: 40,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(m.to_string()));
        if !(self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.top_k < 1 {
            return bad("top_k must be >= 1");
        }
        if self.max_tokens < 1 {
            return bad("max_tokens must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("empty prompt for {agent} step {step} {phase}")]
    EmptyPrompt { agent: String, step: u32, phase: Phase },
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A stateless text generator. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn generate(
        &self,
        key: &CallKey,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<String, BackendError>;

    /// Short human-readable identity recorded in run manifests.
    fn descriptor(&self) -> String;
}

pub(crate) fn check_prompt(key: &CallKey, prompt: &str) -> Result<(), BackendError> {
    if prompt.trim().is_empty() {
        return Err(BackendError::EmptyPrompt {
            agent: key.agent.clone(),
            step: key.step,
            phase: key.phase,
        });
    }
    Ok(())
}

/// Serialized backend selection; each kind only accepts its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Remote(RemoteConfig),
    Scripted(ScriptedConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedConfig {
    /// Line-delimited script; absent means fallback-only.
    #[serde(default)]
    pub script_path: Option<PathBuf>,
    #[serde(default)]
    pub fallback_seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Scripted(ScriptedConfig {
            script_path: None,
            fallback_seed: 0,
        })
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn Backend>, BackendError> {
        match self {
            BackendConfig::Remote(cfg) => Ok(Box::new(RemoteBackend::new(cfg.clone())?)),
            BackendConfig::Scripted(cfg) => {
                let table = match &cfg.script_path {
                    Some(path) => load_script(path)?,
                    None => ScriptTable::default(),
                };
                Ok(Box::new(ScriptedBackend::new(table, cfg.fallback_seed)))
            }
        }
    }
}
