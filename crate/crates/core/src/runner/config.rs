//! Run and sweep configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, GenerationParams, RemoteConfig, ScriptedConfig};
use crate::exec::Execution;
use crate::lexicon::{default_stopwords, parse_word_list, DEFAULT_ENVIRONMENT_WORDS};
use crate::mbti::{load_bank, QuestionBank};
use crate::prompt::{load_templates, PromptSet};
use crate::world::WorldConfig;

use super::RunnerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub world: WorldConfig,
    pub backend: BackendConfig,
    pub generation: GenerationParams,
    pub prompts: PromptsConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
    pub mbti: MbtiConfig,
    pub runtime: RuntimeConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PromptsConfig {
    /// Directory with message.txt, memory.txt and move.txt; bundled templates when absent.
    pub templates_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    #[default]
    Lexicon,
    /// Ask the configured backend, keeping only words found in the message.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub environment_words_path: Option<PathBuf>,
    pub stopwords_path: Option<PathBuf>,
    pub top_words: usize,
    pub judge: JudgeKind,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            environment_words_path: None,
            stopwords_path: None,
            top_words: 100,
            judge: JudgeKind::Lexicon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ranges: Vec<u32>,
    pub trials_per_range: u32,
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ranges: vec![0, 5, 10, 15, 20, 25],
            trials_per_range: 10,
            base_seed: 0,
        }
    }
}

impl SweepConfig {
    pub const MAX_RANGES: usize = 10;
    pub const MAX_TRIALS: u32 = 100;

    pub fn trial_seed(&self, range_index: usize, trial: u32) -> u64 {
        self.base_seed
            .wrapping_mul(1000)
            .wrapping_add(range_index as u64 * 100)
            .wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MbtiConfig {
    pub enabled: bool,
    /// Question bank file; the bundled 12-item synthetic bank when absent.
    pub bank_path: Option<PathBuf>,
    /// Steps at which to administer; `[0, num_steps]` when absent.
    pub checkpoints: Option<Vec<u32>>,
}

impl MbtiConfig {
    pub fn checkpoints_for(&self, num_steps: u32) -> Vec<u32> {
        let mut c = self.checkpoints.clone().unwrap_or_else(|| vec![0, num_steps]);
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    pub execution: Execution,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            execution: Execution::Parallel,
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub range: Option<u32>,
    pub steps: Option<u32>,
    pub backend_kind: Option<String>,
    pub endpoint: Option<String>,
    pub script: Option<PathBuf>,
    pub sequential: bool,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, RunnerError> {
        toml::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))
    }

    /// Read a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.prompts.templates_dir);
        fix(&mut self.analysis.environment_words_path);
        fix(&mut self.analysis.stopwords_path);
        fix(&mut self.mbti.bank_path);
        if let BackendConfig::Scripted(s) = &mut self.backend {
            fix(&mut s.script_path);
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), RunnerError> {
        if let Some(seed) = o.seed {
            self.world.rng_seed = seed;
            self.sweep.base_seed = seed;
        }
        if let Some(r) = o.range {
            self.world.message_range = r;
        }
        if let Some(s) = o.steps {
            self.world.num_steps = s;
        }
        let kind = match (&o.backend_kind, &o.endpoint, &o.script) {
            (Some(k), _, _) => Some(k.as_str()),
            (None, Some(_), _) => Some("remote"),
            (None, None, Some(_)) => Some("scripted"),
            _ => None,
        };
        match kind {
            None => {}
            Some("remote") => {
                let mut remote = match &self.backend {
                    BackendConfig::Remote(r) => r.clone(),
                    BackendConfig::Scripted(_) => RemoteConfig::new(""),
                };
                if let Some(url) = &o.endpoint {
                    remote.endpoint_url = url.clone();
                }
                if remote.endpoint_url.is_empty() {
                    return Err(RunnerError::Config("remote backend needs an endpoint URL".into()));
                }
                self.backend = BackendConfig::Remote(remote);
            }
            Some("scripted") => {
                let mut scripted = match &self.backend {
                    BackendConfig::Scripted(s) => s.clone(),
                    BackendConfig::Remote(_) => ScriptedConfig {
                        script_path: None,
                        fallback_seed: 0,
                    },
                };
                if let Some(p) = &o.script {
                    scripted.script_path = Some(p.clone());
                }
                self.backend = BackendConfig::Scripted(scripted);
            }
            Some(other) => {
                return Err(RunnerError::Config(format!("unknown backend kind {other:?}")));
            }
        }
        if o.sequential {
            self.runtime.execution = Execution::Sequential;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        self.world.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        self.generation.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        if self.analysis.top_words == 0 {
            return Err(RunnerError::Config("analysis.top_words must be >= 1".into()));
        }
        if self.mbti.enabled {
            for c in self.mbti.checkpoints_for(self.world.num_steps) {
                if c > self.world.num_steps {
                    return Err(RunnerError::Config(format!(
                        "mbti checkpoint {c} is beyond num_steps {}",
                        self.world.num_steps
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<(), RunnerError> {
        self.validate()?;
        let s = &self.sweep;
        if s.ranges.is_empty() {
            return Err(RunnerError::Config("sweep.ranges is empty".into()));
        }
        if s.ranges.len() > SweepConfig::MAX_RANGES {
            return Err(RunnerError::Config(format!(
                "at most {} ranges per sweep",
                SweepConfig::MAX_RANGES
            )));
        }
        if s.trials_per_range == 0 || s.trials_per_range > SweepConfig::MAX_TRIALS {
            return Err(RunnerError::Config(format!(
                "sweep.trials_per_range must be in 1..={}",
                SweepConfig::MAX_TRIALS
            )));
        }
        for &r in &s.ranges {
            let mut w = self.world.clone();
            w.message_range = r;
            w.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<PromptSet, RunnerError> {
        match &self.prompts.templates_dir {
            Some(dir) => load_templates(dir).map_err(|e| RunnerError::Config(e.to_string())),
            None => Ok(PromptSet::bundled()),
        }
    }

    pub fn bank(&self) -> Result<QuestionBank, RunnerError> {
        match &self.mbti.bank_path {
            Some(p) => load_bank(p).map_err(|e| RunnerError::Config(e.to_string())),
            None => Ok(QuestionBank::synthetic()),
        }
    }

    pub fn analysis_inputs(&self) -> Result<AnalysisInputs, RunnerError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map(|t| parse_word_list(&t))
                .map_err(|e| RunnerError::Config(format!("{}: {e}", p.display())))
        };
        let environment_words = match &self.analysis.environment_words_path {
            Some(p) => read(p)?,
            None => DEFAULT_ENVIRONMENT_WORDS.iter().map(|w| w.to_string()).collect(),
        };
        let stopwords = match &self.analysis.stopwords_path {
            Some(p) => read(p)?,
            None => default_stopwords(),
        };
        Ok(AnalysisInputs {
            environment_words,
            stopwords,
            top_words: self.analysis.top_words,
            judge: self.analysis.judge,
        })
    }
}

/// Word lists and settings the metrics depend on, frozen into each manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisInputs {
    pub environment_words: Vec<String>,
    pub stopwords: Vec<String>,
    pub top_words: usize,
    pub judge: JudgeKind,
}

impl Default for AnalysisInputs {
    fn default() -> Self {
        Config::default().analysis_inputs().expect("defaults need no files")
    }
}
