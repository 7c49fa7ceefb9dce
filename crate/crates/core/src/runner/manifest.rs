use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::prompt::PromptSet;

use super::config::{AnalysisInputs, Config};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

/// Interpretation choices that affect every transcript.
pub const INTERPRETATION_NOTES: [&str; 4] = [
    "message prompts show the inbox delivered in the previous step; step 1 message prompts carry the empty-inbox sentinel",
    "memory and move prompts show the inbox delivered in the current step",
    "range 0 delivers no messages, even between agents sharing a cell",
    "all agents share one stateless backend; no conversation history is carried between calls",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub status: RunStatus,
    pub config: Config,
    pub analysis_inputs: AnalysisInputs,
    pub backend: String,
    pub template_digest: String,
    pub template_digests: BTreeMap<String, String>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub steps_completed: u32,
    pub artifacts: Vec<String>,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

pub(crate) fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(config: &Config, inputs: &AnalysisInputs, backend: String, templates: &PromptSet) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            status: RunStatus::Running,
            config: config.clone(),
            analysis_inputs: inputs.clone(),
            backend,
            template_digest: templates.digest(),
            template_digests: templates
                .digests()
                .into_iter()
                .map(|(p, d)| (p.as_str().to_string(), d))
                .collect(),
            seed: config.world.rng_seed,
            started_at: now(),
            finished_at: None,
            steps_completed: 0,
            artifacts: Vec::new(),
            notes: INTERPRETATION_NOTES.iter().map(|s| s.to_string()).collect(),
            error: None,
        }
    }

    pub fn finish(&mut self, status: RunStatus, steps: u32, error: Option<String>) {
        self.status = status;
        self.steps_completed = steps;
        self.error = error;
        self.finished_at = Some(now());
    }
}
