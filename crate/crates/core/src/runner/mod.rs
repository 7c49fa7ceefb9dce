//! Reproducible runs on disk: configuration, run directories, manifests,
//! metric export, personality checkpoints and the range sweep.
//!
//! A run directory holds:
//!
//! ```text
//! manifest.json          written before step 1, finalized at the end
//! transcript.jsonl       one line per (step, agent), flushed per step
//! metrics/*.tsv          see [`metrics::METRIC_FILES`]
//! mbti/                  results.json plus one summary table per checkpoint
//! ```

pub mod config;
mod manifest;
pub mod metrics;
mod run;
mod sweep;

use std::path::{Path, PathBuf};

pub use config::{AnalysisInputs, Config, JudgeKind, Overrides, SweepConfig};
pub use manifest::{RunManifest, RunStatus, SCHEMA_VERSION};
pub use metrics::{compute_metrics, RunMetrics, METRICS_DIR, METRIC_FILES};
pub use run::{
    cmd_analyze, cmd_mbti, cmd_run, cmd_run_with, load_run, AgentMbti, AnalyzeOutcome, CheckpointResults, LoadedRun,
    RunOutcome, MANIFEST_FILE, MBTI_DIR, MBTI_RESULTS_FILE, TRANSCRIPT_FILE,
};
pub use sweep::{
    cmd_sweep, cmd_sweep_with, trial_dir, SweepManifest, SweepOutcome, TrialEntry, AGGREGATE_DIR, AGGREGATE_FILES,
    SWEEP_MANIFEST_FILE,
};

use crate::transcript::TranscriptError;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Transcript {
        path: PathBuf,
        #[source]
        source: TranscriptError,
    },
    #[error("{0}")]
    Invalid(String),
}

impl RunnerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            RunnerError::Backend(_) => 3,
            _ => 1,
        }
    }
}

/// Refuse to reuse a directory that already has content.
pub(crate) fn ensure_fresh_dir(dir: &Path) -> Result<(), RunnerError> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| RunnerError::io(dir, e))?;
        if entries.next().is_some() {
            return Err(RunnerError::Config(format!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
    }
    Ok(())
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| RunnerError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::Invalid(format!("{}: {e}", path.display())))
}
