use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::exec::Execution;
use crate::mbti::{assess_checkpoint, compare_results, AnswerSheet, Axis, MbtiResult, QuestionBank};
use crate::prompt::PromptSet;
use crate::step::{Engine, SimulationError};
use crate::transcript::{read_records, Transcript, TranscriptWriter};

use super::config::{AnalysisInputs, Config, JudgeKind, Overrides};
use super::manifest::{RunManifest, RunStatus};
use super::metrics::{compute_metrics, write_metrics, RunMetrics, METRICS_DIR, METRIC_FILES};
use super::{ensure_fresh_dir, read_json, write_json, RunnerError, SWEEP_MANIFEST_FILE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const MBTI_DIR: &str = "mbti";
pub const MBTI_RESULTS_FILE: &str = "results.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMbti {
    pub agent: usize,
    pub sheet: AnswerSheet,
    pub result: MbtiResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResults {
    pub checkpoint: u32,
    pub agents: Vec<AgentMbti>,
}

impl CheckpointResults {
    pub fn types(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.result.type_code.clone()).collect()
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub transcript: Transcript,
    pub metrics: RunMetrics,
    pub mbti: Vec<CheckpointResults>,
}

/// Everything resolved from a config before any directory is touched.
pub(crate) struct Prepared {
    pub templates: PromptSet,
    pub inputs: AnalysisInputs,
    pub bank: Option<QuestionBank>,
}

pub(crate) fn prepare(config: &Config) -> Result<Prepared, RunnerError> {
    let templates = config.templates()?;
    let inputs = config.analysis_inputs()?;
    let bank = if config.mbti.enabled { Some(config.bank()?) } else { None };
    Ok(Prepared { templates, inputs, bank })
}

pub(crate) fn build_backend(config: &Config) -> Result<Box<dyn Backend>, RunnerError> {
    config.backend.build().map_err(|e| RunnerError::Config(e.to_string()))
}

/// Simulate, export metrics and administer configured checkpoints into `dir`.
pub fn cmd_run(config: &Config, dir: &Path) -> Result<RunOutcome, RunnerError> {
    config.validate()?;
    let backend = build_backend(config)?;
    cmd_run_with(config, backend.as_ref(), dir)
}

/// [`cmd_run`] with a caller-supplied backend in place of `config.backend`.
pub fn cmd_run_with(config: &Config, backend: &dyn Backend, dir: &Path) -> Result<RunOutcome, RunnerError> {
    config.validate()?;
    let prepared = prepare(config)?;
    ensure_fresh_dir(dir)?;
    execute_run(config, &prepared, backend, dir, config.runtime.execution)
}

pub(crate) fn execute_run(
    config: &Config,
    p: &Prepared,
    backend: &dyn Backend,
    dir: &Path,
    exec: Execution,
) -> Result<RunOutcome, RunnerError> {
    std::fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = RunManifest::start(config, &p.inputs, backend.descriptor(), &p.templates);
    write_json(&manifest_path, &manifest)?;

    let transcript_path = dir.join(TRANSCRIPT_FILE);
    let file = File::create(&transcript_path).map_err(|e| RunnerError::io(&transcript_path, e))?;
    let mut writer = TranscriptWriter::new(BufWriter::new(file));
    let engine = Engine::new(&config.world, backend, &p.templates)
        .with_params(config.generation.clone())
        .with_execution(exec);
    let judge = Some((backend, &config.generation));

    let transcript = match engine.run(|rec| writer.append(rec)) {
        Ok(t) => t,
        Err(SimulationError::Step { source, partial }) => {
            let steps = partial.num_steps() as u32;
            // the partial transcript stays analyzable
            if let Ok(m) = compute_metrics(&partial, &p.inputs, judge, exec) {
                write_metrics(dir, &partial, &m)?;
            }
            manifest.artifacts = artifact_list(false, &[]);
            manifest.finish(RunStatus::Failed, steps, Some(source.to_string()));
            write_json(&manifest_path, &manifest)?;
            return Err(RunnerError::Backend(format!(
                "{source} ({steps} complete steps kept in {})",
                transcript_path.display()
            )));
        }
        Err(SimulationError::Sink { source, .. }) => return Err(RunnerError::io(&transcript_path, source)),
    };
    drop(writer);

    let metrics = compute_metrics(&transcript, &p.inputs, judge, exec)?;
    write_metrics(dir, &transcript, &metrics)?;

    let mut mbti = Vec::new();
    if let Some(bank) = &p.bank {
        for c in config.mbti.checkpoints_for(config.world.num_steps) {
            mbti.push(administer_checkpoint(&transcript, c, bank, backend, &p.templates, config, exec)?);
        }
        write_mbti(dir, &mbti)?;
    }

    let checkpoints: Vec<u32> = mbti.iter().map(|c| c.checkpoint).collect();
    manifest.artifacts = artifact_list(true, &checkpoints);
    manifest.finish(RunStatus::Completed, transcript.num_steps() as u32, None);
    write_json(&manifest_path, &manifest)?;

    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        manifest,
        transcript,
        metrics,
        mbti,
    })
}

fn artifact_list(complete: bool, checkpoints: &[u32]) -> Vec<String> {
    let mut a = vec![TRANSCRIPT_FILE.to_string()];
    a.extend(METRIC_FILES.iter().map(|f| format!("{METRICS_DIR}/{f}")));
    if complete && !checkpoints.is_empty() {
        a.push(format!("{MBTI_DIR}/{MBTI_RESULTS_FILE}"));
        a.extend(checkpoints.iter().map(|c| format!("{MBTI_DIR}/summary_step_{c}.tsv")));
        if checkpoints.len() > 1 {
            a.push(format!("{MBTI_DIR}/comparison.tsv"));
        }
    }
    a
}

fn administer_checkpoint(
    transcript: &Transcript,
    checkpoint: u32,
    bank: &QuestionBank,
    backend: &dyn Backend,
    templates: &PromptSet,
    config: &Config,
    exec: Execution,
) -> Result<CheckpointResults, RunnerError> {
    let rows = assess_checkpoint(transcript, checkpoint, bank, backend, templates, &config.generation, exec)
        .map_err(|e| RunnerError::Config(e.to_string()))?;
    Ok(CheckpointResults {
        checkpoint,
        agents: rows
            .into_iter()
            .enumerate()
            .map(|(agent, (sheet, result))| AgentMbti { agent, sheet, result })
            .collect(),
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |p| format!("{p:.1}"))
}

pub(crate) fn summary_table(c: &CheckpointResults) -> String {
    let mut s = String::from("agent\ttype\tE_pct\tS_pct\tT_pct\tJ_pct\tabstentions\ttie_axes\tincomplete\n");
    for a in &c.agents {
        let r = &a.result;
        let ties: Vec<String> = r.axes.iter().filter(|x| x.tie).map(|x| format!("{:?}", x.axis)).collect();
        let abstain: u32 = r.axes.iter().map(|x| x.abstentions).sum();
        write!(s, "{}\t{}", a.sheet.agent, r.type_code).unwrap();
        for x in &r.axes {
            write!(s, "\t{}", pct(x.first_pct)).unwrap();
        }
        let ties = if ties.is_empty() { "-".to_string() } else { ties.join(",") };
        writeln!(s, "\t{abstain}\t{ties}\t{}", r.incomplete).unwrap();
    }
    s
}

pub(crate) fn comparison_table(before: &CheckpointResults, after: &CheckpointResults) -> Result<String, RunnerError> {
    let mut s = format!(
        "agent\tstep_{}\tstep_{}\tchanged\tdelta_E\tdelta_S\tdelta_T\tdelta_J\n",
        before.checkpoint, after.checkpoint
    );
    for (b, a) in before.agents.iter().zip(&after.agents) {
        let c = compare_results(&b.result, &a.result).map_err(|e| RunnerError::Invalid(e.to_string()))?;
        let changed: Vec<String> = Axis::ALL
            .iter()
            .filter(|x| c.changed.contains(x))
            .map(|x| format!("{x:?}"))
            .collect();
        let changed = if changed.is_empty() { "-".to_string() } else { changed.join(",") };
        write!(s, "{}\t{}\t{}\t{changed}", b.sheet.agent, b.result.type_code, a.result.type_code).unwrap();
        for d in &c.deltas {
            write!(s, "\t{}", pct(*d)).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

fn write_mbti(dir: &Path, results: &[CheckpointResults]) -> Result<(), RunnerError> {
    let mdir = dir.join(MBTI_DIR);
    std::fs::create_dir_all(&mdir).map_err(|e| RunnerError::io(&mdir, e))?;
    write_json(&mdir.join(MBTI_RESULTS_FILE), &results)?;
    for c in results {
        let path = mdir.join(format!("summary_step_{}.tsv", c.checkpoint));
        std::fs::write(&path, summary_table(c)).map_err(|e| RunnerError::io(&path, e))?;
    }
    if let [first, .., last] = results {
        let path = mdir.join("comparison.tsv");
        std::fs::write(&path, comparison_table(first, last)?).map_err(|e| RunnerError::io(&path, e))?;
    }
    Ok(())
}

pub(crate) fn read_mbti(dir: &Path) -> Result<Vec<CheckpointResults>, RunnerError> {
    let path = dir.join(MBTI_DIR).join(MBTI_RESULTS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_json(&path)
}

#[derive(Debug)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub transcript: Transcript,
}

/// Read a run directory's manifest and transcript.
pub fn load_run(dir: &Path) -> Result<LoadedRun, RunnerError> {
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let path = dir.join(TRANSCRIPT_FILE);
    let file = File::open(&path).map_err(|e| RunnerError::io(&path, e))?;
    let records = read_records(BufReader::new(file), manifest.config.world.num_agents)
        .map_err(|source| RunnerError::Transcript { path, source })?;
    let transcript = Transcript {
        config: manifest.config.world.clone(),
        backend: manifest.backend.clone(),
        template_digest: manifest.template_digest.clone(),
        records,
    };
    Ok(LoadedRun { manifest, transcript })
}

pub(crate) fn analyze_run(dir: &Path, exec: Execution) -> Result<(LoadedRun, RunMetrics), RunnerError> {
    let run = load_run(dir)?;
    let cfg = &run.manifest.config;
    let backend = match run.manifest.analysis_inputs.judge {
        JudgeKind::Llm => Some(build_backend(cfg)?),
        JudgeKind::Lexicon => None,
    };
    let judge = backend.as_deref().map(|b| (b, &cfg.generation));
    let metrics = compute_metrics(&run.transcript, &run.manifest.analysis_inputs, judge, exec)?;
    write_metrics(dir, &run.transcript, &metrics)?;
    Ok((run, metrics))
}

#[derive(Debug)]
pub enum AnalyzeOutcome {
    Run(Box<RunMetrics>),
    /// Number of trials re-analyzed.
    Sweep(usize),
}

/// Recompute metric files of a run directory, or of every trial plus the
/// aggregates of a sweep directory.
pub fn cmd_analyze(dir: &Path, exec: Execution) -> Result<AnalyzeOutcome, RunnerError> {
    if dir.join(MANIFEST_FILE).is_file() {
        let (_, m) = analyze_run(dir, exec)?;
        Ok(AnalyzeOutcome::Run(Box::new(m)))
    } else if dir.join(SWEEP_MANIFEST_FILE).is_file() {
        super::sweep::reanalyze(dir, exec).map(AnalyzeOutcome::Sweep)
    } else {
        Err(RunnerError::Invalid(format!(
            "{} holds neither {MANIFEST_FILE} nor {SWEEP_MANIFEST_FILE}",
            dir.display()
        )))
    }
}

/// Administer the questionnaire at `checkpoints` on a finished run. Results
/// for other checkpoints already on disk are kept.
pub fn cmd_mbti(
    dir: &Path,
    checkpoints: &[u32],
    overrides: &Overrides,
    bank_path: Option<&Path>,
) -> Result<Vec<CheckpointResults>, RunnerError> {
    let run = load_run(dir)?;
    let mut config = run.manifest.config.clone();
    config.apply(overrides)?;
    if let Some(p) = bank_path {
        config.mbti.bank_path = Some(p.to_path_buf());
    }
    let bank = config.bank()?;
    let templates = config.templates()?;
    let available = run.transcript.num_steps() as u32;
    if checkpoints.is_empty() {
        return Err(RunnerError::Config("no checkpoint given".into()));
    }
    if let Some(&bad) = checkpoints.iter().find(|&&c| c > available) {
        return Err(RunnerError::Config(format!(
            "checkpoint {bad} is beyond the transcript ({available} steps)"
        )));
    }
    let backend = build_backend(&config)?;
    let exec = config.runtime.execution;

    let mut results = read_mbti(dir)?;
    for &c in checkpoints {
        let fresh = administer_checkpoint(&run.transcript, c, &bank, backend.as_ref(), &templates, &config, exec)?;
        results.retain(|r| r.checkpoint != c);
        results.push(fresh);
    }
    results.sort_by_key(|r| r.checkpoint);
    let digests: Vec<&str> = results
        .iter()
        .flat_map(|r| r.agents.iter().map(|a| a.result.bank_digest.as_str()))
        .collect();
    if digests.windows(2).any(|w| w[0] != w[1]) {
        // earlier checkpoints used another bank; keep only the new ones
        results.retain(|r| checkpoints.contains(&r.checkpoint));
    }
    write_mbti(dir, &results)?;
    Ok(results)
}
