//! Message-range sweep: ranges × trials run directories plus aggregate tables.
//!
//! ```text
//! sweep_manifest.json
//! range_{r}/trial_{t}/...        one run directory per trial
//! aggregate/moves.tsv            one row per range
//! aggregate/hashtag_progression.tsv
//! aggregate/lifespans.tsv        lifespan histogram per range
//! aggregate/mbti_types.tsv
//! aggregate/trends.tsv           unique hashtags and hallucinations, mean and std
//! aggregate/messages.jsonl       every message, for downstream text analysis
//! ```
//!
//! A failed trial is recorded in the manifest and left out of every aggregate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::exec::Execution;
use crate::lexicon::MoveCounts;
use crate::transcript::Transcript;
use crate::world::MoveCommand;

use super::config::Config;
use super::manifest::{now, RunStatus, SCHEMA_VERSION};
use super::metrics::RunMetrics;
use super::run::{analyze_run, build_backend, execute_run, prepare, read_mbti, CheckpointResults};
use super::{ensure_fresh_dir, read_json, write_json, RunnerError};

pub const SWEEP_MANIFEST_FILE: &str = "sweep_manifest.json";
pub const AGGREGATE_DIR: &str = "aggregate";
pub const AGGREGATE_FILES: [&str; 6] = [
    "moves.tsv",
    "hashtag_progression.tsv",
    "lifespans.tsv",
    "mbti_types.tsv",
    "trends.tsv",
    "messages.jsonl",
];

pub fn trial_dir(root: &Path, range: u32, trial: u32) -> PathBuf {
    root.join(format!("range_{range}")).join(format!("trial_{trial}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub range_index: usize,
    pub range: u32,
    pub trial: u32,
    pub seed: u64,
    /// Relative to the sweep directory.
    pub dir: String,
    pub status: RunStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepManifest {
    pub schema_version: u32,
    pub config: Config,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub trials: Vec<TrialEntry>,
    pub failed: usize,
    pub aggregates: Vec<String>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub manifest: SweepManifest,
}

impl SweepOutcome {
    pub fn completed(&self) -> usize {
        self.manifest.trials.len() - self.manifest.failed
    }
}

/// What the aggregates need from one finished trial.
struct TrialData {
    moves: MoveCounts,
    parse_failures: u64,
    progression: Vec<usize>,
    lifespans: Vec<u32>,
    hallucinations: usize,
    mbti: Vec<(u32, Vec<String>)>,
    messages: Vec<(u32, usize, String)>,
}

impl TrialData {
    fn new(t: &Transcript, m: &RunMetrics, mbti: &[CheckpointResults]) -> Self {
        Self {
            moves: m.total_moves(),
            parse_failures: m.parse_failures.last().copied().unwrap_or(0),
            progression: m.progression.clone(),
            lifespans: m.hashtags.iter().map(|h| h.lifespan).collect(),
            hallucinations: m.hallucinations.events.len(),
            mbti: mbti.iter().map(|c| (c.checkpoint, c.types())).collect(),
            messages: t
                .agent_records()
                .map(|r| (r.step, r.agent, r.message.clone()))
                .collect(),
        }
    }

    fn unique_hashtags(&self) -> usize {
        self.progression.last().copied().unwrap_or(0)
    }
}

/// Run every (range, trial) pair of the sweep section into `dir`.
pub fn cmd_sweep(config: &Config, dir: &Path) -> Result<SweepOutcome, RunnerError> {
    config.validate_sweep()?;
    let backend = build_backend(config)?;
    cmd_sweep_with(config, backend.as_ref(), dir)
}

/// [`cmd_sweep`] with a caller-supplied backend shared by every trial.
pub fn cmd_sweep_with(config: &Config, backend: &dyn Backend, dir: &Path) -> Result<SweepOutcome, RunnerError> {
    config.validate_sweep()?;
    let prepared = prepare(config)?;
    ensure_fresh_dir(dir)?;
    std::fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;

    let s = &config.sweep;
    let mut trials = Vec::new();
    for (ri, &range) in s.ranges.iter().enumerate() {
        for trial in 0..s.trials_per_range {
            let tdir = trial_dir(Path::new(""), range, trial);
            trials.push(TrialEntry {
                range_index: ri,
                range,
                trial,
                seed: s.trial_seed(ri, trial),
                dir: tdir.to_string_lossy().into_owned(),
                status: RunStatus::Running,
                error: None,
            });
        }
    }
    let mut manifest = SweepManifest {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        started_at: now(),
        finished_at: None,
        trials,
        failed: 0,
        aggregates: Vec::new(),
    };
    let manifest_path = dir.join(SWEEP_MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;

    let exec = config.runtime.execution;
    let results = exec.map(&manifest.trials, |t| {
        let mut cfg = config.clone();
        cfg.world.message_range = t.range;
        cfg.world.rng_seed = t.seed;
        // trials are the unit of parallelism; each run stays sequential inside
        execute_run(&cfg, &prepared, backend, &dir.join(&t.dir), Execution::Sequential)
            .map(|o| TrialData::new(&o.transcript, &o.metrics, &o.mbti))
    });

    let mut data = Vec::with_capacity(results.len());
    for (entry, r) in manifest.trials.iter_mut().zip(results) {
        match r {
            Ok(d) => {
                entry.status = RunStatus::Completed;
                data.push(Some(d));
            }
            Err(e) => {
                tracing::warn!(range = entry.range, trial = entry.trial, "trial failed: {e}");
                entry.status = RunStatus::Failed;
                entry.error = Some(e.to_string());
                data.push(None);
            }
        }
    }
    manifest.failed = data.iter().filter(|d| d.is_none()).count();
    manifest.aggregates = write_aggregates(dir, config, &manifest.trials, &data)?;
    manifest.finished_at = Some(now());
    write_json(&manifest_path, &manifest)?;
    Ok(SweepOutcome {
        dir: dir.to_path_buf(),
        manifest,
    })
}

/// Recompute every completed trial's metrics and the aggregates from disk.
pub(crate) fn reanalyze(dir: &Path, exec: Execution) -> Result<usize, RunnerError> {
    let manifest: SweepManifest = read_json(&dir.join(SWEEP_MANIFEST_FILE))?;
    let data = exec.try_map(&manifest.trials, |t| -> Result<Option<TrialData>, RunnerError> {
        if t.status != RunStatus::Completed {
            return Ok(None);
        }
        let tdir = dir.join(&t.dir);
        let (run, metrics) = analyze_run(&tdir, Execution::Sequential)?;
        let mbti = read_mbti(&tdir)?;
        Ok(Some(TrialData::new(&run.transcript, &metrics, &mbti)))
    })?;
    write_aggregates(dir, &manifest.config, &manifest.trials, &data)?;
    Ok(data.iter().flatten().count())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "-".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn write_aggregates(
    dir: &Path,
    config: &Config,
    trials: &[TrialEntry],
    data: &[Option<TrialData>],
) -> Result<Vec<String>, RunnerError> {
    let steps = config.world.num_steps as usize;
    let by_range: Vec<Vec<(&TrialEntry, &TrialData)>> = config
        .sweep
        .ranges
        .iter()
        .enumerate()
        .map(|(ri, _)| {
            trials
                .iter()
                .zip(data)
                .filter(|(t, _)| t.range_index == ri)
                .filter_map(|(t, d)| d.as_ref().map(|d| (t, d)))
                .collect()
        })
        .collect();
    let ranges = &config.sweep.ranges;
    let step_header: String = (1..=steps).map(|s| format!("\t{s}")).collect();

    let mut moves = String::from("range\ttrials");
    for c in MoveCommand::ALL {
        write!(moves, "\t{c}").unwrap();
    }
    moves.push_str("\tparse_failures\n");
    for (r, rows) in ranges.iter().zip(&by_range) {
        let mut total = MoveCounts::default();
        let mut failures = 0;
        for (_, d) in rows {
            for c in MoveCommand::ALL {
                total.0[c.index()] += d.moves.get(c);
            }
            failures += d.parse_failures;
        }
        write!(moves, "{r}\t{}", rows.len()).unwrap();
        for c in MoveCommand::ALL {
            write!(moves, "\t{}", total.get(c)).unwrap();
        }
        writeln!(moves, "\t{failures}").unwrap();
    }

    let mut progression = format!("range\tseries{step_header}\n");
    for (r, rows) in ranges.iter().zip(&by_range) {
        write!(progression, "{r}\tmean").unwrap();
        for s in 0..steps {
            let vals: Vec<f64> = rows
                .iter()
                .filter_map(|(_, d)| d.progression.get(s).map(|v| *v as f64))
                .collect();
            write!(progression, "\t{}", num(mean_std(&vals).0)).unwrap();
        }
        progression.push('\n');
        for (t, d) in rows {
            write!(progression, "{r}\ttrial_{}", t.trial).unwrap();
            for s in 0..steps {
                match d.progression.get(s) {
                    Some(v) => write!(progression, "\t{v}").unwrap(),
                    None => progression.push_str("\t-"),
                }
            }
            progression.push('\n');
        }
    }

    let mut lifespans = format!("range\ttrials\ttags{step_header}\n");
    for (r, rows) in ranges.iter().zip(&by_range) {
        let mut hist = vec![0u64; steps + 1];
        for (_, d) in rows {
            for &l in &d.lifespans {
                hist[(l as usize).min(steps)] += 1;
            }
        }
        let tags: u64 = hist.iter().sum();
        write!(lifespans, "{r}\t{}\t{tags}", rows.len()).unwrap();
        for h in &hist[1..] {
            write!(lifespans, "\t{h}").unwrap();
        }
        lifespans.push('\n');
    }

    let mut mbti = String::from("range\tcheckpoint\ttype\tcount\n");
    for (r, rows) in ranges.iter().zip(&by_range) {
        let mut tally: BTreeMap<(u32, String), u64> = BTreeMap::new();
        for (_, d) in rows {
            for (c, types) in &d.mbti {
                for ty in types {
                    *tally.entry((*c, ty.clone())).or_default() += 1;
                }
            }
        }
        for ((c, ty), n) in tally {
            writeln!(mbti, "{r}\t{c}\t{ty}\t{n}").unwrap();
        }
    }

    let mut trends = String::from(
        "range\ttrials\tunique_hashtags_mean\tunique_hashtags_std\thallucinations_mean\thallucinations_std\n",
    );
    for (r, rows) in ranges.iter().zip(&by_range) {
        let tags: Vec<f64> = rows.iter().map(|(_, d)| d.unique_hashtags() as f64).collect();
        let hall: Vec<f64> = rows.iter().map(|(_, d)| d.hallucinations as f64).collect();
        let (tm, ts) = mean_std(&tags);
        let (hm, hs) = mean_std(&hall);
        writeln!(trends, "{r}\t{}\t{}\t{}\t{}\t{}", rows.len(), num(tm), num(ts), num(hm), num(hs)).unwrap();
    }

    #[derive(Serialize)]
    struct MessageLine<'a> {
        range: u32,
        trial: u32,
        step: u32,
        agent: usize,
        message: &'a str,
    }
    let mut messages = String::new();
    for (t, d) in trials.iter().zip(data) {
        let Some(d) = d else { continue };
        for (step, agent, text) in &d.messages {
            let line = MessageLine {
                range: t.range,
                trial: t.trial,
                step: *step,
                agent: *agent,
                message: text,
            };
            messages.push_str(&serde_json::to_string(&line).expect("serializable"));
            messages.push('\n');
        }
    }

    let adir = dir.join(AGGREGATE_DIR);
    std::fs::create_dir_all(&adir).map_err(|e| RunnerError::io(&adir, e))?;
    let bodies = [moves, progression, lifespans, mbti, trends, messages];
    let mut written = Vec::new();
    for (name, body) in AGGREGATE_FILES.iter().zip(bodies) {
        let path = adir.join(name);
        std::fs::write(&path, body).map_err(|e| RunnerError::io(&path, e))?;
        written.push(format!("{AGGREGATE_DIR}/{name}"));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - 2.138089935299395).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn trial_dirs_are_nested_by_range() {
        assert_eq!(trial_dir(Path::new("s"), 15, 3), PathBuf::from("s/range_15/trial_3"));
    }
}
