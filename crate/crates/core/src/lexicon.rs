//! Model-free text metrics over a transcript: hashtags, move counts, stay
//! events, word frequencies and hallucinated environment features.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, CallKey, GenerationParams, Phase};
use crate::cluster::ClusterTimeline;
use crate::exec::Execution;
use crate::transcript::{AgentStepRecord, Transcript};
use crate::world::{AgentId, MoveCommand, Position};

/// Environment features counted as hallucinations when no word list is configured.
pub const DEFAULT_ENVIRONMENT_WORDS: [&str; 4] = ["cave", "hill", "treasure", "trees"];

pub fn default_stopwords() -> Vec<String> {
    include_str!("../assets/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parse a one-word-per-line list; blank lines and `#` comments are skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|w| !w.is_empty() && !w.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

fn hashtag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#[\p{L}\p{N}_-]+").unwrap())
}

/// Lowercased hashtags in order of first occurrence, without repeats.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for m in hashtag_re().find_iter(text) {
        let tag = m.as_str().to_lowercase();
        if !seen.contains(&tag) {
            seen.push(tag);
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashtagStats {
    pub tag: String,
    pub first_step: u32,
    /// Lowest agent id using the tag at `first_step`.
    pub first_agent: AgentId,
    /// `presence[i]` is true when some message at step `i + 1` carries the tag.
    pub presence: Vec<bool>,
    pub lifespan: u32,
}

/// Longest run of consecutive `true`s.
pub fn longest_run(presence: &[bool]) -> u32 {
    let mut best = 0;
    let mut cur = 0;
    for &p in presence {
        cur = if p { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

fn tags_by_step(transcript: &Transcript) -> Vec<Vec<(AgentId, Vec<String>)>> {
    transcript
        .records
        .iter()
        .map(|r| {
            r.agents
                .iter()
                .map(|a| (a.agent, extract_hashtags(&a.message)))
                .collect()
        })
        .collect()
}

/// Population-wide statistics per tag, ordered by first step then tag.
pub fn hashtag_stats(transcript: &Transcript) -> Vec<HashtagStats> {
    let steps = transcript.num_steps();
    let mut stats: BTreeMap<String, HashtagStats> = BTreeMap::new();
    for (i, per_agent) in tags_by_step(transcript).into_iter().enumerate() {
        for (agent, tags) in per_agent {
            for tag in tags {
                let entry = stats.entry(tag.clone()).or_insert_with(|| HashtagStats {
                    tag,
                    first_step: i as u32 + 1,
                    first_agent: agent,
                    presence: vec![false; steps],
                    lifespan: 0,
                });
                entry.presence[i] = true;
            }
        }
    }
    let mut out: Vec<HashtagStats> = stats
        .into_values()
        .map(|mut s| {
            s.lifespan = longest_run(&s.presence);
            s
        })
        .collect();
    out.sort_by(|a, b| a.first_step.cmp(&b.first_step).then(a.tag.cmp(&b.tag)));
    out
}

/// Cumulative count of distinct tags seen up to each step.
pub fn unique_hashtag_progression(transcript: &Transcript) -> Vec<usize> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    tags_by_step(transcript)
        .into_iter()
        .map(|per_agent| {
            for (_, tags) in per_agent {
                seen.extend(tags);
            }
            seen.len()
        })
        .collect()
}

pub fn hashtag_lifespans(transcript: &Transcript) -> BTreeMap<String, u32> {
    hashtag_stats(transcript)
        .into_iter()
        .map(|s| (s.tag, s.lifespan))
        .collect()
}

/// Lifespans counted separately inside each (stable) cluster label.
pub fn hashtag_lifespans_by_cluster(
    transcript: &Transcript,
    timeline: &ClusterTimeline,
) -> BTreeMap<(u32, String), u32> {
    let steps = transcript.num_steps();
    let mut presence: BTreeMap<(u32, String), Vec<bool>> = BTreeMap::new();
    for (i, per_agent) in tags_by_step(transcript).into_iter().enumerate() {
        for (agent, tags) in per_agent {
            let Some(label) = timeline.label(i as u32 + 1, agent).and_then(|l| l.cluster()) else {
                continue;
            };
            for tag in tags {
                presence
                    .entry((label, tag))
                    .or_insert_with(|| vec![false; steps])[i] = true;
            }
        }
    }
    presence
        .into_iter()
        .map(|(k, p)| (k, longest_run(&p)))
        .collect()
}

/// Counts per move command in canonical order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounts(pub [u64; 5]);

impl MoveCounts {
    pub fn get(&self, cmd: MoveCommand) -> u64 {
        self.0[cmd.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

pub fn move_distribution(transcript: &Transcript) -> MoveCounts {
    let mut counts = MoveCounts::default();
    for rec in transcript.agent_records() {
        counts.0[rec.move_parsed.index()] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StayEvent {
    pub agent: AgentId,
    pub step: u32,
    pub position: Position,
    pub in_cluster: bool,
}

pub fn stay_events(transcript: &Transcript, timeline: &ClusterTimeline) -> Vec<StayEvent> {
    transcript
        .agent_records()
        .filter(|r| r.move_parsed == MoveCommand::Stay)
        .map(|r| StayEvent {
            agent: r.agent,
            step: r.step,
            position: r.position_before(),
            in_cluster: timeline.in_cluster(r.step, r.agent),
        })
        .collect()
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{Alphabetic}+").unwrap())
}

/// Top-`k` lowercase words in one agent's messages; ties broken alphabetically.
pub fn word_frequencies(
    transcript: &Transcript,
    agent: AgentId,
    k: usize,
    stopwords: &[String],
) -> Vec<(String, usize)> {
    let stop: BTreeSet<&str> = stopwords.iter().map(String::as_str).collect();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for rec in transcript.agent_records().filter(|r| r.agent == agent) {
        let lower = rec.message.to_lowercase();
        for w in word_re().find_iter(&lower) {
            if !stop.contains(w.as_str()) {
                *counts.entry(w.as_str().to_string()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Words of `words` that occur in `text` as whole words, case-insensitively,
/// in list order and without repeats.
pub fn lexicon_matches(text: &str, words: &[String]) -> Vec<String> {
    let lower = text.to_lowercase();
    let tokens: BTreeSet<&str> = word_re().find_iter(&lower).map(|m| m.as_str()).collect();
    let mut out: Vec<String> = Vec::new();
    for w in words {
        let w = w.to_lowercase();
        let hit = if w.chars().all(char::is_alphabetic) {
            tokens.contains(w.as_str())
        } else {
            // multi-word entries like "cave system"
            contains_phrase(&lower, &w)
        };
        if hit && !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    haystack.match_indices(phrase).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + phrase.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HallucinationSource {
    Lexicon,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallucinationEvent {
    pub step: u32,
    pub agent: AgentId,
    pub word: String,
    pub source: HallucinationSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HallucinationReport {
    pub events: Vec<HallucinationEvent>,
    /// Judge failures: messages whose verdict is unknown. Zero for lexicon mode.
    pub failed_messages: usize,
}

impl HallucinationReport {
    pub fn is_partial(&self) -> bool {
        self.failed_messages > 0
    }
}

pub enum Judge<'a> {
    Lexicon(Vec<String>),
    Llm {
        backend: &'a dyn Backend,
        params: GenerationParams,
    },
}

impl Judge<'_> {
    pub fn default_lexicon() -> Self {
        Judge::Lexicon(DEFAULT_ENVIRONMENT_WORDS.iter().map(|w| w.to_string()).collect())
    }
}

/// Prompt asking a judge model to list environment features named in a message.
pub fn judge_prompt(message: &str) -> String {
    format!(
        "The following message was written by an agent living in a completely empty \
two-dimensional field. Nothing exists in the field except the agents themselves. \
List every word in the message that names a feature or object of the environment \
(for example a landmark, terrain, plant, building or item). Answer with the words \
separated by commas, copied exactly as they appear in the message, or answer \"none\".\n\n\
Message: \"{message}\""
    )
}

/// Split a judge reply into candidate words.
pub fn parse_judge_reply(reply: &str) -> Vec<String> {
    reply
        .split([',', '\n', ';'])
        .map(|w| {
            w.trim()
                .trim_start_matches(['-', '*', '•'])
                .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')')
                .trim()
                .trim_matches(['"', '\'', '`', '.'])
                .trim()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty() && w != "none")
        .collect()
}

/// Keep only judged words that really occur in the message, as whole words.
pub fn verify_judged(message: &str, candidates: &[String]) -> Vec<String> {
    lexicon_matches(message, candidates)
}

pub fn detect_hallucinations(transcript: &Transcript, judge: &Judge<'_>, exec: Execution) -> HallucinationReport {
    let records: Vec<&AgentStepRecord> = transcript.agent_records().collect();
    match judge {
        Judge::Lexicon(words) => {
            let events = records
                .iter()
                .flat_map(|r| {
                    lexicon_matches(&r.message, words).into_iter().map(|word| HallucinationEvent {
                        step: r.step,
                        agent: r.agent,
                        word,
                        source: HallucinationSource::Lexicon,
                    })
                })
                .collect();
            HallucinationReport {
                events,
                failed_messages: 0,
            }
        }
        Judge::Llm { backend, params } => {
            let verdicts = exec.map(&records, |r| {
                let key = CallKey::new(r.name.clone(), r.step, Phase::Judge);
                backend
                    .generate(&key, &judge_prompt(&r.message), params)
                    .map(|reply| verify_judged(&r.message, &parse_judge_reply(&reply)))
            });
            let mut report = HallucinationReport::default();
            for (r, verdict) in records.iter().zip(verdicts) {
                match verdict {
                    Ok(words) => report.events.extend(words.into_iter().map(|word| HallucinationEvent {
                        step: r.step,
                        agent: r.agent,
                        word,
                        source: HallucinationSource::Judge,
                    })),
                    Err(e) => {
                        tracing::warn!(agent = %r.name, step = r.step, "judge failed: {e}");
                        report.failed_messages += 1;
                    }
                }
            }
            report
        }
    }
}
