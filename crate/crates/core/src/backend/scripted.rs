//! Deterministic scripted backend.
//!
//! Replies come from a table keyed by `(agent, step, phase)`. Calls without a
//! table entry get templated text derived only from the key, the prompt and
//! the fallback seed, so repeated runs produce identical bytes whatever order
//! the calls complete in. The fallback echoes hashtags and environment words
//! it finds in the prompt, which gives demo runs some diffusion to measure.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{check_prompt, Backend, BackendError, CallKey, GenerationParams, Phase};
use crate::lexicon::{extract_hashtags, lexicon_matches, DEFAULT_ENVIRONMENT_WORDS};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptRecord {
    agent: String,
    step: u32,
    phase: Phase,
    text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptTable {
    entries: HashMap<(String, u32, Phase), String>,
}

impl ScriptTable {
    pub fn insert(&mut self, key: CallKey, text: impl Into<String>) -> Option<String> {
        self.entries
            .insert((key.agent, key.step, key.phase), text.into())
    }

    pub fn get(&self, key: &CallKey) -> Option<&str> {
        // HashMap<(String, ..)> cannot be probed with borrowed parts.
        self.entries
            .get(&(key.agent.clone(), key.step, key.phase))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parse line-delimited `{agent, step, phase, text}` records. Blank lines are skipped.
pub fn parse_script(text: &str) -> Result<ScriptTable, BackendError> {
    let mut table = ScriptTable::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScriptRecord = serde_json::from_str(line).map_err(|e| BackendError::Script {
            line: line_no,
            message: e.to_string(),
        })?;
        let key = CallKey::new(rec.agent, rec.step, rec.phase);
        let desc = format!("{} step {} {}", key.agent, key.step, key.phase);
        if table.insert(key, rec.text).is_some() {
            return Err(BackendError::Script {
                line: line_no,
                message: format!("duplicate entry for {desc}"),
            });
        }
    }
    Ok(table)
}

pub fn load_script(path: &Path) -> Result<ScriptTable, BackendError> {
    let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_script(&text)
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    table: ScriptTable,
    fallback_seed: u64,
}

impl ScriptedBackend {
    pub fn new(table: ScriptTable, fallback_seed: u64) -> Self {
        Self {
            table,
            fallback_seed,
        }
    }

    pub fn table(&self) -> &ScriptTable {
        &self.table
    }
}

impl Backend for ScriptedBackend {
    fn generate(
        &self,
        key: &CallKey,
        prompt: &str,
        _params: &GenerationParams,
    ) -> Result<String, BackendError> {
        check_prompt(key, prompt)?;
        Ok(match self.table.get(key) {
            Some(text) => text.to_string(),
            None => fallback_text(key, prompt, self.fallback_seed),
        })
    }

    fn descriptor(&self) -> String {
        format!(
            "scripted(entries={}, fallback_seed={})",
            self.table.len(),
            self.fallback_seed
        )
    }
}

fn seeded_rng(key: &CallKey, prompt: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.phase.as_str().as_bytes());
    h.update([0]);
    h.update(key.agent.as_bytes());
    h.update([0]);
    h.update(key.step.to_le_bytes());
    h.update(prompt.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

const OPENERS: &[&str] = &[
    "Hello everyone, this is {agent}.",
    "Hi, {agent} here.",
    "Greetings from {agent}!",
    "{agent} checking in.",
];

const BODIES: &[&str] = &[
    "I am exploring this open field.",
    "Does anyone want to team up?",
    "I wonder what lies beyond the horizon.",
    "Let's share what we have seen so far.",
    "I think we should stick together.",
    "The field feels quiet today.",
    "Is anybody out there?",
];

const COINED_TAGS: &[&str] = &[
    "#cooperation",
    "#explore",
    "#friendship",
    "#teamwork",
    "#adventure",
    "#community",
];

const EXTRA_FEATURES: &[&str] = &["river", "forest", "lake"];

const MOVE_PHRASES: &[(&str, usize)] = &[
    ("x+1", 0),
    ("I will move x+1.", 0),
    ("Let's head east!", 0),
    ("Moving right to explore.", 0),
    ("x-1", 1),
    ("I'll go west for a while.", 1),
    ("Heading left.", 1),
    ("y+1", 2),
    ("I will go north.", 2),
    ("Moving up.", 2),
    ("y-1", 3),
    ("Going south now.", 3),
    ("I'll move down a bit.", 3),
    ("stay", 4),
    ("I will stay still and listen.", 4),
    ("I'd rather remain here.", 4),
];

const UNPARSEABLE: &[&str] = &["Hmm, I am not sure yet.", "Let me think about it."];

/// Deterministic reply used when the script has no entry for `key`.
pub fn fallback_text(key: &CallKey, prompt: &str, seed: u64) -> String {
    let mut rng = seeded_rng(key, prompt, seed);
    match key.phase {
        Phase::Message => fallback_message(&mut rng, key, prompt),
        Phase::Memory => fallback_memory(&mut rng, key, prompt),
        Phase::Move => {
            if rng.random_bool(0.05) {
                UNPARSEABLE.choose(&mut rng).unwrap().to_string()
            } else {
                MOVE_PHRASES.choose(&mut rng).unwrap().0.to_string()
            }
        }
        Phase::Mbti => {
            let letter = if rng.random_bool(0.5) { "A" } else { "B" };
            let phrasing = [
                "{c}",
                "I would choose {c}.",
                "Option {c} fits me better.",
                "{c}, because it suits me.",
            ];
            phrasing.choose(&mut rng).unwrap().replace("{c}", letter)
        }
        Phase::Judge => "none".to_string(),
    }
}

fn features_in(prompt: &str) -> Vec<String> {
    let mut words: Vec<String> = DEFAULT_ENVIRONMENT_WORDS
        .iter()
        .chain(EXTRA_FEATURES)
        .map(|w| w.to_string())
        .collect();
    words.retain(|w| !lexicon_matches(prompt, std::slice::from_ref(w)).is_empty());
    words
}

fn fallback_message(rng: &mut ChaCha8Rng, key: &CallKey, prompt: &str) -> String {
    let mut parts = vec![
        OPENERS.choose(rng).unwrap().replace("{agent}", &key.agent),
        BODIES.choose(rng).unwrap().to_string(),
    ];
    for feature in features_in(prompt) {
        if rng.random_bool(0.5) {
            parts.push(format!("I heard there is a {feature} around here."));
        }
    }
    if rng.random_bool(0.03) {
        let all: Vec<&str> = DEFAULT_ENVIRONMENT_WORDS
            .iter()
            .chain(EXTRA_FEATURES)
            .copied()
            .collect();
        parts.push(format!("I think I see a {} nearby.", all.choose(rng).unwrap()));
    }
    let mut tags: Vec<String> = extract_hashtags(prompt)
        .into_iter()
        .filter(|_| rng.random_bool(0.8))
        .take(3)
        .collect();
    if rng.random_bool(0.04) {
        let coined = if rng.random_bool(0.3) {
            format!("#{}", key.agent)
        } else {
            COINED_TAGS.choose(rng).unwrap().to_string()
        };
        if !tags.contains(&coined) {
            tags.push(coined);
        }
    }
    if !tags.is_empty() {
        parts.push(tags.join(" "));
    }
    parts.join(" ")
}

fn fallback_memory(rng: &mut ChaCha8Rng, key: &CallKey, prompt: &str) -> String {
    let mut kept: Vec<String> = extract_hashtags(prompt);
    kept.extend(features_in(prompt));
    kept.retain(|_| rng.random_bool(0.85));
    let mut out = format!("I am {} and I keep exploring the field.", key.agent);
    if !kept.is_empty() {
        out.push_str(" On my mind: ");
        out.push_str(&kept.join(", "));
        out.push('.');
    }
    out
}
