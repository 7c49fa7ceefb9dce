//! Binary-choice personality questionnaire: administration through a
//! backend and scoring on the four MBTI axes.
//!
//! Each item is asked with the agent's move-phase prompt, its instruction
//! section replaced by the A/B item. Ties on an axis resolve to the
//! introspective pole (I, N, F, P) and are flagged.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, BackendError, CallKey, GenerationParams, Phase};
use crate::exec::Execution;
use crate::prompt::{render_with_instruction, PromptSet};
use crate::transcript::Transcript;
use crate::world::{agent_name, init_world_seeded, AgentState, Position, NO_MEMORY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    EI,
    SN,
    TF,
    JP,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::EI, Axis::SN, Axis::TF, Axis::JP];

    /// (first pole, second pole); percentages are reported for the first.
    pub fn poles(self) -> (Pole, Pole) {
        match self {
            Axis::EI => (Pole::E, Pole::I),
            Axis::SN => (Pole::S, Pole::N),
            Axis::TF => (Pole::T, Pole::F),
            Axis::JP => (Pole::J, Pole::P),
        }
    }

    /// Pole that wins a tie.
    pub fn tie_pole(self) -> Pole {
        self.poles().1
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.poles();
        write!(f, "{a}/{b}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pole {
    E,
    I,
    S,
    N,
    T,
    F,
    J,
    P,
}

impl Pole {
    pub fn axis(self) -> Axis {
        match self {
            Pole::E | Pole::I => Axis::EI,
            Pole::S | Pole::N => Axis::SN,
            Pole::T | Pole::F => Axis::TF,
            Pole::J | Pole::P => Axis::JP,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Pole::E => 'E',
            Pole::I => 'I',
            Pole::S => 'S',
            Pole::N => 'N',
            Pole::T => 'T',
            Pole::F => 'F',
            Pole::J => 'J',
            Pole::P => 'P',
        }
    }
}

impl fmt::Display for Pole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: String,
    pub text_a: String,
    pub text_b: String,
    pub axis: Axis,
    pub pole_a: Pole,
    pub pole_b: Pole,
}

#[derive(Debug, thiserror::Error)]
pub enum MbtiError {
    #[error("question bank line {line}: {message}")]
    Bank { line: usize, message: String },
    #[error("question bank {path}: {message}")]
    BankFile { path: PathBuf, message: String },
    #[error("{answers} answers for a bank of {questions} questions")]
    Misaligned { answers: usize, questions: usize },
    #[error("results come from different question banks")]
    BankMismatch,
    #[error("checkpoint step {step} is beyond the transcript ({available} steps)")]
    CheckpointOutOfRange { step: u32, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionBank {
    pub questions: Vec<Question>,
    digest: String,
}

impl QuestionBank {
    pub fn new(questions: Vec<Question>) -> Result<Self, MbtiError> {
        let mut ids = HashSet::new();
        for (i, q) in questions.iter().enumerate() {
            let bad = |message: String| MbtiError::Bank { line: i + 1, message };
            if q.pole_a.axis() != q.axis || q.pole_b.axis() != q.axis {
                return Err(bad(format!("poles {}/{} do not belong to axis {}", q.pole_a, q.pole_b, q.axis)));
            }
            if q.pole_a == q.pole_b {
                return Err(bad("both options map to the same pole".into()));
            }
            if !ids.insert(q.id.clone()) {
                return Err(bad(format!("duplicate id {:?}", q.id)));
            }
        }
        let mut h = Sha256::new();
        for q in &questions {
            h.update(serde_json::to_vec(q).expect("question serializes"));
            h.update(b"\n");
        }
        Ok(Self {
            questions,
            digest: hex::encode(h.finalize()),
        })
    }

    /// Twelve-item bank shipped for tests and demos (three items per axis).
    pub fn synthetic() -> Self {
        parse_bank(include_str!("../assets/mbti_synthetic.jsonl")).expect("bundled bank")
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

pub fn parse_bank(text: &str) -> Result<QuestionBank, MbtiError> {
    let mut questions = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(line).map_err(|e| MbtiError::Bank {
            line: idx + 1,
            message: e.to_string(),
        })?;
        questions.push(q);
    }
    QuestionBank::new(questions)
}

pub fn load_bank(path: &Path) -> Result<QuestionBank, MbtiError> {
    let text = std::fs::read_to_string(path).map_err(|e| MbtiError::BankFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_bank(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    A,
    B,
    Abstain,
}

fn choice_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[AB]\b").unwrap())
}

fn option_key(text: &str) -> String {
    text.trim().trim_end_matches(['?', '.', '!']).to_lowercase()
}

/// Read a choice out of a free-text reply: the first standalone `A`/`B`,
/// otherwise an unambiguous quote of one option's text.
pub fn parse_choice(reply: &str, question: &Question) -> Option<Answer> {
    if let Some(m) = choice_re().find(reply) {
        return Some(if m.as_str() == "A" { Answer::A } else { Answer::B });
    }
    let lower = reply.to_lowercase();
    let a = lower.contains(&option_key(&question.text_a));
    let b = lower.contains(&option_key(&question.text_b));
    match (a, b) {
        (true, false) => Some(Answer::A),
        (false, true) => Some(Answer::B),
        _ => None,
    }
}

pub fn question_instruction(q: &Question) -> String {
    format!(
        "Answer the following question by choosing A or B.\nA. {}\nB. {}\nReply with A or B.",
        q.text_a, q.text_b
    )
}

const REASK: &str = "\nYour previous reply could not be understood. Reply with the single letter A or B.";

/// What an agent looks like at a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub name: String,
    pub position: Position,
    pub memory: String,
}

/// Snapshots after `step` completed steps; step 0 is the initial placement with no memory.
pub fn snapshots_at(transcript: &Transcript, step: u32) -> Result<Vec<AgentSnapshot>, MbtiError> {
    if step == 0 {
        return Ok(init_world_seeded(&transcript.config)
            .into_iter()
            .map(|s| AgentSnapshot {
                name: s.name,
                position: s.position,
                memory: NO_MEMORY.to_string(),
            })
            .collect());
    }
    let rec = transcript
        .records
        .get(step as usize - 1)
        .ok_or(MbtiError::CheckpointOutOfRange {
            step,
            available: transcript.num_steps(),
        })?;
    Ok(rec
        .agents
        .iter()
        .map(|a| AgentSnapshot {
            name: a.name.clone(),
            position: a.position_after(),
            memory: a.memory.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSheet {
    pub agent: String,
    pub checkpoint: u32,
    pub bank_digest: String,
    pub answers: Vec<Answer>,
    pub raw_replies: Vec<String>,
    /// Questions lost to backend failures (recorded as abstentions).
    pub failed: usize,
}

impl AnswerSheet {
    pub fn is_complete(&self) -> bool {
        self.failed == 0
    }
}

/// Ask every item of `bank` to one agent snapshot.
pub fn administer(
    snapshot: &AgentSnapshot,
    checkpoint: u32,
    bank: &QuestionBank,
    backend: &dyn Backend,
    templates: &PromptSet,
    params: &GenerationParams,
    exec: Execution,
) -> AnswerSheet {
    let agent = AgentState {
        id: 0,
        name: snapshot.name.clone(),
        position: snapshot.position,
        memory: snapshot.memory.clone(),
        inbox: Vec::new(),
    };
    let key = CallKey::new(snapshot.name.clone(), checkpoint, Phase::Mbti);
    let ask = |q: &Question| -> Result<(Answer, String), BackendError> {
        let instruction = question_instruction(q);
        let prompt = render_with_instruction(&templates.moves, &agent, &[], &instruction);
        let reply = backend.generate(&key, &prompt, params)?;
        if let Some(a) = parse_choice(&reply, q) {
            return Ok((a, reply));
        }
        let prompt = render_with_instruction(&templates.moves, &agent, &[], &(instruction + REASK));
        let again = backend.generate(&key, &prompt, params)?;
        let answer = parse_choice(&again, q).unwrap_or(Answer::Abstain);
        Ok((answer, again))
    };
    let results = exec.map(&bank.questions, ask);
    let mut sheet = AnswerSheet {
        agent: snapshot.name.clone(),
        checkpoint,
        bank_digest: bank.digest().to_string(),
        answers: Vec::with_capacity(bank.len()),
        raw_replies: Vec::with_capacity(bank.len()),
        failed: 0,
    };
    for r in results {
        match r {
            Ok((a, raw)) => {
                sheet.answers.push(a);
                sheet.raw_replies.push(raw);
            }
            Err(e) => {
                tracing::warn!(agent = %snapshot.name, checkpoint, "questionnaire item failed: {e}");
                sheet.failed += 1;
                sheet.answers.push(Answer::Abstain);
                sheet.raw_replies.push(String::new());
            }
        }
    }
    sheet
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisScore {
    pub axis: Axis,
    pub first_count: u32,
    pub second_count: u32,
    pub abstentions: u32,
    /// Share of the first pole among non-abstained answers; `None` if all abstained.
    pub first_pct: Option<f64>,
    pub second_pct: Option<f64>,
    pub tie: bool,
    /// Winning letter, or `?` when every answer on the axis abstained.
    pub letter: char,
}

impl AxisScore {
    pub fn undetermined(&self) -> bool {
        self.letter == '?'
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbtiResult {
    pub bank_digest: String,
    pub axes: Vec<AxisScore>,
    pub type_code: String,
    pub incomplete: bool,
}

impl MbtiResult {
    pub fn axis(&self, axis: Axis) -> &AxisScore {
        &self.axes[axis.index()]
    }

    pub fn has_tie(&self) -> bool {
        self.axes.iter().any(|a| a.tie)
    }

    pub fn has_undetermined(&self) -> bool {
        self.axes.iter().any(AxisScore::undetermined)
    }
}

pub fn score(answers: &[Answer], bank: &QuestionBank) -> Result<MbtiResult, MbtiError> {
    if answers.len() != bank.len() {
        return Err(MbtiError::Misaligned {
            answers: answers.len(),
            questions: bank.len(),
        });
    }
    let mut tallies = [(0u32, 0u32, 0u32); 4];
    for (q, a) in bank.questions.iter().zip(answers) {
        let t = &mut tallies[q.axis.index()];
        let pole = match a {
            Answer::A => q.pole_a,
            Answer::B => q.pole_b,
            Answer::Abstain => {
                t.2 += 1;
                continue;
            }
        };
        if pole == q.axis.poles().0 {
            t.0 += 1;
        } else {
            t.1 += 1;
        }
    }
    let axes: Vec<AxisScore> = Axis::ALL
        .iter()
        .map(|&axis| {
            let (first, second, abstain) = tallies[axis.index()];
            let answered = first + second;
            let (p1, p2) = axis.poles();
            let letter = if answered == 0 {
                '?'
            } else if first > second {
                p1.letter()
            } else if second > first {
                p2.letter()
            } else {
                axis.tie_pole().letter()
            };
            let pct = |n: u32| (answered > 0).then(|| 100.0 * n as f64 / answered as f64);
            AxisScore {
                axis,
                first_count: first,
                second_count: second,
                abstentions: abstain,
                first_pct: pct(first),
                second_pct: pct(second),
                tie: answered > 0 && first == second,
                letter,
            }
        })
        .collect();
    Ok(MbtiResult {
        bank_digest: bank.digest().to_string(),
        type_code: axes.iter().map(|a| a.letter).collect(),
        axes,
        incomplete: false,
    })
}

/// Score a sheet, carrying over its failure flag.
pub fn score_sheet(sheet: &AnswerSheet, bank: &QuestionBank) -> Result<MbtiResult, MbtiError> {
    if sheet.bank_digest != bank.digest() {
        return Err(MbtiError::BankMismatch);
    }
    let mut r = score(&sheet.answers, bank)?;
    r.incomplete = !sheet.is_complete();
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbtiComparison {
    /// Change of the first-pole percentage per axis; `None` when either side is undetermined.
    pub deltas: Vec<Option<f64>>,
    pub changed: BTreeSet<Axis>,
}

pub fn compare_results(before: &MbtiResult, after: &MbtiResult) -> Result<MbtiComparison, MbtiError> {
    if before.bank_digest != after.bank_digest {
        return Err(MbtiError::BankMismatch);
    }
    let deltas = before
        .axes
        .iter()
        .zip(&after.axes)
        .map(|(b, a)| Some(a.first_pct? - b.first_pct?))
        .collect();
    let changed = before
        .axes
        .iter()
        .zip(&after.axes)
        .filter(|(b, a)| b.letter != a.letter)
        .map(|(b, _)| b.axis)
        .collect();
    Ok(MbtiComparison { deltas, changed })
}

/// Administer and score every agent at one checkpoint.
pub fn assess_checkpoint(
    transcript: &Transcript,
    checkpoint: u32,
    bank: &QuestionBank,
    backend: &dyn Backend,
    templates: &PromptSet,
    params: &GenerationParams,
    exec: Execution,
) -> Result<Vec<(AnswerSheet, MbtiResult)>, MbtiError> {
    let snaps = snapshots_at(transcript, checkpoint)?;
    // agents in parallel, items within an agent sequentially
    let sheets = exec.map(&snaps, |s| {
        administer(s, checkpoint, bank, backend, templates, params, Execution::Sequential)
    });
    sheets
        .into_iter()
        .map(|sheet| {
            let r = score_sheet(&sheet, bank)?;
            Ok((sheet, r))
        })
        .collect()
}

/// Name used for an agent id in result tables.
pub fn result_label(id: usize) -> String {
    agent_name(id)
}
