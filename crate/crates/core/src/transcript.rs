//! Per-step records and their line-delimited on-disk form.
//!
//! `transcript.jsonl` holds one JSON object per (step, agent), steps ascending
//! and agents ascending within a step. The run configuration lives in the
//! run manifest next to it.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::world::{AgentId, InboxEntry, MoveCommand, Position, WorldConfig};

/// One agent's slice of one step. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentStepRecord {
    pub step: u32,
    pub agent: AgentId,
    pub name: String,
    pub x_before: u32,
    pub y_before: u32,
    pub message: String,
    /// Messages delivered this step (the ones the memory prompt saw).
    pub inbox: Vec<InboxEntry>,
    pub memory: String,
    pub move_raw: String,
    pub move_parsed: MoveCommand,
    pub parse_ok: bool,
    pub x_after: u32,
    pub y_after: u32,
}

impl AgentStepRecord {
    pub fn position_before(&self) -> Position {
        Position::new(self.x_before, self.y_before)
    }

    pub fn position_after(&self) -> Position {
        Position::new(self.x_after, self.y_after)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub step: u32,
    /// Indexed by agent id.
    pub agents: Vec<AgentStepRecord>,
}

impl StepRecord {
    pub fn positions_before(&self) -> Vec<Position> {
        self.agents.iter().map(AgentStepRecord::position_before).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub config: WorldConfig,
    pub backend: String,
    pub template_digest: String,
    pub records: Vec<StepRecord>,
}

impl Transcript {
    pub fn num_steps(&self) -> usize {
        self.records.len()
    }

    pub fn num_agents(&self) -> usize {
        self.config.num_agents
    }

    pub fn agent_records(&self) -> impl Iterator<Item = &AgentStepRecord> {
        self.records.iter().flat_map(|r| r.agents.iter())
    }

    /// True when every configured step is present.
    pub fn is_complete(&self) -> bool {
        self.records.len() == self.config.num_steps as usize
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("transcript line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("transcript io: {0}")]
    Io(#[from] io::Error),
}

/// Appends whole steps and flushes after each one.
pub struct TranscriptWriter<W: Write> {
    out: W,
}

impl<W: Write> TranscriptWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append(&mut self, step: &StepRecord) -> io::Result<()> {
        for rec in &step.agents {
            serde_json::to_writer(&mut self.out, rec)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_records<W: Write>(out: W, records: &[StepRecord]) -> io::Result<()> {
    let mut w = TranscriptWriter::new(out);
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[StepRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

/// Read records for `num_agents` agents, checking contiguity and completeness.
pub fn read_records<R: BufRead>(input: R, num_agents: usize) -> Result<Vec<StepRecord>, TranscriptError> {
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut last_line = 0;
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        last_line = line_no;
        let corrupt = |message: String| TranscriptError::Corrupt { line: line_no, message };
        if line.trim().is_empty() {
            return Err(corrupt("blank line".into()));
        }
        let rec: AgentStepRecord =
            serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;

        let open_step = steps.last().filter(|s| s.agents.len() < num_agents).map(|s| s.step);
        let expected_step = open_step.unwrap_or(steps.len() as u32 + 1);
        if rec.step != expected_step {
            return Err(corrupt(format!("expected step {expected_step}, found {}", rec.step)));
        }
        if open_step.is_none() {
            steps.push(StepRecord {
                step: rec.step,
                agents: Vec::with_capacity(num_agents),
            });
        }
        let current = steps.last_mut().unwrap();
        let expected_agent = current.agents.len();
        if rec.agent != expected_agent {
            return Err(corrupt(format!("expected agent {expected_agent}, found {}", rec.agent)));
        }
        current.agents.push(rec);
    }
    if let Some(last) = steps.last() {
        if last.agents.len() != num_agents {
            return Err(TranscriptError::Corrupt {
                line: last_line,
                message: format!(
                    "step {} is truncated ({} of {num_agents} agents)",
                    last.step,
                    last.agents.len()
                ),
            });
        }
    }
    Ok(steps)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn record(step: u32, agent: AgentId, message: &str) -> AgentStepRecord {
        AgentStepRecord {
            step,
            agent,
            name: format!("agent{agent}"),
            x_before: 1,
            y_before: 2,
            message: message.into(),
            inbox: vec![],
            memory: "m".into(),
            move_raw: "stay".into(),
            move_parsed: MoveCommand::Stay,
            parse_ok: true,
            x_after: 1,
            y_after: 2,
        }
    }

    fn steps(n_steps: u32, n_agents: usize) -> Vec<StepRecord> {
        (1..=n_steps)
            .map(|s| StepRecord {
                step: s,
                agents: (0..n_agents).map(|a| record(s, a, "hi")).collect(),
            })
            .collect()
    }

    #[test]
    fn line_has_exact_field_order() {
        let line = serde_json::to_string(&record(1, 0, "hello")).unwrap();
        let keys: Vec<&str> = [
            "step", "agent", "name", "x_before", "y_before", "message", "inbox", "memory",
            "move_raw", "move_parsed", "parse_ok", "x_after", "y_after",
        ]
        .to_vec();
        let mut pos = 0;
        for k in keys {
            let at = line[pos..].find(&format!("\"{k}\":")).unwrap_or_else(|| panic!("{k}"));
            pos += at;
        }
        assert!(line.contains("\"move_parsed\":\"stay\""));
        assert!(line.contains("\"inbox\":[]"));
    }

    #[test]
    fn inbox_entries_use_from_and_text() {
        let mut r = record(1, 0, "x");
        r.inbox.push(InboxEntry { from: "agent1".into(), text: "yo".into() });
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains(r#""inbox":[{"from":"agent1","text":"yo"}]"#));
    }

    #[test]
    fn reads_back_what_it_writes() {
        let recs = steps(3, 2);
        let text = to_jsonl(&recs);
        assert_eq!(text.lines().count(), 6);
        assert_eq!(read_records(text.as_bytes(), 2).unwrap(), recs);
    }

    #[test]
    fn truncated_last_line_is_reported() {
        let text = to_jsonl(&steps(2, 2));
        let cut = &text[..text.len() - 10];
        match read_records(cut.as_bytes(), 2) {
            Err(TranscriptError::Corrupt { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_agent_at_end_is_reported() {
        let text = to_jsonl(&steps(2, 2));
        let three_lines: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            read_records(three_lines.as_bytes(), 2),
            Err(TranscriptError::Corrupt { line: 3, .. })
        ));
    }

    #[test]
    fn step_gap_is_reported() {
        let mut recs = steps(3, 1);
        recs.remove(1);
        let text = to_jsonl(&recs);
        assert!(matches!(
            read_records(text.as_bytes(), 1),
            Err(TranscriptError::Corrupt { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn write_read_write_is_identity(
            texts in proptest::collection::vec(".*", 1..6),
            inbox_text in "\\PC*",
        ) {
            let recs: Vec<StepRecord> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut r = record(i as u32 + 1, 0, t);
                    r.memory = format!("{t}\n\"quoted\"");
                    r.inbox.push(InboxEntry { from: "agent9".into(), text: inbox_text.clone() });
                    StepRecord { step: i as u32 + 1, agents: vec![r] }
                })
                .collect();
            let first = to_jsonl(&recs);
            let back = read_records(first.as_bytes(), 1).unwrap();
            prop_assert_eq!(&back, &recs);
            prop_assert_eq!(to_jsonl(&back), first);
        }
    }
}
