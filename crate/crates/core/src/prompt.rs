//! Prompt templates for the message, memory and move phases.
//!
//! A template file is plain text with `{placeholder}` slots. Two directive
//! lines are recognized:
//!
//! * `@commands a | b | c | d | e` (move template only) sets the movement
//!   vocabulary rendered into `{commands}`. Each word must parse to a distinct
//!   move command. Defaults to the literal `x+1 | x-1 | y+1 | y-1 | stay`.
//! * `@instruction` ends the body; everything after it is the instruction
//!   text substituted for `{instruction}`. The personality harness swaps this
//!   section for a questionnaire item.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::backend::Phase;
use crate::step::parse_move;
use crate::world::{AgentState, InboxEntry, MoveCommand};

/// Text standing in for an empty inbox.
pub const NO_MESSAGES: &str = "No Messages";

pub const PLACEHOLDERS: [&str; 7] = [
    "name",
    "x",
    "y",
    "memory",
    "messages",
    "commands",
    "instruction",
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("{phase} template: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { phase: Phase, name: String },
    #[error("{phase} template: {message}")]
    Invalid { phase: Phase, message: String },
    #[error("missing template file {path}")]
    Missing { path: PathBuf },
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub phase: Phase,
    pub body: String,
    pub instruction: String,
    /// Movement vocabulary in canonical command order; empty for non-move phases.
    pub commands: Vec<String>,
    source: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap())
}

impl PromptTemplate {
    pub fn parse(phase: Phase, text: &str) -> Result<Self, TemplateError> {
        let invalid = |message: String| TemplateError::Invalid { phase, message };
        if !matches!(phase, Phase::Message | Phase::Memory | Phase::Move) {
            return Err(invalid("only message, memory and move templates exist".into()));
        }
        let mut commands: Option<Vec<String>> = None;
        let mut body = Vec::new();
        let mut instruction: Option<Vec<&str>> = None;
        for line in text.lines() {
            if let Some(instr) = instruction.as_mut() {
                instr.push(line);
            } else if line.trim_end() == "@instruction" {
                instruction = Some(Vec::new());
            } else if let Some(rest) = line.strip_prefix("@commands") {
                if phase != Phase::Move {
                    return Err(invalid("@commands is only allowed in the move template".into()));
                }
                commands = Some(rest.split('|').map(|w| w.trim().to_string()).collect());
            } else {
                body.push(line);
            }
        }
        let instruction = instruction
            .ok_or_else(|| invalid("missing @instruction section".into()))?
            .join("\n")
            .trim()
            .to_string();
        let body = body.join("\n").trim_end().to_string();

        for part in [&body, &instruction] {
            for cap in placeholder_re().captures_iter(part) {
                let name = &cap[1];
                if !PLACEHOLDERS.contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder {
                        phase,
                        name: name.to_string(),
                    });
                }
                if name == "commands" && phase != Phase::Move {
                    return Err(invalid("{commands} is only allowed in the move template".into()));
                }
            }
        }
        if placeholder_re().find_iter(&instruction).any(|m| m.as_str() == "{instruction}") {
            return Err(invalid("instruction text cannot contain {instruction}".into()));
        }
        let slots = body.matches("{instruction}").count();
        if slots != 1 {
            return Err(invalid(format!("body must contain {{instruction}} once, found {slots}")));
        }

        let commands = if phase == Phase::Move {
            let words = commands.unwrap_or_else(|| {
                MoveCommand::ALL.iter().map(|c| c.as_str().to_string()).collect()
            });
            order_vocabulary(phase, words)?
        } else {
            Vec::new()
        };

        Ok(Self {
            phase,
            body,
            instruction,
            commands,
            source: text.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }
}

/// Check the vocabulary covers every command exactly once and return it in canonical order.
fn order_vocabulary(phase: Phase, words: Vec<String>) -> Result<Vec<String>, TemplateError> {
    let invalid = |message: String| TemplateError::Invalid { phase, message };
    if words.len() != MoveCommand::ALL.len() {
        return Err(invalid(format!(
            "@commands needs {} words, got {}",
            MoveCommand::ALL.len(),
            words.len()
        )));
    }
    let mut slots: [Option<String>; 5] = Default::default();
    for word in words {
        let (cmd, ok) = parse_move(&word);
        if !ok {
            return Err(invalid(format!("command word {word:?} is not understood by the move parser")));
        }
        if slots[cmd.index()].replace(word.clone()).is_some() {
            return Err(invalid(format!("two command words map to {cmd}")));
        }
    }
    Ok(slots.into_iter().map(|w| w.unwrap()).collect())
}

/// The three templates one run uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub message: PromptTemplate,
    pub memory: PromptTemplate,
    pub moves: PromptTemplate,
}

const TEMPLATE_FILES: [(Phase, &str); 3] = [
    (Phase::Message, "message.txt"),
    (Phase::Memory, "memory.txt"),
    (Phase::Move, "move.txt"),
];

impl PromptSet {
    pub fn bundled() -> Self {
        let parse = |phase, text| PromptTemplate::parse(phase, text).expect("bundled template");
        Self {
            message: parse(Phase::Message, include_str!("../assets/templates/message.txt")),
            memory: parse(Phase::Memory, include_str!("../assets/templates/memory.txt")),
            moves: parse(Phase::Move, include_str!("../assets/templates/move.txt")),
        }
    }

    pub fn get(&self, phase: Phase) -> Option<&PromptTemplate> {
        match phase {
            Phase::Message => Some(&self.message),
            Phase::Memory => Some(&self.memory),
            Phase::Move => Some(&self.moves),
            _ => None,
        }
    }

    /// Digest over all three sources, in phase order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in [&self.message, &self.memory, &self.moves] {
            h.update(t.phase.as_str().as_bytes());
            h.update([0]);
            h.update(t.source.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn digests(&self) -> Vec<(Phase, String)> {
        [&self.message, &self.memory, &self.moves]
            .into_iter()
            .map(|t| (t.phase, t.digest()))
            .collect()
    }
}

/// Load `message.txt`, `memory.txt` and `move.txt` from `dir`.
pub fn load_templates(dir: &Path) -> Result<PromptSet, TemplateError> {
    let read = |phase: Phase, file: &str| {
        let path = dir.join(file);
        if !path.is_file() {
            return Err(TemplateError::Missing { path });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        PromptTemplate::parse(phase, &text)
    };
    let [m, mem, mv] = TEMPLATE_FILES;
    Ok(PromptSet {
        message: read(m.0, m.1)?,
        memory: read(mem.0, mem.1)?,
        moves: read(mv.0, mv.1)?,
    })
}

/// Render the inbox slot: one `sender: body` line per entry, or the empty-inbox sentinel.
pub fn render_messages(inbox: &[InboxEntry]) -> String {
    if inbox.is_empty() {
        return format!("[{NO_MESSAGES}]");
    }
    let mut out = String::from("[\n");
    for entry in inbox {
        out.push_str(&entry.from);
        out.push_str(": ");
        out.push_str(&entry.text);
        out.push('\n');
    }
    out.push(']');
    out
}

fn fill(
    template: &PromptTemplate,
    text: &str,
    agent: &AgentState,
    inbox: &[InboxEntry],
    instruction: Option<&str>,
    out: &mut String,
) {
    let mut last = 0;
    for cap in placeholder_re().captures_iter(text) {
        let m = cap.get(0).unwrap();
        out.push_str(&text[last..m.start()]);
        last = m.end();
        match &cap[1] {
            "name" => out.push_str(&agent.name),
            "x" => out.push_str(&agent.position.x.to_string()),
            "y" => out.push_str(&agent.position.y.to_string()),
            "memory" => {
                out.push('[');
                out.push_str(&agent.memory);
                out.push(']');
            }
            "messages" => out.push_str(&render_messages(inbox)),
            "commands" => {
                let quoted: Vec<String> =
                    template.commands.iter().map(|c| format!("\"{c}\"")).collect();
                out.push_str(&quoted.join(", "));
            }
            "instruction" => match instruction {
                Some(custom) => out.push_str(custom),
                None => fill(template, &template.instruction, agent, inbox, None, out),
            },
            // parse() rejects anything else
            other => unreachable!("unvalidated placeholder {other}"),
        }
    }
    out.push_str(&text[last..]);
}

/// Render `template` for `agent`. Agent data is inserted verbatim and never re-scanned.
pub fn render(template: &PromptTemplate, agent: &AgentState, inbox: &[InboxEntry]) -> String {
    let mut out = String::with_capacity(template.body.len() + agent.memory.len() + 256);
    fill(template, &template.body, agent, inbox, None, &mut out);
    out
}

/// Render with the instruction section replaced by `instruction`, inserted verbatim.
pub fn render_with_instruction(
    template: &PromptTemplate,
    agent: &AgentState,
    inbox: &[InboxEntry],
    instruction: &str,
) -> String {
    let mut out = String::with_capacity(template.body.len() + instruction.len() + 256);
    fill(template, &template.body, agent, inbox, Some(instruction), &mut out);
    out
}

/// Placeholders that actually occur in a template body or instruction.
pub fn used_placeholders(template: &PromptTemplate) -> BTreeSet<String> {
    [&template.body, &template.instruction]
        .into_iter()
        .flat_map(|t| placeholder_re().captures_iter(t).map(|c| c[1].to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Position, NO_MEMORY};

    fn agent0() -> AgentState {
        AgentState {
            id: 0,
            name: "agent0".into(),
            position: Position::new(3, 4),
            memory: NO_MEMORY.into(),
            inbox: vec![],
        }
    }

    #[test]
    fn bundled_templates_load() {
        let set = PromptSet::bundled();
        assert_eq!(set.moves.commands, vec!["x+1", "x-1", "y+1", "y-1", "stay"]);
        assert!(used_placeholders(&set.message).contains("messages"));
        assert!(!used_placeholders(&set.moves).contains("messages"));
        assert_eq!(set.digest(), PromptSet::bundled().digest());
    }

    #[test]
    fn empty_inbox_renders_sentinel() {
        let set = PromptSet::bundled();
        let p = render(&set.message, &agent0(), &[]);
        assert!(p.contains("No Messages"));
    }

    #[test]
    fn state_is_substituted_verbatim() {
        let set = PromptSet::bundled();
        let p = render(&set.message, &agent0(), &[]);
        assert!(p.contains("agent0"));
        assert!(p.contains("x=3"));
        assert!(p.contains("y=4"));
        assert!(p.contains("[no memory]"));
    }

    #[test]
    fn single_inbox_entry_is_one_line() {
        let inbox = vec![InboxEntry {
            from: "agent1".into(),
            text: "hello".into(),
        }];
        let slot = render_messages(&inbox);
        assert_eq!(slot.lines().filter(|l| l.contains("hello")).count(), 1);
        assert!(slot.lines().any(|l| l == "agent1: hello"));
        let p = render(&PromptSet::bundled().memory, &agent0(), &inbox);
        assert!(p.contains("\nagent1: hello\n"));
        assert!(!p.contains(NO_MESSAGES));
    }

    #[test]
    fn agent_text_is_not_rescanned() {
        let mut a = agent0();
        a.memory = "remember {name} and {bogus}".into();
        let p = render(&PromptSet::bundled().message, &a, &[]);
        assert!(p.contains("[remember {name} and {bogus}]"));
    }

    #[test]
    fn typo_placeholder_is_named() {
        let err = PromptTemplate::parse(Phase::Message, "Hi {nmae}\n{instruction}\n@instruction\ngo")
            .unwrap_err();
        assert_eq!(
            err,
            TemplateError::UnknownPlaceholder {
                phase: Phase::Message,
                name: "nmae".into()
            }
        );
        assert!(err.to_string().contains("{nmae}"));
    }

    #[test]
    fn direction_vocabulary_loads() {
        let t = PromptTemplate::parse(
            Phase::Move,
            "@commands right | left | up | down | stay\n{memory}\n{instruction}\n@instruction\nPick one of {commands}.",
        )
        .unwrap();
        assert_eq!(t.commands, vec!["right", "left", "up", "down", "stay"]);
        let p = render(&t, &agent0(), &[]);
        assert!(p.contains("\"right\", \"left\", \"up\", \"down\", \"stay\""));

        let shuffled = PromptTemplate::parse(
            Phase::Move,
            "@commands stay | north | south | east | west\n{instruction}\n@instruction\n{commands}",
        )
        .unwrap();
        assert_eq!(shuffled.commands, vec!["east", "west", "north", "south", "stay"]);
    }

    #[test]
    fn bad_vocabularies_are_rejected() {
        for cmds in ["right | left | up | down", "right | east | up | down | stay", "right | left | up | down | sideways"] {
            let text = format!("@commands {cmds}\n{{instruction}}\n@instruction\nx");
            assert!(PromptTemplate::parse(Phase::Move, &text).is_err(), "{cmds}");
        }
        let err = PromptTemplate::parse(Phase::Message, "{commands}\n{instruction}\n@instruction\nx");
        assert!(err.is_err());
    }

    #[test]
    fn instruction_section_is_required_and_replaceable() {
        assert!(PromptTemplate::parse(Phase::Memory, "{memory}").is_err());
        assert!(PromptTemplate::parse(Phase::Memory, "{memory}\n@instruction\nx").is_err());
        let set = PromptSet::bundled();
        let p = render_with_instruction(&set.moves, &agent0(), &[], "A. first {x}\nB. second");
        assert!(p.contains("A. first {x}\nB. second"));
        assert!(!p.contains("Decide your next movement"));
    }

    #[test]
    fn load_from_dir_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        for (_, file) in TEMPLATE_FILES {
            let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/templates").join(file);
            std::fs::copy(src, dir.path().join(file)).unwrap();
        }
        let set = load_templates(dir.path()).unwrap();
        assert_eq!(set, PromptSet::bundled());
        std::fs::remove_file(dir.path().join("memory.txt")).unwrap();
        assert!(matches!(load_templates(dir.path()), Err(TemplateError::Missing { .. })));
    }

    #[test]
    fn rendering_is_pure() {
        let set = PromptSet::bundled();
        let inbox = vec![InboxEntry { from: "agent2".into(), text: "#hi".into() }];
        assert_eq!(render(&set.memory, &agent0(), &inbox), render(&set.memory, &agent0(), &inbox));
    }
}
