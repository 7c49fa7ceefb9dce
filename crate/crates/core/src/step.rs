//! The synchronous six-phase step and whole-run driver.
//!
//! Each step runs, with a barrier after every phase:
//!
//! 1. message generation from memory plus the inbox delivered last step,
//! 2. delivery of this step's messages to agents within range,
//! 3. memory generation from old memory plus the fresh inbox (replaces memory),
//! 4. move generation from the updated memory,
//! 5. move parsing,
//! 6. simultaneous position update.
//!
//! Within a phase the per-agent backend calls are independent and may run in
//! parallel; world state is only written between phases.

use std::sync::OnceLock;

use regex::Regex;

use crate::backend::{Backend, BackendError, CallKey, GenerationParams, Phase};
use crate::exec::Execution;
use crate::prompt::{render, PromptSet};
use crate::transcript::{AgentStepRecord, StepRecord, Transcript};
use crate::world::{
    apply_move, init_world_seeded, neighbors_within, AgentState, InboxEntry, MoveCommand,
    WorldConfig,
};

/// Map free text to a move command. Never fails: unrecognized text is `(Stay, false)`.
///
/// Literal tokens (`x+1`, `x-1`, `y+1`, `y-1`, `stay`) are searched first,
/// case-insensitively; the earliest one wins, ties going to canonical order.
/// Only when none occurs are direction words tried (right/east, left/west,
/// up/north, down/south, remain), again earliest first.
pub fn parse_move(text: &str) -> (MoveCommand, bool) {
    let lower = text.to_lowercase();
    if let Some(cmd) = earliest_literal(&lower) {
        return (cmd, true);
    }
    static WORDS: OnceLock<Regex> = OnceLock::new();
    let words = WORDS.get_or_init(|| Regex::new(r"[a-z]+").unwrap());
    for w in words.find_iter(&lower) {
        let cmd = match w.as_str() {
            "right" | "east" => MoveCommand::XPlus,
            "left" | "west" => MoveCommand::XMinus,
            "up" | "north" => MoveCommand::YPlus,
            "down" | "south" => MoveCommand::YMinus,
            "remain" | "remaining" => MoveCommand::Stay,
            _ => continue,
        };
        return (cmd, true);
    }
    (MoveCommand::Stay, false)
}

fn earliest_literal(lower: &str) -> Option<MoveCommand> {
    let bytes = lower.as_bytes();
    let mut best: Option<(usize, MoveCommand)> = None;
    for cmd in MoveCommand::ALL {
        let token = cmd.as_str();
        let found = lower.match_indices(token).map(|(i, _)| i).find(|&i| {
            let before = i.checked_sub(1).map(|j| bytes[j]);
            let after = bytes.get(i + token.len()).copied();
            match cmd {
                // "stay" may be inflected ("staying") but not embedded ("outstay")
                MoveCommand::Stay => !before.is_some_and(|b| b.is_ascii_alphabetic()),
                _ => {
                    !before.is_some_and(|b| b.is_ascii_alphanumeric())
                        && !after.is_some_and(|b| b.is_ascii_digit())
                }
            }
        });
        if let Some(pos) = found {
            // strict < keeps the earlier command in canonical order on ties
            if best.is_none_or(|(p, _)| pos < p) {
                best = Some((pos, cmd));
            }
        }
    }
    best.map(|(_, c)| c)
}

#[derive(Debug, thiserror::Error)]
#[error("step {step}, {agent}, {phase} phase: {source}")]
pub struct StepError {
    pub step: u32,
    pub agent: String,
    pub phase: Phase,
    #[source]
    pub source: BackendError,
}

#[derive(Debug, thiserror::Error)]
pub enum SimulationError {
    /// A step failed; `partial` holds every step completed before it.
    #[error("{source}")]
    Step {
        #[source]
        source: StepError,
        partial: Box<Transcript>,
    },
    #[error("writing step {step}: {source}")]
    Sink {
        step: u32,
        #[source]
        source: std::io::Error,
    },
}

/// Everything one run needs besides agent state.
pub struct Engine<'a> {
    pub config: &'a WorldConfig,
    pub backend: &'a dyn Backend,
    pub templates: &'a PromptSet,
    pub params: GenerationParams,
    pub exec: Execution,
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a WorldConfig, backend: &'a dyn Backend, templates: &'a PromptSet) -> Self {
        Self {
            config,
            backend,
            templates,
            params: GenerationParams::default(),
            exec: Execution::default(),
        }
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn call(&self, agent: &AgentState, step: u32, phase: Phase, prompt: &str) -> Result<String, StepError> {
        let key = CallKey::new(agent.name.clone(), step, phase);
        self.backend
            .generate(&key, prompt, &self.params)
            .map_err(|source| StepError {
                step,
                agent: agent.name.clone(),
                phase,
                source,
            })
    }

    /// Advance every agent by one step.
    pub fn run_step(
        &self,
        states: &[AgentState],
        step: u32,
    ) -> Result<(Vec<AgentState>, StepRecord), StepError> {
        let side = self.config.side_length;

        let messages = self.exec.try_map(states, |s| {
            let prompt = render(&self.templates.message, s, &s.inbox);
            self.call(s, step, Phase::Message, &prompt)
        })?;

        let positions: Vec<_> = states.iter().map(|s| s.position).collect();
        let inboxes: Vec<Vec<InboxEntry>> = states
            .iter()
            .map(|s| {
                neighbors_within(&positions, s.id, self.config.message_range, side)
                    .expect("state ids index positions")
                    .into_iter()
                    .map(|j| InboxEntry {
                        from: states[j].name.clone(),
                        text: messages[j].clone(),
                    })
                    .collect()
            })
            .collect();

        let memories = self.exec.try_map(states, |s| {
            let prompt = render(&self.templates.memory, s, &inboxes[s.id]);
            self.call(s, step, Phase::Memory, &prompt)
        })?;

        let updated: Vec<AgentState> = states
            .iter()
            .map(|s| AgentState {
                memory: memories[s.id].clone(),
                inbox: inboxes[s.id].clone(),
                ..s.clone()
            })
            .collect();

        let move_texts = self.exec.try_map(&updated, |s| {
            let prompt = render(&self.templates.moves, s, &s.inbox);
            self.call(s, step, Phase::Move, &prompt)
        })?;

        let mut next = updated;
        let mut agents = Vec::with_capacity(states.len());
        for (s, raw) in next.iter_mut().zip(move_texts) {
            let (cmd, ok) = parse_move(&raw);
            let before = s.position;
            s.position = apply_move(before, cmd, side);
            agents.push(AgentStepRecord {
                step,
                agent: s.id,
                name: s.name.clone(),
                x_before: before.x,
                y_before: before.y,
                message: messages[s.id].clone(),
                inbox: s.inbox.clone(),
                memory: s.memory.clone(),
                move_raw: raw,
                move_parsed: cmd,
                parse_ok: ok,
                x_after: s.position.x,
                y_after: s.position.y,
            });
        }
        Ok((next, StepRecord { step, agents }))
    }

    pub fn empty_transcript(&self) -> Transcript {
        Transcript {
            config: self.config.clone(),
            backend: self.backend.descriptor(),
            template_digest: self.templates.digest(),
            records: Vec::new(),
        }
    }

    /// Run all configured steps from the seeded initial placement, handing each
    /// finished step to `on_step` before starting the next.
    pub fn run<F>(&self, mut on_step: F) -> Result<Transcript, SimulationError>
    where
        F: FnMut(&StepRecord) -> std::io::Result<()>,
    {
        let mut transcript = self.empty_transcript();
        let mut states = init_world_seeded(self.config);
        for step in 1..=self.config.num_steps {
            let (next, record) = match self.run_step(&states, step) {
                Ok(v) => v,
                Err(source) => {
                    return Err(SimulationError::Step {
                        source,
                        partial: Box::new(transcript),
                    })
                }
            };
            on_step(&record).map_err(|source| SimulationError::Sink { step, source })?;
            transcript.records.push(record);
            states = next;
        }
        Ok(transcript)
    }
}

/// Convenience wrapper: run with default parameters and keep everything in memory.
pub fn run_simulation(
    config: &WorldConfig,
    backend: &dyn Backend,
    templates: &PromptSet,
) -> Result<Transcript, SimulationError> {
    Engine::new(config, backend, templates).run(|_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{parse_script, ScriptTable, ScriptedBackend};
    use crate::transcript::to_jsonl;
    use crate::world::torus_chebyshev;

    #[test]
    fn parser_examples() {
        assert_eq!(parse_move("I will move x+1 to explore"), (MoveCommand::XPlus, true));
        assert_eq!(parse_move("Let's head east!"), (MoveCommand::XPlus, true));
        assert_eq!(parse_move("The weather is lovely."), (MoveCommand::Stay, false));
        assert_eq!(parse_move(""), (MoveCommand::Stay, false));
    }

    #[test]
    fn parser_prefers_earliest_literal() {
        assert_eq!(parse_move("y-1 rather than x+1"), (MoveCommand::YMinus, true));
        assert_eq!(parse_move("Not x+10, just STAY"), (MoveCommand::Stay, true));
        assert_eq!(parse_move("go north, or x-1"), (MoveCommand::XMinus, true));
        assert_eq!(parse_move("I'm staying"), (MoveCommand::Stay, true));
        assert_eq!(parse_move("I will outstay"), (MoveCommand::Stay, false));
        assert_eq!(parse_move("setup the download"), (MoveCommand::Stay, false));
    }

    fn config(range: u32, steps: u32, agents: usize, seed: u64) -> WorldConfig {
        WorldConfig {
            side_length: 50,
            num_agents: agents,
            message_range: range,
            num_steps: steps,
            rng_seed: seed,
        }
    }

    #[test]
    fn run_has_one_record_per_agent_step() {
        let cfg = config(5, 4, 3, 1);
        let b = ScriptedBackend::new(ScriptTable::default(), 2);
        let t = run_simulation(&cfg, &b, &PromptSet::bundled()).unwrap();
        assert_eq!(t.records.len(), 4);
        for (i, r) in t.records.iter().enumerate() {
            assert_eq!(r.step, i as u32 + 1);
            assert_eq!(r.agents.len(), 3);
            for a in &r.agents {
                assert_eq!(a.position_after(), apply_move(a.position_before(), a.move_parsed, 50));
            }
        }
        let one = run_simulation(&config(5, 1, 3, 1), &b, &PromptSet::bundled()).unwrap();
        assert_eq!(one.records.len(), 1);
    }

    #[test]
    fn scripted_move_is_applied() {
        let table = parse_script(r#"{"agent":"agent3","step":7,"phase":"move","text":"y+1"}"#).unwrap();
        let b = ScriptedBackend::new(table, 0);
        let t = run_simulation(&config(5, 7, 5, 3), &b, &PromptSet::bundled()).unwrap();
        let rec = &t.records[6].agents[3];
        assert_eq!(rec.move_raw, "y+1");
        assert_eq!(rec.y_after, (rec.y_before + 1) % 50);
        assert_eq!(rec.x_after, rec.x_before);
    }

    #[test]
    fn positions_are_carried_between_steps() {
        let b = ScriptedBackend::new(ScriptTable::default(), 4);
        let t = run_simulation(&config(5, 6, 4, 8), &b, &PromptSet::bundled()).unwrap();
        for w in t.records.windows(2) {
            for (a, b) in w[0].agents.iter().zip(&w[1].agents) {
                assert_eq!(a.position_after(), b.position_before());
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let cfg = config(10, 5, 6, 21);
        let b = ScriptedBackend::new(ScriptTable::default(), 9);
        let p = PromptSet::bundled();
        let seq = Engine::new(&cfg, &b, &p).with_execution(Execution::Sequential).run(|_| Ok(())).unwrap();
        let par = Engine::new(&cfg, &b, &p).with_execution(Execution::Parallel).run(|_| Ok(())).unwrap();
        assert_eq!(to_jsonl(&seq.records), to_jsonl(&par.records));
    }

    #[test]
    fn delivery_matches_distance() {
        let cfg = config(8, 10, 8, 5);
        let b = ScriptedBackend::new(ScriptTable::default(), 1);
        let t = run_simulation(&cfg, &b, &PromptSet::bundled()).unwrap();
        for r in &t.records {
            for me in &r.agents {
                let expect: Vec<(String, String)> = r
                    .agents
                    .iter()
                    .filter(|o| o.agent != me.agent)
                    .filter(|o| torus_chebyshev(o.position_before(), me.position_before(), 50) <= 8)
                    .map(|o| (o.name.clone(), o.message.clone()))
                    .collect();
                let got: Vec<(String, String)> =
                    me.inbox.iter().map(|e| (e.from.clone(), e.text.clone())).collect();
                assert_eq!(got, expect);
            }
        }
    }

    struct FailAt(u32);
    impl Backend for FailAt {
        fn generate(&self, key: &CallKey, _: &str, _: &GenerationParams) -> Result<String, BackendError> {
            if key.step == self.0 && key.phase == Phase::Memory {
                Err(BackendError::Unavailable { attempts: 1, reason: "down".into() })
            } else {
                Ok("stay".into())
            }
        }
        fn descriptor(&self) -> String {
            "fail".into()
        }
    }

    #[test]
    fn failure_keeps_completed_prefix() {
        let cfg = config(5, 5, 2, 0);
        let mut sunk = 0;
        let err = Engine::new(&cfg, &FailAt(3), &PromptSet::bundled())
            .run(|_| {
                sunk += 1;
                Ok(())
            })
            .unwrap_err();
        assert_eq!(sunk, 2);
        match err {
            SimulationError::Step { source, partial } => {
                assert_eq!(source.step, 3);
                assert_eq!(source.phase, Phase::Memory);
                assert_eq!(partial.records.len(), 2);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
