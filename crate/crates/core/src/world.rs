//! Torus geometry, agent placement and movement.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type AgentId = usize;

/// Memory text every agent starts with.
pub const NO_MEMORY: &str = "no memory";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("unknown agent id {id} (world has {count} agents)")]
    UnknownAgent { id: AgentId, count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub side_length: u32,
    pub num_agents: usize,
    /// Inclusive Chebyshev reception radius.
    pub message_range: u32,
    pub num_steps: u32,
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            side_length: 50,
            num_agents: 10,
            message_range: 5,
            num_steps: 100,
            rng_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |msg: String| Err(WorldError::InvalidConfig(msg));
        if self.side_length < 1 {
            return bad("side_length must be at least 1".into());
        }
        if self.num_agents < 1 {
            return bad("num_agents must be at least 1".into());
        }
        if self.message_range > self.side_length / 2 {
            return bad(format!(
                "message_range {} exceeds half the side length ({})",
                self.message_range,
                self.side_length / 2
            ));
        }
        if self.num_steps < 1 {
            return bad("num_steps must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub x: u32,
    pub y: u32,
}

impl Position {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MoveCommand {
    #[serde(rename = "x+1")]
    XPlus,
    #[serde(rename = "x-1")]
    XMinus,
    #[serde(rename = "y+1")]
    YPlus,
    #[serde(rename = "y-1")]
    YMinus,
    #[serde(rename = "stay")]
    Stay,
}

impl MoveCommand {
    /// Canonical order, also the tie-break order of the move parser.
    pub const ALL: [MoveCommand; 5] = [
        MoveCommand::XPlus,
        MoveCommand::XMinus,
        MoveCommand::YPlus,
        MoveCommand::YMinus,
        MoveCommand::Stay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MoveCommand::XPlus => "x+1",
            MoveCommand::XMinus => "x-1",
            MoveCommand::YPlus => "y+1",
            MoveCommand::YMinus => "y-1",
            MoveCommand::Stay => "stay",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn inverse(self) -> MoveCommand {
        match self {
            MoveCommand::XPlus => MoveCommand::XMinus,
            MoveCommand::XMinus => MoveCommand::XPlus,
            MoveCommand::YPlus => MoveCommand::YMinus,
            MoveCommand::YMinus => MoveCommand::YPlus,
            MoveCommand::Stay => MoveCommand::Stay,
        }
    }
}

impl fmt::Display for MoveCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MoveCommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MoveCommand::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown move command {s:?}"))
    }
}

/// One received message as it appears in prompts and transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxEntry {
    pub from: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    pub id: AgentId,
    pub name: String,
    pub position: Position,
    pub memory: String,
    /// Messages delivered during the most recent delivery phase.
    pub inbox: Vec<InboxEntry>,
}

pub fn agent_name(id: AgentId) -> String {
    format!("agent{id}")
}

/// Chebyshev distance with periodic wrap on both axes.
pub fn torus_chebyshev(a: Position, b: Position, side: u32) -> u32 {
    let axis = |p: u32, q: u32| {
        let d = p.abs_diff(q);
        d.min(side - d)
    };
    axis(a.x, b.x).max(axis(a.y, b.y))
}

pub fn apply_move(p: Position, cmd: MoveCommand, side: u32) -> Position {
    let inc = |v: u32| (v + 1) % side;
    let dec = |v: u32| (v + side - 1) % side;
    match cmd {
        MoveCommand::XPlus => Position::new(inc(p.x), p.y),
        MoveCommand::XMinus => Position::new(dec(p.x), p.y),
        MoveCommand::YPlus => Position::new(p.x, inc(p.y)),
        MoveCommand::YMinus => Position::new(p.x, dec(p.y)),
        MoveCommand::Stay => p,
    }
}

/// Agents that hear `self_id`, in ascending id order.
///
/// Range 0 means no exchange at all, even between agents sharing a cell.
pub fn neighbors_within(
    positions: &[Position],
    self_id: AgentId,
    range: u32,
    side: u32,
) -> Result<Vec<AgentId>, WorldError> {
    let me = *positions.get(self_id).ok_or(WorldError::UnknownAgent {
        id: self_id,
        count: positions.len(),
    })?;
    if range == 0 {
        return Ok(Vec::new());
    }
    Ok(positions
        .iter()
        .enumerate()
        .filter(|&(j, &p)| j != self_id && torus_chebyshev(me, p, side) <= range)
        .map(|(j, _)| j)
        .collect())
}

/// Uniform i.i.d. placement; duplicate cells are allowed.
pub fn init_world<R: Rng + ?Sized>(config: &WorldConfig, rng: &mut R) -> Vec<AgentState> {
    (0..config.num_agents)
        .map(|id| {
            let x = rng.random_range(0..config.side_length);
            let y = rng.random_range(0..config.side_length);
            AgentState {
                id,
                name: agent_name(id),
                position: Position::new(x, y),
                memory: NO_MEMORY.to_string(),
                inbox: Vec::new(),
            }
        })
        .collect()
}

/// [`init_world`] driven by `config.rng_seed`.
pub fn init_world_seeded(config: &WorldConfig) -> Vec<AgentState> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    init_world(config, &mut rng)
}
