//! Language-model agent society on a periodic grid.
//!
//! Agents exchange messages within a Chebyshev range, rewrite their memory
//! and move, one synchronous step at a time. The crate also carries the
//! measurement side: clustering, hashtag and hallucination metrics, a
//! personality questionnaire harness and the range-sweep runner.

pub mod backend;
pub mod cluster;
pub mod exec;
pub mod lexicon;
pub mod mbti;
pub mod prompt;
pub mod runner;
pub mod step;
pub mod transcript;
pub mod world;

pub use backend::{Backend, BackendConfig, BackendError, CallKey, GenerationParams, Phase};
pub use exec::Execution;
pub use step::{parse_move, run_simulation, Engine, SimulationError};
pub use transcript::{StepRecord, Transcript};
pub use world::{AgentState, MoveCommand, Position, WorldConfig};
