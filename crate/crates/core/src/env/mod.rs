//! The resource-collection field: three agents, one invader, six resources,
//! and a home base at the origin.

pub mod observe;
pub mod replay_log;
pub mod scenario;
pub mod state;

use thiserror::Error;

use crate::instruction::InstructionError;

pub use observe::{
    global_state_vector, observe, GlobalStateLayout, Observation, ObservationLayout, AGENT_FEATURES, SLOT_WIDTH,
};
pub use replay_log::{read_log, ReplayWriter, StepRecord, LOG_VERSION};
pub use scenario::{RewardConstants, Scenario};
pub use state::{
    Action, AgentState, Event, EventCounts, Home, InvaderState, JointAction, ResourceState, RewardBreakdown,
    StepOutcome, WorldState, N_ACTIONS,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("episode exhausted: step {time_step} of {episode_len}")]
    EpisodeExhausted { time_step: usize, episode_len: usize },
    #[error("agent index {index} out of range for {n_agents} agents")]
    AgentIndex { index: usize, n_agents: usize },
    #[error("expected {expected} actions, got {actual}")]
    ActionCount { expected: usize, actual: usize },
    #[error("agent {agent}: action index {index} out of range")]
    ActionIndex { agent: usize, index: usize },
    #[error("instructions cover {actual} agents, expected {expected}")]
    InstructionAgents { expected: usize, actual: usize },
    #[error("unsupported replay log version {0}")]
    LogVersion(u32),
    #[error(transparent)]
    Instruction(#[from] InstructionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
