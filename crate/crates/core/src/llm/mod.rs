//! Language instructions to waypoints: prompt assembly, a client (mock,
//! recorded replay, or a live endpoint), response parsing, and clipping.

pub mod client;
pub mod mock;
pub mod parse;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Scenario, WorldState};
use crate::geometry::Vec2;
use crate::instruction::InstructionVector;

pub use client::{prompt_hash, LiveClient, LlmClient, RecordingClient, ReplayClient};
pub use mock::{mock_waypoints, InstructionTag, MockClient};
pub use parse::{parse_response, serialize_response, ParseError, ParsedResponse};
pub use prompt::{assemble_prompt, PromptSpec, PromptVariant, TaskContext};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt variable `{0}` is unbound")]
    Unbound(&'static str),
    #[error("unrecognized instruction {0:?}")]
    UnknownInstruction(String),
    #[error("no recorded response for prompt {0}")]
    ReplayMiss(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("client configuration: {0}")]
    Config(String),
    #[error("response unusable after {attempts} attempts: {last}")]
    Parse { attempts: usize, last: ParseError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A waypoint moved by clipping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClippedWaypoint {
    pub agent: usize,
    pub index: usize,
    pub original: Vec2,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub attempts: usize,
    pub fallback: bool,
    pub clipped: Vec<ClippedWaypoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationResult {
    /// Clipped waypoints, ready for the policy.
    pub instructions: InstructionVector,
    pub raw: String,
    pub strategy: String,
    pub diagnostics: ParseDiagnostics,
}

/// Re-feeds after a malformed reply.
pub const DEFAULT_RETRIES: usize = 2;

/// Anything that can turn an instruction into waypoints for the current world.
pub trait Translate {
    fn translate(&mut self, instruction: &str, world: &WorldState, scenario: &Scenario) -> Result<TranslationResult, LlmError>;
}

pub struct Translator {
    client: Box<dyn LlmClient + Send>,
    pub variant: PromptVariant,
    /// Waypoints requested per agent.
    pub waypoints: usize,
    pub retries: usize,
}

impl Translator {
    pub fn new(client: Box<dyn LlmClient + Send>, waypoints: usize) -> Self {
        Self {
            client,
            variant: PromptVariant::Base,
            waypoints,
            retries: DEFAULT_RETRIES,
        }
    }

    pub fn mock(waypoints: usize) -> Self {
        Self::new(Box::new(MockClient), waypoints)
    }

    pub fn client_name(&self) -> &'static str {
        self.client.name()
    }
}

/// Clamps into the field and reports what moved.
pub fn clip_waypoints(waypoints: &[Vec<Vec2>], half_extent: f64) -> (Vec<Vec<Vec2>>, Vec<ClippedWaypoint>) {
    let mut clipped = Vec::new();
    let out = waypoints
        .iter()
        .enumerate()
        .map(|(agent, seq)| {
            seq.iter()
                .enumerate()
                .map(|(index, &p)| {
                    let q = p.clamp_square(half_extent);
                    if q != p {
                        clipped.push(ClippedWaypoint { agent, index, original: p });
                    }
                    q
                })
                .collect()
        })
        .collect();
    (out, clipped)
}

impl Translate for Translator {
    /// Assemble, send, parse, clip. Malformed replies are re-fed up to
    /// `retries` times; transport failures return immediately.
    fn translate(&mut self, instruction: &str, world: &WorldState, scenario: &Scenario) -> Result<TranslationResult, LlmError> {
        let spec = PromptSpec::from_world(self.variant, world, scenario, instruction, self.waypoints);
        let prompt = assemble_prompt(&spec)?;
        let n = world.agents.len();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let raw = self.client.complete(&prompt, &spec)?;
            match parse_response(&raw, n, self.waypoints) {
                Ok(parsed) => {
                    let (waypoints, clipped) = clip_waypoints(&parsed.waypoints, scenario.half_extent());
                    let instructions = InstructionVector::new(waypoints, world.time_step)
                        .expect("parser enforces equal per-agent lengths");
                    return Ok(TranslationResult {
                        instructions,
                        raw,
                        strategy: parsed.strategy,
                        diagnostics: ParseDiagnostics {
                            attempts,
                            fallback: parsed.fallback,
                            clipped,
                        },
                    });
                }
                Err(e) if attempts > self.retries => return Err(LlmError::Parse { attempts, last: e }),
                Err(_) => {}
            }
        }
    }
}

/// Mock translation of one reference instruction.
pub fn mock_translate(tag: InstructionTag, world: &WorldState, scenario: &Scenario, waypoints: usize) -> Result<TranslationResult, LlmError> {
    Translator::mock(waypoints).translate(tag.text(), world, scenario)
}
