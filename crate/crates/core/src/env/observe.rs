use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::state::WorldState;
use super::EnvError;
use crate::geometry::Vec2;
use crate::instruction::InstructionVector;

/// Values per entity slot: relative x, relative y, presence.
pub const SLOT_WIDTH: usize = 3;
/// Values per agent in the global state: position, velocity, carrying, defended.
pub const AGENT_FEATURES: usize = 6;

/// Local observation of one agent. Layout (see [`ObservationLayout`]):
/// other agents, resources, invader, home, each as `(dx, dy, present)` slots
/// filled nearest-first with out-of-range slots left at zero; then the agent's
/// own velocity and carrying flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObservationLayout {
    pub n_others: usize,
    pub n_resources: usize,
}

impl ObservationLayout {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            n_others: scenario.n_agents - 1,
            n_resources: scenario.n_resources,
        }
    }

    pub fn others(&self) -> usize {
        0
    }

    pub fn resources(&self) -> usize {
        self.n_others * SLOT_WIDTH
    }

    pub fn invader(&self) -> usize {
        self.resources() + self.n_resources * SLOT_WIDTH
    }

    pub fn home(&self) -> usize {
        self.invader() + SLOT_WIDTH
    }

    pub fn velocity(&self) -> usize {
        self.home() + SLOT_WIDTH
    }

    pub fn carrying(&self) -> usize {
        self.velocity() + 2
    }

    pub fn dim(&self) -> usize {
        self.carrying() + 1
    }
}

/// Observation of agent `agent_index`.
pub fn observe(state: &WorldState, scenario: &Scenario, agent_index: usize) -> Result<Observation, EnvError> {
    if agent_index >= state.agents.len() {
        return Err(EnvError::AgentIndex {
            index: agent_index,
            n_agents: state.agents.len(),
        });
    }
    Ok(observe_unchecked(state, scenario, agent_index))
}

pub(crate) fn observe_all(state: &WorldState, scenario: &Scenario) -> Vec<Observation> {
    (0..state.agents.len())
        .map(|i| observe_unchecked(state, scenario, i))
        .collect()
}

fn observe_unchecked(state: &WorldState, scenario: &Scenario, i: usize) -> Observation {
    let layout = ObservationLayout::new(scenario);
    let me = state.agents[i];
    let radius = scenario.observation_radius;
    let mut obs = vec![0.0; layout.dim()];

    let others = state
        .agents
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, a)| a.position);
    fill_slots(&mut obs[layout.others()..layout.resources()], me.position, others, radius);
    let resources = state.resources.iter().filter(|r| r.active).map(|r| r.position);
    fill_slots(&mut obs[layout.resources()..layout.invader()], me.position, resources, radius);
    let invader = state.invader.active.then_some(state.invader.position);
    fill_slots(&mut obs[layout.invader()..layout.home()], me.position, invader.into_iter(), radius);
    fill_slots(
        &mut obs[layout.home()..layout.velocity()],
        me.position,
        std::iter::once(state.home.position),
        radius,
    );
    obs[layout.velocity()] = me.velocity.x;
    obs[layout.velocity() + 1] = me.velocity.y;
    obs[layout.carrying()] = f64::from(u8::from(me.carrying));
    Observation(obs)
}

/// Writes visible entities into consecutive slots, nearest first; a stable sort
/// keeps source order among equal distances.
fn fill_slots(out: &mut [f64], origin: Vec2, entities: impl Iterator<Item = Vec2>, radius: f64) {
    let mut visible: Vec<(f64, Vec2)> = entities
        .map(|p| (origin.distance(p), p - origin))
        .filter(|(d, _)| *d <= radius)
        .collect();
    visible.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (slot, (_, rel)) in out.chunks_mut(SLOT_WIDTH).zip(visible) {
        slot[0] = rel.x;
        slot[1] = rel.y;
        slot[2] = 1.0;
    }
}

/// Offsets into the global state vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlobalStateLayout {
    pub n_agents: usize,
    pub n_resources: usize,
    pub instruction_len: usize,
}

impl GlobalStateLayout {
    pub fn new(scenario: &Scenario, waypoints_per_agent: usize) -> Self {
        Self {
            n_agents: scenario.n_agents,
            n_resources: scenario.n_resources,
            instruction_len: scenario.n_agents * waypoints_per_agent * 2,
        }
    }

    pub fn agent(&self, i: usize) -> std::ops::Range<usize> {
        i * AGENT_FEATURES..(i + 1) * AGENT_FEATURES
    }

    pub fn resource(&self, j: usize) -> std::ops::Range<usize> {
        let base = self.n_agents * AGENT_FEATURES;
        base + 2 * j..base + 2 * j + 2
    }

    pub fn invader(&self) -> std::ops::Range<usize> {
        let base = self.n_agents * AGENT_FEATURES + 2 * self.n_resources;
        base..base + 2
    }

    pub fn instructions(&self) -> std::ops::Range<usize> {
        let base = self.invader().end;
        base..base + self.instruction_len
    }

    pub fn dim(&self) -> usize {
        self.instructions().end
    }
}

/// Agent kinematics and flags, resource and invader positions, then every
/// agent's instruction waypoints.
pub fn global_state_vector(state: &WorldState, instructions: &InstructionVector) -> Vec<f64> {
    let mut s = Vec::with_capacity(
        state.agents.len() * AGENT_FEATURES + 2 * state.resources.len() + 2 + instructions.flat_len(),
    );
    for a in &state.agents {
        s.extend_from_slice(&[
            a.position.x,
            a.position.y,
            a.velocity.x,
            a.velocity.y,
            f64::from(u8::from(a.carrying)),
            f64::from(u8::from(a.defended_this_step)),
        ]);
    }
    for r in &state.resources {
        s.extend_from_slice(&r.position.to_array());
    }
    s.extend_from_slice(&state.invader.position.to_array());
    s.extend(instructions.flatten());
    s
}
