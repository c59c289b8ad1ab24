use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::observe::{observe_all, Observation};
use super::scenario::Scenario;
use super::EnvError;
use crate::geometry::Vec2;
use crate::instruction::{instruction_reward, InstructionVector};

pub const N_ACTIONS: usize = 5;

/// Rejection-sampling budget for spawns that must avoid contact.
const SPAWN_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Stay,
    PosX,
    NegX,
    PosY,
    NegY,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [Action::Stay, Action::PosX, Action::NegX, Action::PosY, Action::NegY];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn direction(self) -> Vec2 {
        match self {
            Action::Stay => Vec2::ZERO,
            Action::PosX => Vec2::new(1.0, 0.0),
            Action::NegX => Vec2::new(-1.0, 0.0),
            Action::PosY => Vec2::new(0.0, 1.0),
            Action::NegY => Vec2::new(0.0, -1.0),
        }
    }
}

/// One action per agent, in agent-index order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction(pub Vec<Action>);

impl JointAction {
    pub fn from_indices(indices: &[usize]) -> Result<Self, EnvError> {
        indices
            .iter()
            .enumerate()
            .map(|(agent, &i)| Action::from_index(i).ok_or(EnvError::ActionIndex { agent, index: i }))
            .collect::<Result<Vec<_>, _>>()
            .map(JointAction)
    }

    pub fn stay(n_agents: usize) -> Self {
        JointAction(vec![Action::Stay; n_agents])
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|a| a.index()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    /// Displacement over the last step (m/step).
    pub velocity: Vec2,
    pub carrying: bool,
    pub defended_this_step: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvaderState {
    pub position: Vec2,
    pub active: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceState {
    pub position: Vec2,
    pub active: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Home {
    pub position: Vec2,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Pick { agent: usize, resource: usize },
    Collect { agent: usize },
    Defense { agent: usize },
    Breach,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub picks: u32,
    pub collects: u32,
    pub defenses: u32,
    pub breaches: u32,
}

impl EventCounts {
    pub fn from_events(events: &[Event]) -> Self {
        let mut c = Self::default();
        for e in events {
            c.record(e);
        }
        c
    }

    pub fn record(&mut self, e: &Event) {
        match e {
            Event::Pick { .. } => self.picks += 1,
            Event::Collect { .. } => self.collects += 1,
            Event::Defense { .. } => self.defenses += 1,
            Event::Breach => self.breaches += 1,
        }
    }

    pub fn add(&mut self, other: &EventCounts) {
        self.picks += other.picks;
        self.collects += other.collects;
        self.defenses += other.defenses;
        self.breaches += other.breaches;
    }
}

/// Team reward for one step. `r_inst` is the mean of the per-agent
/// instruction rewards.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_task: f64,
    pub r_inst: f64,
    pub r_pick: f64,
    pub r_collect: f64,
    pub r_defense: f64,
    pub per_agent_e_cossim: Vec<f64>,
    pub per_agent_e_dist: Vec<f64>,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.r_task + self.r_inst
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    pub events: Vec<Event>,
    pub observations: Vec<Observation>,
}

/// Full environment state, including the generator that drives spawns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time_step: usize,
    pub agents: Vec<AgentState>,
    pub invader: InvaderState,
    pub resources: Vec<ResourceState>,
    pub home: Home,
    rng: ChaCha8Rng,
}

impl WorldState {
    /// Uniform random layout. Resources never start in contact with an agent
    /// and the invader never starts inside home.
    pub fn reset(seed: u64, scenario: &Scenario) -> Result<Self, EnvError> {
        scenario.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = scenario.half_extent();
        let home = Home {
            position: Vec2::ZERO,
            radius: scenario.home_radius,
        };
        let agents = (0..scenario.n_agents)
            .map(|_| AgentState {
                position: uniform_point(&mut rng, h),
                velocity: Vec2::ZERO,
                carrying: false,
                defended_this_step: false,
            })
            .collect();
        let mut state = WorldState {
            time_step: 0,
            agents,
            invader: InvaderState {
                position: Vec2::ZERO,
                active: false,
            },
            resources: Vec::with_capacity(scenario.n_resources),
            home,
            rng,
        };
        if scenario.n_invaders == 1 {
            let keep_out = home.radius + scenario.contact_radius;
            let mut p = uniform_point(&mut state.rng, h);
            for _ in 0..SPAWN_ATTEMPTS {
                if p.distance(home.position) > keep_out {
                    break;
                }
                p = uniform_point(&mut state.rng, h);
            }
            state.invader = InvaderState {
                position: p,
                active: true,
            };
        }
        for _ in 0..scenario.n_resources {
            let position = state.spawn_resource_position(scenario);
            state.resources.push(ResourceState { position, active: true });
        }
        Ok(state)
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.agents.iter().map(|a| a.position).collect()
    }

    pub fn active_resources(&self) -> usize {
        self.resources.iter().filter(|r| r.active).count()
    }

    /// Advances one control step.
    ///
    /// Order: agents move and are clamped, the invader advances toward home,
    /// then pick, collect, and defense/breach events are resolved, inactive
    /// entities respawn, and instruction rewards are scored against
    /// `instructions`.
    pub fn step(
        &mut self,
        scenario: &Scenario,
        actions: &JointAction,
        instructions: &InstructionVector,
    ) -> Result<StepOutcome, EnvError> {
        if self.time_step >= scenario.episode_len {
            return Err(EnvError::EpisodeExhausted {
                time_step: self.time_step,
                episode_len: scenario.episode_len,
            });
        }
        let n = self.agents.len();
        if actions.len() != n {
            return Err(EnvError::ActionCount {
                expected: n,
                actual: actions.len(),
            });
        }
        if instructions.n_agents() != n {
            return Err(EnvError::InstructionAgents {
                expected: n,
                actual: instructions.n_agents(),
            });
        }
        let h = scenario.half_extent();
        let prev: Vec<Vec2> = self.positions();

        for (agent, action) in self.agents.iter_mut().zip(&actions.0) {
            let target = agent.position + action.direction() * scenario.step_size;
            let next = target.clamp_square(h);
            agent.velocity = next - agent.position;
            agent.position = next;
            agent.defended_this_step = false;
        }

        if self.invader.active {
            let to_home = self.home.position - self.invader.position;
            let d = to_home.norm();
            self.invader.position = if d <= scenario.invader_speed {
                self.home.position
            } else {
                self.invader.position + to_home * (scenario.invader_speed / d)
            };
        }

        let mut events = Vec::new();
        let contact = scenario.contact_radius;

        // Pick: lowest agent index wins a contested resource.
        for (i, agent) in self.agents.iter_mut().enumerate() {
            if agent.carrying {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (j, r) in self.resources.iter().enumerate() {
                if !r.active {
                    continue;
                }
                let d = agent.position.distance(r.position);
                if d <= contact && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            if let Some((j, _)) = best {
                agent.carrying = true;
                self.resources[j].active = false;
                events.push(Event::Pick { agent: i, resource: j });
            }
        }

        // Collect.
        for (i, agent) in self.agents.iter_mut().enumerate() {
            if agent.carrying && agent.position.distance(self.home.position) <= self.home.radius + contact {
                agent.carrying = false;
                events.push(Event::Collect { agent: i });
            }
        }

        // Defense, else breach.
        if self.invader.active {
            let mut hit_by = None;
            for (i, agent) in self.agents.iter_mut().enumerate() {
                if agent.position.distance(self.invader.position) <= contact {
                    agent.defended_this_step = true;
                    hit_by.get_or_insert(i);
                }
            }
            if let Some(agent) = hit_by {
                events.push(Event::Defense { agent });
                self.invader.active = false;
            } else if self.invader.position.distance(self.home.position) <= self.home.radius {
                events.push(Event::Breach);
                self.invader.active = false;
            }
        }

        // Respawn.
        for j in 0..self.resources.len() {
            if !self.resources[j].active {
                let position = self.spawn_resource_position(scenario);
                self.resources[j] = ResourceState { position, active: true };
            }
        }
        if scenario.n_invaders == 1 && !self.invader.active {
            self.invader = InvaderState {
                position: uniform_boundary_point(&mut self.rng, h),
                active: true,
            };
        }

        let counts = EventCounts::from_events(&events);
        let r = &scenario.rewards;
        let r_pick = f64::from(counts.picks) * r.pick;
        let r_collect = f64::from(counts.collects) * r.collect;
        let r_defense = f64::from(counts.defenses) * r.defense + f64::from(counts.breaches) * r.breach;

        let mut per_agent_e_cossim = Vec::with_capacity(n);
        let mut per_agent_e_dist = Vec::with_capacity(n);
        let mut r_inst_sum = 0.0;
        for (i, agent) in self.agents.iter().enumerate() {
            let ir = instruction_reward(prev[i], agent.position, instructions.agent(i))?;
            per_agent_e_cossim.push(ir.e_cossim);
            per_agent_e_dist.push(ir.e_dist);
            r_inst_sum += ir.r_inst;
        }

        self.time_step += 1;
        let reward = RewardBreakdown {
            r_task: r_pick + r_collect + r_defense,
            r_inst: r_inst_sum / n as f64,
            r_pick,
            r_collect,
            r_defense,
            per_agent_e_cossim,
            per_agent_e_dist,
        };
        Ok(StepOutcome {
            reward,
            events,
            observations: observe_all(self, scenario),
        })
    }

    fn spawn_resource_position(&mut self, scenario: &Scenario) -> Vec2 {
        let h = scenario.half_extent();
        let mut p = uniform_point(&mut self.rng, h);
        for _ in 0..SPAWN_ATTEMPTS {
            if self
                .agents
                .iter()
                .all(|a| a.position.distance(p) > scenario.contact_radius)
            {
                break;
            }
            p = uniform_point(&mut self.rng, h);
        }
        p
    }

    /// For tests and scripted scenarios.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

fn uniform_point(rng: &mut impl Rng, h: f64) -> Vec2 {
    Vec2::new(rng.random_range(-h..=h), rng.random_range(-h..=h))
}

/// Uniform over the perimeter of the field.
fn uniform_boundary_point(rng: &mut impl Rng, h: f64) -> Vec2 {
    let side = 2.0 * h;
    let u: f64 = rng.random_range(0.0..4.0 * side);
    let (edge, t) = ((u / side) as usize, u % side - h);
    match edge.min(3) {
        0 => Vec2::new(t, -h),
        1 => Vec2::new(h, t),
        2 => Vec2::new(-t, h),
        _ => Vec2::new(-h, -t),
    }
}
