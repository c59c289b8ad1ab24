use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::replay::EpisodeRecord;
use super::TrainError;
use crate::env::{global_state_vector, observe, EventCounts, Observation, Scenario, WorldState};
use crate::instruction::{sample_random_walk, InstructionVector, WalkNoise};
use crate::model::Model;
use crate::policy::{select_actions, AgentRuntime, StepInput};

/// Training-time instruction: an independent random walk per agent starting
/// at its current position, clipped to the field.
pub fn random_walk_instructions(
    world: &WorldState,
    scenario: &Scenario,
    k: usize,
    noise: &WalkNoise,
    rng: &mut impl Rng,
) -> InstructionVector {
    let h = scenario.half_extent();
    let waypoints = world
        .agents
        .iter()
        .map(|a| sample_random_walk(a.position, k, noise, h, rng))
        .collect();
    InstructionVector::new(waypoints, world.time_step).expect("one equal-length walk per agent")
}

pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

struct Block {
    instructions: InstructionVector,
    noise: Vec<f64>,
}

fn new_block(model: &Model, world: &WorldState, scenario: &Scenario, walk: &WalkNoise, rng: &mut impl Rng) -> Block {
    let instructions = random_walk_instructions(world, scenario, model.config.waypoints, walk, rng);
    let noise = if model.coordinator.is_some() {
        standard_normal(model.config.joint_latent(), rng)
    } else {
        Vec::new()
    };
    Block { instructions, noise }
}

/// Plays one ε-greedy episode with random-walk instructions refreshed every
/// `refresh_interval` steps; the latent is resampled at each refresh.
pub fn collect_episode(
    model: &Model,
    scenario: &Scenario,
    seed: u64,
    epsilon: f64,
    walk: &WalkNoise,
    rng: &mut impl Rng,
) -> Result<EpisodeRecord, TrainError> {
    let c = &model.config;
    let r = c.refresh_interval;
    let len = scenario.episode_len;
    let mut world = WorldState::reset(seed, scenario)?;
    let mut rt: AgentRuntime = model.start_episode();
    let mut observations: Vec<Observation> = (0..c.n_agents)
        .map(|i| observe(&world, scenario, i))
        .collect::<Result<_, _>>()?;

    let mut rec = EpisodeRecord {
        seed,
        refresh_interval: r,
        observations: Vec::with_capacity(len + 1),
        positions: Vec::with_capacity(len + 1),
        states: Vec::with_capacity(len + 1),
        actions: Vec::with_capacity(len),
        rewards: Vec::with_capacity(len),
        r_task: Vec::with_capacity(len),
        r_inst: Vec::with_capacity(len),
        events: EventCounts::default(),
        instructions: Vec::new(),
        noise: Vec::new(),
        hidden: Vec::new(),
    };

    for t in 0..=len {
        if t % r == 0 {
            let block = new_block(model, &world, scenario, walk, rng);
            rec.hidden.push(rt.hidden.clone());
            rec.instructions.push(block.instructions);
            rec.noise.push(block.noise);
        }
        let instructions = rec.instructions.last().expect("block opened at t = 0");
        let state = global_state_vector(&world, instructions);
        let positions = world.positions();
        rec.observations.push(observations.iter().flat_map(|o| o.0.iter().copied()).collect());
        rec.positions.push(positions.clone());
        if t == len {
            rec.states.push(state);
            break;
        }
        let input = StepInput {
            observations: &observations,
            positions: &positions,
            instructions,
            global_state: &state,
        };
        if t % r == 0 {
            model.refresh_latent(&mut rt, &input, rec.noise.last().expect("block noise"))?;
        }
        let q = model.utilities(&mut rt, &input)?;
        let actions = select_actions(&q, epsilon, rng);
        let out = world.step(scenario, &actions, instructions)?;
        rt.commit(&actions);
        rec.states.push(state);
        rec.actions.push(actions.indices());
        rec.rewards.push(out.reward.total());
        rec.r_task.push(out.reward.r_task);
        rec.r_inst.push(out.reward.r_inst);
        for e in &out.events {
            rec.events.record(e);
        }
        observations = out.observations;
    }
    Ok(rec)
}
