//! Evaluation protocols: quadrant-confined random-walk instructions and
//! translated language instructions, both run greedily.

pub mod metrics;
pub mod report;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    global_state_vector, observe, EnvError, JointAction, Observation, ReplayWriter, Scenario, StepOutcome, StepRecord,
    WorldState, LOG_VERSION,
};
use crate::instruction::{sample_random_walk_in, InstructionVector, Region, WalkNoise};
use crate::llm::Translate;
use crate::model::{Model, ModelConfig, ModelError};
use crate::nn::argmax;
use crate::policy::{AgentRuntime, StepInput};

pub use metrics::{MeanStd, TaskMetrics, TaskSummary, TrialAccumulator, TrialMetrics};
pub use report::{export_report, render_table, write_trials_csv, ReportPaths};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("checkpoint does not fit the scenario: {0}")]
    Incompatible(String),
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Seeds reserved for evaluation. Training seeds keep the top bit clear, so
/// the two sets never meet.
pub fn eval_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| (1 << 63) | i).collect()
}

/// A decentralized policy driven one step at a time.
pub trait Controller {
    fn label(&self) -> String;
    fn begin_episode(&mut self);
    /// Called at every instruction refresh, before `act`.
    fn refresh(&mut self, input: &StepInput) -> Result<(), EvalError>;
    fn act(&mut self, input: &StepInput) -> Result<JointAction, EvalError>;
}

/// Greedy execution of a trained model with `z = μ`.
#[derive(Clone, Debug)]
pub struct GreedyPolicy {
    pub model: Model,
    runtime: AgentRuntime,
    zero_noise: Vec<f64>,
}

impl GreedyPolicy {
    pub fn new(model: Model) -> Self {
        let runtime = model.start_episode();
        let zero_noise = vec![0.0; model.config.joint_latent()];
        Self {
            model,
            runtime,
            zero_noise,
        }
    }

    /// Checks that the model's input layout matches `scenario`.
    pub fn check_scenario(&self, scenario: &Scenario) -> Result<(), EvalError> {
        let have = &self.model.config;
        let want = ModelConfig::new(
            scenario,
            &crate::model::NetworkSizes {
                waypoints: have.waypoints,
                ..Default::default()
            },
        );
        for (what, a, b) in [
            ("agents", have.n_agents, want.n_agents),
            ("actions", have.n_actions, want.n_actions),
            ("observation width", have.obs_dim, want.obs_dim),
            ("state width", have.state_dim, want.state_dim),
        ] {
            if a != b {
                return Err(EvalError::Incompatible(format!("{what}: checkpoint {a}, scenario {b}")));
            }
        }
        Ok(())
    }
}

impl Controller for GreedyPolicy {
    fn label(&self) -> String {
        self.model.variant.to_string()
    }

    fn begin_episode(&mut self) {
        self.runtime = self.model.start_episode();
    }

    fn refresh(&mut self, input: &StepInput) -> Result<(), EvalError> {
        Ok(self.model.refresh_latent(&mut self.runtime, input, &self.zero_noise)?)
    }

    fn act(&mut self, input: &StepInput) -> Result<JointAction, EvalError> {
        let q = self.model.utilities(&mut self.runtime, input)?;
        let indices: Vec<usize> = (0..q.rows()).map(|i| argmax(q.row(i))).collect();
        let actions = JointAction::from_indices(&indices)?;
        self.runtime.commit(&actions);
        Ok(actions)
    }
}

/// Scripted baseline that never moves.
#[derive(Clone, Copy, Debug, Default)]
pub struct StayPolicy {
    pub n_agents: usize,
}

impl Controller for StayPolicy {
    fn label(&self) -> String {
        "STAY".into()
    }

    fn begin_episode(&mut self) {}

    fn refresh(&mut self, _: &StepInput) -> Result<(), EvalError> {
        Ok(())
    }

    fn act(&mut self, _: &StepInput) -> Result<JointAction, EvalError> {
        Ok(JointAction::stay(self.n_agents))
    }
}

/// One evaluation episode in progress.
pub struct Rollout {
    pub scenario: Scenario,
    pub world: WorldState,
    pub instructions: InstructionVector,
    observations: Vec<Observation>,
    refresh_interval: usize,
    since_refresh: Option<usize>,
}

/// What one [`Rollout::step`] did.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub step: usize,
    pub actions: JointAction,
    pub outcome: StepOutcome,
}

impl Rollout {
    /// Starts with every agent told to hold its position.
    pub fn new(scenario: Scenario, seed: u64, waypoints: usize, refresh_interval: usize) -> Result<Self, EvalError> {
        if refresh_interval == 0 || waypoints == 0 {
            return Err(EvalError::Protocol("refresh interval and waypoint count must be positive".into()));
        }
        let world = WorldState::reset(seed, &scenario)?;
        let observations = (0..scenario.n_agents)
            .map(|i| observe(&world, &scenario, i))
            .collect::<Result<_, _>>()?;
        let instructions = InstructionVector::hold(&world.positions(), waypoints, 0);
        Ok(Self {
            scenario,
            world,
            instructions,
            observations,
            refresh_interval,
            since_refresh: None,
        })
    }

    pub fn time_step(&self) -> usize {
        self.world.time_step
    }

    /// True when the next step refreshes on schedule: at the first step and
    /// `refresh_interval` steps after the previous refresh.
    pub fn refresh_due(&self) -> bool {
        self.since_refresh.is_none_or(|n| n >= self.refresh_interval)
    }

    pub fn finished(&self) -> bool {
        self.world.time_step >= self.scenario.episode_len
    }

    /// Advances one step. New instructions take effect immediately and
    /// restart the refresh schedule; otherwise the controller refreshes its
    /// latent every `refresh_interval` steps on the current instructions.
    pub fn step(&mut self, controller: &mut dyn Controller, next: Option<InstructionVector>) -> Result<StepReport, EvalError> {
        let refresh = next.is_some() || self.refresh_due();
        if let Some(iv) = next {
            self.instructions = iv;
        }
        if refresh {
            self.since_refresh = Some(0);
        }
        let state = global_state_vector(&self.world, &self.instructions);
        let positions = self.world.positions();
        let input = StepInput {
            observations: &self.observations,
            positions: &positions,
            instructions: &self.instructions,
            global_state: &state,
        };
        if refresh {
            controller.refresh(&input)?;
        }
        let actions = controller.act(&input)?;
        let step = self.world.time_step;
        let outcome = self.world.step(&self.scenario, &actions, &self.instructions)?;
        self.since_refresh = self.since_refresh.map(|n| n + 1);
        self.observations = outcome.observations.clone();
        Ok(StepReport { step, actions, outcome })
    }

    pub fn log_record(&self, report: &StepReport) -> StepRecord {
        StepRecord {
            version: LOG_VERSION,
            step: report.step,
            state: self.world.clone(),
            actions: report.actions.indices(),
            reward: report.outcome.reward.clone(),
            events: report.outcome.events.clone(),
            instructions: self.instructions.clone(),
        }
    }
}

type Log = ReplayWriter<BufWriter<File>>;

fn open_log(dir: Option<&Path>, name: &str) -> Result<Option<Log>, EvalError> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            Ok(Some(ReplayWriter::new(BufWriter::new(File::create(d.join(name))?))))
        }
        None => Ok(None),
    }
}

fn finish_log(log: Option<Log>) -> Result<(), EvalError> {
    if let Some(w) = log {
        use std::io::Write;
        w.into_inner().flush()?;
    }
    Ok(())
}

/// Quadrant `q` in 1..=4, counter-clockwise from `x ≥ 0, y ≥ 0`.
pub fn quadrant_region(q: usize, half_extent: f64) -> Region {
    let h = half_extent;
    let (sx, sy) = match q {
        1 => (1.0, 1.0),
        2 => (-1.0, 1.0),
        3 => (-1.0, -1.0),
        4 => (1.0, -1.0),
        _ => panic!("quadrant index {q} outside 1..=4"),
    };
    let corner = |s: f64| if s > 0.0 { (0.0, h) } else { (-h, 0.0) };
    let (x0, x1) = corner(sx);
    let (y0, y1) = corner(sy);
    Region {
        min: crate::Vec2::new(x0, y0),
        max: crate::Vec2::new(x1, y1),
    }
}

/// Random walks from each agent's position, every waypoint confined to `region`.
pub fn confined_walks(world: &WorldState, k: usize, noise: &WalkNoise, region: Region, rng: &mut impl Rng) -> InstructionVector {
    let waypoints = world
        .agents
        .iter()
        .map(|a| sample_random_walk_in(a.position, k, noise, region, rng))
        .collect();
    InstructionVector::new(waypoints, world.time_step).expect("one equal-length walk per agent")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrantProtocol {
    pub steps_per_quadrant: usize,
    pub trials: usize,
    pub refresh_interval: usize,
    pub waypoints: usize,
    pub walk_sigma: f64,
}

impl Default for QuadrantProtocol {
    fn default() -> Self {
        Self {
            steps_per_quadrant: 145,
            trials: 20,
            refresh_interval: 4,
            waypoints: 4,
            walk_sigma: 0.1,
        }
    }
}

impl QuadrantProtocol {
    pub fn total_steps(&self) -> usize {
        4 * self.steps_per_quadrant
    }
}

fn walk_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// One trial per seed: quadrants 1 through 4 in turn, greedy actions, fresh
/// walks every `refresh_interval` steps and at each quadrant change. Writes
/// `trial_NN.jsonl` step logs into `log_dir` when given.
pub fn run_quadrant_eval(
    controller: &mut dyn Controller,
    scenario: &Scenario,
    protocol: &QuadrantProtocol,
    seeds: &[u64],
    log_dir: Option<&Path>,
) -> Result<TaskMetrics, EvalError> {
    let noise = WalkNoise::new(protocol.walk_sigma).map_err(|e| EvalError::Protocol(e.to_string()))?;
    if protocol.steps_per_quadrant == 0 {
        return Err(EvalError::Protocol("steps per quadrant must be positive".into()));
    }
    let scenario = Scenario {
        episode_len: protocol.total_steps(),
        ..scenario.clone()
    };
    let h = scenario.half_extent();
    let mut trials = Vec::with_capacity(seeds.len());
    for (trial, &seed) in seeds.iter().enumerate() {
        let mut rollout = Rollout::new(scenario.clone(), seed, protocol.waypoints, protocol.refresh_interval)?;
        let mut rng = walk_rng(seed);
        let mut log = open_log(log_dir, &format!("trial_{trial:02}.jsonl"))?;
        let mut acc = TrialAccumulator::default();
        controller.begin_episode();
        while !rollout.finished() {
            let t = rollout.time_step();
            let region = quadrant_region(1 + t / protocol.steps_per_quadrant, h);
            let next = (rollout.refresh_due() || t % protocol.steps_per_quadrant == 0)
                .then(|| confined_walks(&rollout.world, protocol.waypoints, &noise, region, &mut rng));
            let report = rollout.step(controller, next)?;
            acc.record(&report.outcome.reward, &report.outcome.events);
            if let Some(l) = log.as_mut() {
                l.write(&rollout.log_record(&report))?;
            }
        }
        finish_log(log)?;
        trials.push(acc.finish(trial, seed));
    }
    Ok(TaskMetrics {
        label: controller.label(),
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageProtocol {
    pub steps_per_instruction: usize,
    pub trials: usize,
    pub refresh_interval: usize,
    /// Waypoints per agent requested from the translator.
    pub waypoints: usize,
}

impl Default for LanguageProtocol {
    fn default() -> Self {
        Self {
            steps_per_instruction: 145,
            trials: 20,
            refresh_interval: 4,
            waypoints: 4,
        }
    }
}

/// A translation that failed; its segment is excluded from the metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationFailure {
    pub trial: usize,
    pub instruction: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageOutcome {
    /// One entry per instruction, labelled `"<policy> / <instruction>"`.
    pub per_instruction: Vec<TaskMetrics>,
    pub failures: Vec<TranslationFailure>,
}

/// Each trial plays the instructions back to back, `steps_per_instruction`
/// steps each, translating each one from the world as it stands. The
/// translated waypoints are held for the whole segment while the latent still
/// refreshes on schedule. A failed translation leaves the agents holding
/// their positions for that segment and is reported, not raised.
pub fn run_language_eval(
    controller: &mut dyn Controller,
    scenario: &Scenario,
    protocol: &LanguageProtocol,
    instructions: &[String],
    translator: &mut dyn Translate,
    seeds: &[u64],
    log_dir: Option<&Path>,
) -> Result<LanguageOutcome, EvalError> {
    if instructions.is_empty() || protocol.steps_per_instruction == 0 {
        return Err(EvalError::Protocol("need at least one instruction and one step".into()));
    }
    let seg = protocol.steps_per_instruction;
    let scenario = Scenario {
        episode_len: seg * instructions.len(),
        ..scenario.clone()
    };
    let label = controller.label();
    let mut per_instruction: Vec<TaskMetrics> = instructions
        .iter()
        .map(|text| TaskMetrics {
            label: format!("{label} / {text}"),
            trials: Vec::new(),
        })
        .collect();
    let mut failures = Vec::new();
    for (trial, &seed) in seeds.iter().enumerate() {
        let k = protocol.waypoints;
        let mut rollout = Rollout::new(scenario.clone(), seed, k, protocol.refresh_interval)?;
        let mut log = open_log(log_dir, &format!("trial_{trial:02}.jsonl"))?;
        controller.begin_episode();
        for (j, text) in instructions.iter().enumerate() {
            let result = translator.translate(text, &rollout.world, &rollout.scenario).map_err(|e| e.to_string()).and_then(|t| {
                if t.instructions.k() == k && t.instructions.n_agents() == scenario.n_agents {
                    Ok(t.instructions)
                } else {
                    Err(format!("translator returned {} waypoints for {} agents", t.instructions.k(), t.instructions.n_agents()))
                }
            });
            let held = match result {
                Ok(iv) => Some(iv),
                Err(error) => {
                    failures.push(TranslationFailure {
                        trial,
                        instruction: text.clone(),
                        error,
                    });
                    None
                }
            };
            let ok = held.is_some();
            let mut pending = Some(held.unwrap_or_else(|| InstructionVector::hold(&rollout.world.positions(), k, rollout.time_step())));
            let mut acc = TrialAccumulator::default();
            for _ in 0..seg {
                let report = rollout.step(controller, pending.take())?;
                acc.record(&report.outcome.reward, &report.outcome.events);
                if let Some(l) = log.as_mut() {
                    l.write(&rollout.log_record(&report))?;
                }
            }
            if ok {
                per_instruction[j].trials.push(acc.finish(trial, seed));
            }
        }
        finish_log(log)?;
    }
    Ok(LanguageOutcome {
        per_instruction,
        failures,
    })
}
