use std::fs::File;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{build_losses, LossConfig};
use super::replay::ReplayBuffer;
use super::rollout::collect_episode;
use super::TrainError;
use crate::env::{EventCounts, Scenario};
use crate::instruction::WalkNoise;
use crate::model::{Checkpoint, Model, ModelConfig, NetworkSizes, Variant};
use crate::nn::{Adam, ParamStore, Tape};

/// Run configuration. Omitted TOML keys take the defaults below, which are
/// sized for a single CPU core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub episodes: usize,
    pub network: NetworkSizes,
    pub lr: f64,
    pub gamma: f64,
    pub ce_weight: f64,
    /// Segments per update.
    pub batch_segments: usize,
    /// Steps per segment; a multiple of the refresh interval.
    pub segment_len: usize,
    /// Episodes kept in replay.
    pub replay_capacity: usize,
    /// Episodes collected before the first update.
    pub warmup_episodes: usize,
    pub updates_per_episode: usize,
    /// Updates between target-network copies.
    pub target_update_interval: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which ε decays linearly.
    pub epsilon_anneal_steps: u64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Per-step standard deviation of the training random walk (m).
    pub walk_sigma: f64,
    /// Episodes per metrics row.
    pub log_interval: usize,
    /// Episodes between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Icco,
            seed: 0,
            episodes: 3000,
            network: NetworkSizes {
                agent_hidden: 32,
                mixer_embed: 32,
                hyper_hidden: 32,
                coordinator_hidden: 64,
                posterior_hidden: 64,
                ..NetworkSizes::default()
            },
            lr: 5e-4,
            gamma: 0.99,
            ce_weight: 1.0,
            batch_segments: 16,
            segment_len: 24,
            replay_capacity: 1000,
            warmup_episodes: 16,
            updates_per_episode: 1,
            target_update_interval: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            grad_clip: 10.0,
            walk_sigma: 0.1,
            log_interval: 10,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, TrainError> {
        let c: TrainConfig = toml::from_str(s).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_segments == 0 || self.replay_capacity == 0 || self.log_interval == 0 {
            return bad("batch_segments, replay_capacity and log_interval must be positive");
        }
        if self.segment_len == 0 || !self.segment_len.is_multiple_of(self.network.refresh_interval) {
            return bad("segment_len must be a positive multiple of network.refresh_interval");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) || self.lr < 0.0 || self.ce_weight < 0.0 {
            return bad("gamma must lie in [0, 1]; lr and ce_weight must be nonnegative");
        }
        if [self.grad_clip, self.walk_sigma].iter().any(|x| x.is_nan() || *x <= 0.0) {
            return bad("grad_clip and walk_sigma must be positive");
        }
        if self.target_update_interval == 0 {
            return bad("target_update_interval must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, scenario: &Scenario) -> ModelConfig {
        ModelConfig::new(scenario, &self.network)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub loss_rl: f64,
    pub loss_ce: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub seed: u64,
    pub epsilon: f64,
    pub reward: f64,
    pub r_task: f64,
    pub r_inst: f64,
    pub events: EventCounts,
    pub updates: Vec<UpdateStats>,
}

/// One line of the metrics CSV. `step` counts completed episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss_rl: f64,
    pub loss_ce: f64,
    pub mean_episode_reward: f64,
    pub mean_r_task: f64,
    pub mean_r_inst: f64,
}

#[derive(Default)]
struct Window {
    episodes: usize,
    reward: f64,
    r_task: f64,
    r_inst: f64,
    updates: usize,
    loss_rl: f64,
    ce_updates: usize,
    loss_ce: f64,
}

pub struct Trainer {
    config: TrainConfig,
    scenario: Scenario,
    model: Model,
    target: ParamStore,
    optimizer: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    walk: WalkNoise,
    loss: LossConfig,
    env_steps: u64,
    episodes: u64,
    updates: u64,
    ce_evaluations: u64,
    target_syncs: u64,
    window: Window,
}

impl Trainer {
    pub fn new(config: TrainConfig, scenario: Scenario) -> Result<Self, TrainError> {
        config.validate()?;
        scenario.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config.variant, config.model_config(&scenario), rng.random())?;
        let target = model.params.clone();
        let optimizer = Adam::new(&model.params, config.lr);
        Ok(Self {
            replay: ReplayBuffer::new(config.replay_capacity),
            walk: WalkNoise::new(config.walk_sigma)?,
            loss: LossConfig {
                gamma: config.gamma,
                ce_weight: config.ce_weight,
            },
            config,
            scenario,
            model,
            target,
            optimizer,
            rng,
            env_steps: 0,
            episodes: 0,
            updates: 0,
            ce_evaluations: 0,
            target_syncs: 0,
            window: Window::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn target_params(&self) -> &ParamStore {
        &self.target
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Number of updates that evaluated the consistency-enhancing loss.
    pub fn ce_evaluations(&self) -> u64 {
        self.ce_evaluations
    }

    pub fn target_syncs(&self) -> u64 {
        self.target_syncs
    }

    pub fn epsilon(&self) -> f64 {
        let c = &self.config;
        if c.epsilon_anneal_steps == 0 {
            return c.epsilon_end;
        }
        let frac = (self.env_steps as f64 / c.epsilon_anneal_steps as f64).min(1.0);
        c.epsilon_start + frac * (c.epsilon_end - c.epsilon_start)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(Some(&self.optimizer), self.updates, self.episodes)
    }

    /// Collects one episode, stores it, and runs the scheduled updates.
    pub fn run_episode(&mut self) -> Result<EpisodeSummary, TrainError> {
        let epsilon = self.epsilon();
        // Training seeds keep the top bit clear; evaluation seeds set it.
        let seed = self.rng.random::<u64>() >> 1;
        let rec = collect_episode(&self.model, &self.scenario, seed, epsilon, &self.walk, &mut self.rng)?;
        self.env_steps += rec.len() as u64;
        self.episodes += 1;
        let summary_base = (
            rec.total_reward(),
            rec.r_task.iter().sum::<f64>(),
            rec.r_inst.iter().sum::<f64>(),
            rec.events,
        );
        self.replay.push(rec);

        let mut updates = Vec::new();
        if self.replay.len() >= self.config.warmup_episodes.max(1) {
            for _ in 0..self.config.updates_per_episode {
                updates.push(self.update()?);
            }
        }
        let (reward, r_task, r_inst, events) = summary_base;
        let w = &mut self.window;
        w.episodes += 1;
        w.reward += reward;
        w.r_task += r_task;
        w.r_inst += r_inst;
        for u in &updates {
            w.updates += 1;
            w.loss_rl += u.loss_rl;
            if let Some(ce) = u.loss_ce {
                w.ce_updates += 1;
                w.loss_ce += ce;
            }
        }
        Ok(EpisodeSummary {
            episode: self.episodes,
            seed,
            epsilon,
            reward,
            r_task,
            r_inst,
            events,
            updates,
        })
    }

    /// One gradient step on a freshly sampled batch.
    pub fn update(&mut self) -> Result<UpdateStats, TrainError> {
        let batch = self
            .replay
            .sample(self.config.batch_segments, self.config.segment_len, &mut self.rng)?;
        let with_ce = self.model.variant.config().use_ce_loss;
        let (loss_rl, loss_ce, mut grads) = {
            let mut tape = Tape::new(&self.model.params);
            let losses = build_losses(&mut tape, &self.model, &self.target, &batch, &self.loss, with_ce);
            let rl = tape.value(losses.rl).get(0, 0);
            let ce = losses.ce.map(|v| tape.value(v).get(0, 0));
            (rl, ce, tape.param_grads(losses.total))
        };
        if loss_ce.is_some() {
            self.ce_evaluations += 1;
        }
        let finite = loss_rl.is_finite() && loss_ce.is_none_or(f64::is_finite) && grads.all_finite();
        if !finite {
            return Err(TrainError::Diverged {
                update: self.updates,
                loss_rl,
                loss_ce,
            });
        }
        let grad_norm = grads.clip_global_norm(self.config.grad_clip);
        self.optimizer.apply(&mut self.model.params, &grads);
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_update_interval) {
            self.target.copy_from(&self.model.params);
            self.target_syncs += 1;
        }
        Ok(UpdateStats {
            loss_rl,
            loss_ce,
            grad_norm,
        })
    }

    /// Averages since the previous call, or `None` if no episode finished.
    pub fn take_metrics(&mut self) -> Option<MetricsRow> {
        let w = std::mem::take(&mut self.window);
        if w.episodes == 0 {
            return None;
        }
        let per_ep = |x: f64| x / w.episodes as f64;
        Some(MetricsRow {
            step: self.episodes,
            loss_rl: if w.updates > 0 { w.loss_rl / w.updates as f64 } else { f64::NAN },
            loss_ce: if w.ce_updates > 0 { w.loss_ce / w.ce_updates as f64 } else { f64::NAN },
            mean_episode_reward: per_ep(w.reward),
            mean_r_task: per_ep(w.r_task),
            mean_r_inst: per_ep(w.r_inst),
        })
    }

    /// Runs the configured number of episodes, emitting a metrics row every
    /// `log_interval` episodes and at the end.
    pub fn run(&mut self, mut on_row: impl FnMut(&Trainer, &MetricsRow) -> Result<(), TrainError>) -> Result<(), TrainError> {
        while (self.episodes as usize) < self.config.episodes {
            self.run_episode()?;
            let last = self.episodes as usize == self.config.episodes;
            if (self.episodes as usize).is_multiple_of(self.config.log_interval) || last {
                if let Some(row) = self.take_metrics() {
                    on_row(self, &row)?;
                }
            }
        }
        Ok(())
    }
}

/// Files produced by [`train_to_dir`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub episodes: u64,
    pub updates: u64,
    pub ce_evaluations: u64,
}

/// Trains and writes `metrics.csv` plus checkpoints under `dir`.
pub fn train_to_dir(config: &TrainConfig, scenario: &Scenario, dir: &Path) -> Result<TrainOutput, TrainError> {
    std::fs::create_dir_all(dir)?;
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let metrics = dir.join("metrics.csv");
    let mut writer = csv::Writer::from_writer(File::create(&metrics)?);
    let mut checkpoints = Vec::new();
    let mut trainer = Trainer::new(config.clone(), scenario.clone())?;
    let interval = config.checkpoint_interval;
    let mut last_saved = 0;
    trainer.run(|t, row| {
        writer.serialize(row)?;
        writer.flush()?;
        let ep = t.episodes();
        if interval > 0 && ep / interval as u64 > last_saved {
            last_saved = ep / interval as u64;
            let path = ckpt_dir.join(format!("episode_{ep:06}.json"));
            t.checkpoint().save(&path)?;
            checkpoints.push(path);
        }
        Ok(())
    })?;
    let final_checkpoint = ckpt_dir.join("final.json");
    trainer.checkpoint().save(&final_checkpoint)?;
    checkpoints.push(final_checkpoint.clone());
    Ok(TrainOutput {
        metrics,
        checkpoints,
        final_checkpoint,
        episodes: trainer.episodes(),
        updates: trainer.updates(),
        ce_evaluations: trainer.ce_evaluations(),
    })
}
