//! Desk-scale comparison: every variant trained over several seeds, then
//! scored under the quadrant protocol against a shared set of eval seeds.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Scenario;
use crate::eval::{eval_seeds, run_quadrant_eval, EvalError, GreedyPolicy, QuadrantProtocol, TaskMetrics};
use crate::model::{Checkpoint, Model, ModelError, Variant};
use crate::train::{TrainConfig, TrainError, Trainer};

pub const RESULTS_FILE: &str = "results.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("stored results in {0} were produced by a different configuration")]
    ConfigMismatch(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Shared training settings; `variant` and `seed` are overridden per run.
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub quadrant: QuadrantProtocol,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            variants: Variant::ALL.to_vec(),
            seeds: (0..5).collect(),
            quadrant: QuadrantProtocol::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub train_seconds: f64,
    pub updates: u64,
    /// Relative to the experiment directory.
    pub checkpoint: PathBuf,
    pub eval: TaskMetrics,
}

/// Freshly initialized ICCO policy evaluated under the same protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub seed: u64,
    pub eval: TaskMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
    pub untrained: Vec<BaselineResult>,
}

/// Outcome of a paired one-sided sign test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// P(at least `wins` successes out of `wins + losses` fair coin flips).
    pub p_value: f64,
}

/// Pairs are `(a, b)`; the alternative is that `a` tends to exceed `b`.
/// Ties are dropped, as usual for the sign test.
pub fn sign_test(pairs: &[(f64, f64)]) -> SignTest {
    let wins = pairs.iter().filter(|(a, b)| a > b).count();
    let losses = pairs.iter().filter(|(a, b)| a < b).count();
    let n = wins + losses;
    let mut tail = 0.0;
    let mut choose = 1.0;
    for k in 0..=n {
        if k > 0 {
            choose = choose * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            tail += choose;
        }
    }
    SignTest {
        wins,
        losses,
        ties: pairs.len() - n,
        p_value: tail / 2f64.powi(n as i32),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn trial_mean(m: &TaskMetrics, f: impl Fn(&crate::eval::TrialMetrics) -> f64) -> f64 {
    mean(m.trials.iter().map(f))
}

impl ExperimentResults {
    pub fn run(&self, variant: Variant, seed: u64) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    /// Per-seed mean of `f` over eval trials, in seed order.
    pub fn per_seed(&self, variant: Variant, f: impl Fn(&crate::eval::TrialMetrics) -> f64 + Copy) -> Vec<f64> {
        self.config
            .seeds
            .iter()
            .filter_map(|&s| self.run(variant, s))
            .map(|r| trial_mean(&r.eval, f))
            .collect()
    }

    /// Mean over seeds of the per-seed trial mean.
    pub fn mean(&self, variant: Variant, f: impl Fn(&crate::eval::TrialMetrics) -> f64 + Copy) -> f64 {
        mean(self.per_seed(variant, f).into_iter())
    }

    pub fn untrained_mean(&self, f: impl Fn(&crate::eval::TrialMetrics) -> f64 + Copy) -> f64 {
        mean(self.untrained.iter().map(|b| trial_mean(&b.eval, f)))
    }

    /// Sign test of `a` over `b` on mean eval reward, paired by training seed.
    pub fn reward_sign_test(&self, a: Variant, b: Variant) -> SignTest {
        let pairs: Vec<(f64, f64)> = self
            .config
            .seeds
            .iter()
            .filter_map(|&s| {
                let x = self.run(a, s)?;
                let y = self.run(b, s)?;
                Some((trial_mean(&x.eval, |t| t.reward), trial_mean(&y.eval, |t| t.reward)))
            })
            .collect();
        sign_test(&pairs)
    }

    pub fn is_complete(&self) -> bool {
        self.untrained.len() == self.config.seeds.len()
            && self
                .config
                .variants
                .iter()
                .all(|&v| self.config.seeds.iter().all(|&s| self.run(v, s).is_some()))
    }

    pub fn load(dir: &Path) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_slice(&std::fs::read(dir.join(RESULTS_FILE))?)?)
    }

    fn save(&self, dir: &Path) -> Result<(), ExperimentError> {
        let tmp = dir.join("results.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(tmp, dir.join(RESULTS_FILE))?;
        Ok(())
    }
}

pub fn checkpoint_path(variant: Variant, seed: u64) -> PathBuf {
    PathBuf::from(format!("{}_seed{seed}.json", variant.to_string().to_lowercase()))
}

/// Greedy quadrant evaluation of a stored checkpoint.
pub fn evaluate_checkpoint(path: &Path, scenario: &Scenario, protocol: &QuadrantProtocol) -> Result<TaskMetrics, ExperimentError> {
    let model = Model::from_checkpoint(&Checkpoint::load(path)?)?;
    let mut policy = GreedyPolicy::new(model);
    Ok(run_quadrant_eval(&mut policy, scenario, protocol, &eval_seeds(protocol.trials), None)?)
}

/// Runs whatever is missing from `dir/results.json` and returns the full set.
/// Results are saved after every run, so an interrupted experiment resumes
/// where it stopped.
pub fn run_experiment(
    config: &ExperimentConfig,
    scenario: &Scenario,
    dir: &Path,
    mut progress: impl FnMut(&str),
) -> Result<ExperimentResults, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let mut results = if dir.join(RESULTS_FILE).exists() {
        let r = ExperimentResults::load(dir)?;
        if &r.config != config {
            return Err(ExperimentError::ConfigMismatch(dir.to_path_buf()));
        }
        r
    } else {
        ExperimentResults {
            config: config.clone(),
            runs: Vec::new(),
            untrained: Vec::new(),
        }
    };
    let seeds = eval_seeds(config.quadrant.trials);

    for &seed in &config.seeds {
        if results.untrained.iter().any(|b| b.seed == seed) {
            continue;
        }
        let cfg = TrainConfig {
            variant: Variant::Icco,
            seed,
            ..config.train.clone()
        };
        let model = Model::new(Variant::Icco, cfg.model_config(scenario), seed)?;
        let eval = run_quadrant_eval(&mut GreedyPolicy::new(model), scenario, &config.quadrant, &seeds, None)?;
        results.untrained.push(BaselineResult { seed, eval });
        results.save(dir)?;
    }

    for &variant in &config.variants {
        for &seed in &config.seeds {
            if results.run(variant, seed).is_some() {
                continue;
            }
            let started = Instant::now();
            let cfg = TrainConfig {
                variant,
                seed,
                ..config.train.clone()
            };
            let mut trainer = Trainer::new(cfg, scenario.clone())?;
            trainer.run(|_, _| Ok(()))?;
            let train_seconds = started.elapsed().as_secs_f64();
            let checkpoint = checkpoint_path(variant, seed);
            // Evaluation only needs the weights, not the optimizer moments.
            trainer
                .model()
                .to_checkpoint(None, trainer.updates(), trainer.episodes())
                .save(dir.join(&checkpoint))?;
            let eval = run_quadrant_eval(
                &mut GreedyPolicy::new(trainer.model().clone()),
                scenario,
                &config.quadrant,
                &seeds,
                None,
            )?;
            let s = eval.summary();
            progress(&format!(
                "{variant} seed {seed}: {train_seconds:.0}s, reward {}, defenses {}, e_cossim {}",
                s.reward, s.defenses, s.e_cossim
            ));
            results.runs.push(RunResult {
                variant,
                seed,
                train_seconds,
                updates: trainer.updates(),
                checkpoint,
                eval,
            });
            results.save(dir)?;
        }
    }
    Ok(results)
}
