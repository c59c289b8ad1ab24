//! Command implementations, kept separate from argument parsing so tests can
//! drive them directly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use icco_core::env::Scenario;
use icco_core::eval::{
    eval_seeds, export_report, run_language_eval, run_quadrant_eval, GreedyPolicy, LanguageProtocol, QuadrantProtocol,
    ReportPaths, TaskMetrics,
};
use icco_core::experiment::{run_experiment, ExperimentConfig, ExperimentResults};
use icco_core::llm::{InstructionTag, LiveClient, LlmClient, PromptVariant, ReplayClient, Translator};
use icco_core::model::{Checkpoint, Model, Variant};
use icco_core::train::{train_to_dir, TrainConfig};

use crate::manifest::RunManifest;

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TrainConfig::from_toml_str(&text)?)
}

pub fn cmd_train(config: &TrainConfig, out: &Path) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let run_id = format!("{}-seed{}-{}", config.variant.as_str().to_lowercase(), config.seed, chrono::Utc::now().format("%Y%m%dT%H%M%S"));
    let mut manifest = RunManifest::new(run_id, config.clone());
    // The manifest exists before any checkpoint does.
    manifest.write(out)?;
    let output = train_to_dir(config, &Scenario::default(), out)?;
    let rel = |p: &Path| p.strip_prefix(out).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    manifest.checkpoints = output.checkpoints.iter().map(|p| rel(p)).collect();
    manifest.metrics = vec![rel(&output.metrics)];
    manifest.write(out)?;
    tracing::info!(episodes = output.episodes, updates = output.updates, "training finished");
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Protocol {
    Quadrant,
    Language,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TranslatorKind {
    Mock,
    Live,
    Replay,
}

#[derive(Clone, Debug)]
pub struct TranslatorOptions {
    pub kind: TranslatorKind,
    pub replay_dir: Option<PathBuf>,
    pub task_aligned: bool,
    pub waypoints: usize,
}

pub fn build_translator(opts: &TranslatorOptions) -> Result<Translator> {
    let client: Box<dyn LlmClient + Send> = match opts.kind {
        TranslatorKind::Mock => Box::new(icco_core::llm::MockClient),
        TranslatorKind::Live => Box::new(LiveClient::from_env().context("live translator unavailable")?),
        TranslatorKind::Replay => {
            let Some(dir) = &opts.replay_dir else {
                bail!("--replay-dir is required for the replay translator");
            };
            Box::new(ReplayClient::new(dir))
        }
    };
    let mut t = Translator::new(client, opts.waypoints);
    if opts.task_aligned {
        t.variant = PromptVariant::TaskAligned;
    }
    Ok(t)
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub protocol: Protocol,
    pub trials: usize,
    pub out: PathBuf,
    pub translator: TranslatorOptions,
    pub write_logs: bool,
}

pub fn cmd_eval(checkpoint: &Path, opts: &EvalOptions) -> Result<ReportPaths> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let model = Model::from_checkpoint(&ckpt)?;
    let scenario = Scenario::default();
    let mut policy = GreedyPolicy::new(model);
    policy.check_scenario(&scenario)?;
    let seeds = eval_seeds(opts.trials);
    std::fs::create_dir_all(&opts.out)?;
    let logs = opts.out.join("logs");
    let logs = opts.write_logs.then_some(logs.as_path());
    match opts.protocol {
        Protocol::Quadrant => {
            let protocol = QuadrantProtocol {
                trials: opts.trials,
                refresh_interval: ckpt.config.refresh_interval,
                waypoints: ckpt.config.waypoints,
                ..QuadrantProtocol::default()
            };
            let metrics = run_quadrant_eval(&mut policy, &scenario, &protocol, &seeds, logs)?;
            Ok(export_report(&opts.out, "quadrant", &[metrics])?)
        }
        Protocol::Language => {
            let mut translator = build_translator(&TranslatorOptions {
                waypoints: ckpt.config.waypoints,
                ..opts.translator.clone()
            })?;
            let protocol = LanguageProtocol {
                trials: opts.trials,
                refresh_interval: ckpt.config.refresh_interval,
                waypoints: ckpt.config.waypoints,
                ..LanguageProtocol::default()
            };
            let instructions: Vec<String> = InstructionTag::ALL.iter().map(|t| t.text().to_string()).collect();
            let outcome = run_language_eval(&mut policy, &scenario, &protocol, &instructions, &mut translator, &seeds, logs)?;
            for f in &outcome.failures {
                tracing::warn!(trial = f.trial, instruction = %f.instruction, error = %f.error, "translation failed");
            }
            std::fs::write(opts.out.join("language_failures.json"), serde_json::to_vec_pretty(&outcome.failures)?)?;
            let rows: Vec<TaskMetrics> = outcome.per_instruction.into_iter().filter(|m| !m.trials.is_empty()).collect();
            if rows.is_empty() {
                bail!("every translation failed; see language_failures.json");
            }
            Ok(export_report(&opts.out, "language", &rows)?)
        }
    }
}

/// All trials of one variant pooled across training seeds.
pub fn pooled(results: &ExperimentResults, variant: Variant) -> TaskMetrics {
    TaskMetrics {
        label: variant.to_string(),
        trials: results
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .flat_map(|r| r.eval.trials.iter().cloned())
            .collect(),
    }
}

/// Markdown summary of an experiment: pooled table plus per-seed sign tests.
pub fn experiment_summary(results: &ExperimentResults) -> String {
    let rows: Vec<TaskMetrics> = results.config.variants.iter().map(|&v| pooled(results, v)).collect();
    let mut out = icco_core::eval::render_table(&rows);
    let _ = writeln!(out);
    let _ = writeln!(out, "| Comparison | Wins | Losses | Ties | p (one-sided) |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    for other in [Variant::IccoNoCe, Variant::Qmix, Variant::QmixFull] {
        let t = results.reward_sign_test(Variant::Icco, other);
        let _ = writeln!(out, "| ICCO > {other} | {} | {} | {} | {:.4} |", t.wins, t.losses, t.ties, t.p_value);
    }
    out
}

pub fn cmd_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentResults> {
    let results = run_experiment(config, &Scenario::default(), out, |line| tracing::info!("{line}"))?;
    std::fs::write(out.join("summary.md"), experiment_summary(&results))?;
    Ok(results)
}
