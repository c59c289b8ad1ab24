use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use icco_cli::commands::{
    build_translator, cmd_eval, cmd_experiment, cmd_train, load_train_config, EvalOptions, Protocol, TranslatorKind, TranslatorOptions,
};
use icco_cli::serve::{bind, serve_on, start_session, ServeConfig};
use icco_core::eval::GreedyPolicy;
use icco_core::experiment::ExperimentConfig;
use icco_core::model::{Checkpoint, Model};
use icco_core::model::Variant;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "icco", version, about = "Instruction-conditioned multi-agent coordination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to runs/<variant>-seed<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under the quadrant or language protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Use the deterministic mock translator (language protocol).
        #[arg(long)]
        mock: bool,
        #[arg(long, value_enum, default_value = "live")]
        translator: TranslatorKind,
        #[arg(long)]
        replay_dir: Option<PathBuf>,
        /// Include task and reward information in the prompt.
        #[arg(long)]
        task_aligned: bool,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Report directory; defaults to eval/ next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip per-step trajectory logs.
        #[arg(long)]
        no_logs: bool,
    },
    /// Run a live session streaming state over WebSocket at /ws.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, value_enum, default_value = "mock")]
        translator: TranslatorKind,
        #[arg(long)]
        replay_dir: Option<PathBuf>,
        #[arg(long)]
        task_aligned: bool,
        #[arg(long, default_value_t = 10.0)]
        tick_hz: f64,
        /// Seconds before a pending translation is reported as timed out.
        #[arg(long, default_value_t = 60)]
        translator_timeout: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every variant over several seeds and compare them.
    Experiment {
        /// Optional TOML with an `ExperimentConfig`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Train { config, out } => {
            let cfg = load_train_config(&config)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.variant.as_str().to_lowercase(), cfg.seed)));
            let manifest = cmd_train(&cfg, &out)?;
            println!("{}", out.join(icco_cli::manifest::MANIFEST_FILE).display());
            for c in &manifest.checkpoints {
                println!("{}", out.join(c).display());
            }
        }
        Command::Eval {
            checkpoint,
            protocol,
            mock,
            translator,
            replay_dir,
            task_aligned,
            trials,
            out,
            no_logs,
        } => {
            let out = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(".".as_ref()).join("eval"));
            let opts = EvalOptions {
                protocol,
                trials,
                out,
                write_logs: !no_logs,
                translator: TranslatorOptions {
                    kind: if mock { TranslatorKind::Mock } else { translator },
                    replay_dir,
                    task_aligned,
                    waypoints: 4,
                },
            };
            let paths = cmd_eval(&checkpoint, &opts)?;
            print!("{}", std::fs::read_to_string(&paths.table)?);
        }
        Command::Serve {
            checkpoint,
            bind: addr,
            translator,
            replay_dir,
            task_aligned,
            tick_hz,
            translator_timeout,
            seed,
        } => {
            let model = Model::from_checkpoint(&Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?)?;
            let translator = build_translator(&TranslatorOptions {
                kind: translator,
                replay_dir,
                task_aligned,
                waypoints: model.config.waypoints,
            })?;
            let config = ServeConfig {
                tick_hz,
                translator_timeout: Duration::from_secs(translator_timeout),
                seed,
                ..ServeConfig::default()
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = bind(addr).await?;
                let handle = start_session(GreedyPolicy::new(model), Arc::new(Mutex::new(Box::new(translator))), config)?;
                tracing::info!(%addr, "serving");
                serve_on(listener, handle).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Experiment {
            config,
            out,
            episodes,
            seeds,
            variants,
        } => {
            let mut cfg = match config {
                Some(p) => toml::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => ExperimentConfig::default(),
            };
            if let Some(e) = episodes {
                cfg.train.episodes = e;
            }
            if let Some(n) = seeds {
                cfg.seeds = (0..n).collect();
            }
            if let Some(v) = variants {
                cfg.variants = v;
            }
            cmd_experiment(&cfg, &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.md"))?);
        }
    }
    Ok(())
}
