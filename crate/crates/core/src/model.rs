//! Network bundles for the four method variants, the per-agent input encoding
//! they share, and checkpoint persistence.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GlobalStateLayout, ObservationLayout, Scenario, N_ACTIONS};
use crate::geometry::Vec2;
use crate::instruction::InstructionVector;
use crate::nn::{Adam, AgentQNet, CoordinatorNet, Matrix, MonotonicMixer, NnError, ParamStore, PosteriorNet};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "QMIX")]
    Qmix,
    #[serde(rename = "QMIX_FULL")]
    QmixFull,
    #[serde(rename = "ICCO_NO_CE")]
    IccoNoCe,
    #[serde(rename = "ICCO")]
    Icco,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScope {
    Local,
    Global,
}

/// Feature flags implied by a [`Variant`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub use_coordinator: bool,
    pub use_ce_loss: bool,
    pub agent_input_scope: InputScope,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Qmix, Variant::QmixFull, Variant::IccoNoCe, Variant::Icco];

    pub fn config(self) -> VariantConfig {
        let (use_coordinator, use_ce_loss, agent_input_scope) = match self {
            Variant::Qmix => (false, false, InputScope::Local),
            Variant::QmixFull => (false, false, InputScope::Global),
            Variant::IccoNoCe => (true, false, InputScope::Local),
            Variant::Icco => (true, true, InputScope::Local),
        };
        VariantConfig {
            variant: self,
            use_coordinator,
            use_ce_loss,
            agent_input_scope,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Qmix => "QMIX",
            Variant::QmixFull => "QMIX_FULL",
            Variant::IccoNoCe => "ICCO_NO_CE",
            Variant::Icco => "ICCO",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

/// Network widths plus the environment-derived dimensions they depend on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// Waypoints per agent instruction.
    pub waypoints: usize,
    /// Steps between instruction (and latent) refreshes.
    pub refresh_interval: usize,
    /// Latent size per agent.
    pub latent_dim: usize,
    /// Length of the future window the posterior conditions on, counting the
    /// refresh step itself.
    pub window: usize,
    pub agent_hidden: usize,
    pub mixer_embed: usize,
    pub hyper_hidden: usize,
    pub coordinator_hidden: usize,
    pub posterior_hidden: usize,
}

/// Widths that are free choices rather than functions of the scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSizes {
    pub waypoints: usize,
    pub refresh_interval: usize,
    pub latent_dim: usize,
    pub window: usize,
    pub agent_hidden: usize,
    pub mixer_embed: usize,
    pub hyper_hidden: usize,
    pub coordinator_hidden: usize,
    pub posterior_hidden: usize,
}

impl Default for NetworkSizes {
    fn default() -> Self {
        Self {
            waypoints: 4,
            refresh_interval: 4,
            latent_dim: 8,
            window: 4,
            agent_hidden: 64,
            mixer_embed: 32,
            hyper_hidden: 64,
            coordinator_hidden: 64,
            posterior_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn new(scenario: &Scenario, sizes: &NetworkSizes) -> Self {
        Self {
            n_agents: scenario.n_agents,
            n_actions: N_ACTIONS,
            obs_dim: ObservationLayout::new(scenario).dim(),
            state_dim: GlobalStateLayout::new(scenario, sizes.waypoints).dim(),
            waypoints: sizes.waypoints,
            refresh_interval: sizes.refresh_interval,
            latent_dim: sizes.latent_dim,
            window: sizes.window,
            agent_hidden: sizes.agent_hidden,
            mixer_embed: sizes.mixer_embed,
            hyper_hidden: sizes.hyper_hidden,
            coordinator_hidden: sizes.coordinator_hidden,
            posterior_hidden: sizes.posterior_hidden,
        }
    }

    pub fn instruction_dim(&self) -> usize {
        self.n_agents * self.waypoints * 2
    }

    pub fn joint_latent(&self) -> usize {
        self.n_agents * self.latent_dim
    }

    /// Observation, previous-action one-hot, agent-id one-hot.
    pub fn base_input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    /// Width of the part of the agent input built outside the tape.
    pub fn feature_dim(&self, variant: Variant) -> usize {
        let own_waypoints = 2 * self.waypoints;
        self.base_input_dim()
            + match variant {
                Variant::Qmix => own_waypoints,
                Variant::QmixFull => own_waypoints + self.state_dim,
                Variant::IccoNoCe | Variant::Icco => 0,
            }
    }

    pub fn agent_input_dim(&self, variant: Variant) -> usize {
        self.feature_dim(variant) + if variant.config().use_coordinator { self.latent_dim } else { 0 }
    }

    pub fn mixer_cond_dim(&self, variant: Variant) -> usize {
        self.state_dim + if variant.config().use_coordinator { self.joint_latent() } else { 0 }
    }

    pub fn posterior_state_input(&self) -> usize {
        self.state_dim + self.n_agents * self.n_actions + self.instruction_dim()
    }

    pub fn posterior_step_input(&self) -> usize {
        self.n_agents * (self.obs_dim + self.n_actions) + self.instruction_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_agents", self.n_agents),
            ("n_actions", self.n_actions),
            ("waypoints", self.waypoints),
            ("refresh_interval", self.refresh_interval),
            ("latent_dim", self.latent_dim),
            ("window", self.window),
            ("agent_hidden", self.agent_hidden),
            ("mixer_embed", self.mixer_embed),
            ("hyper_hidden", self.hyper_hidden),
            ("coordinator_hidden", self.coordinator_hidden),
            ("posterior_hidden", self.posterior_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parameters and network structure for one variant.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: Variant,
    pub config: ModelConfig,
    pub params: ParamStore,
    pub agent: AgentQNet,
    pub mixer: MonotonicMixer,
    pub coordinator: Option<CoordinatorNet>,
    pub posterior: Option<PosteriorNet>,
}

impl Model {
    pub fn new(variant: Variant, config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let agent = AgentQNet::new(&mut params, c.agent_input_dim(variant), c.agent_hidden, c.n_actions, &mut rng);
        let mixer = MonotonicMixer::new(
            &mut params,
            c.n_agents,
            c.mixer_cond_dim(variant),
            c.mixer_embed,
            c.hyper_hidden,
            &mut rng,
        );
        let vc = variant.config();
        let coordinator = vc.use_coordinator.then(|| {
            CoordinatorNet::new(
                &mut params,
                c.state_dim,
                c.instruction_dim(),
                c.n_agents,
                c.latent_dim,
                c.coordinator_hidden,
                &mut rng,
            )
        });
        let posterior = vc.use_ce_loss.then(|| {
            PosteriorNet::new(
                &mut params,
                c.posterior_state_input(),
                c.posterior_step_input(),
                c.joint_latent(),
                c.posterior_hidden,
                &mut rng,
            )
        });
        Ok(Self {
            variant,
            config,
            params,
            agent,
            mixer,
            coordinator,
            posterior,
        })
    }

    pub fn variant_config(&self) -> VariantConfig {
        self.variant.config()
    }

    /// Appends agent `i`'s off-tape input features to `out`.
    #[allow(clippy::too_many_arguments)]
    pub fn encode_features(
        &self,
        out: &mut Vec<f64>,
        i: usize,
        observation: &[f64],
        prev_action: Option<usize>,
        position: Vec2,
        own_waypoints: &[Vec2],
        global_state: &[f64],
    ) {
        let c = &self.config;
        debug_assert_eq!(observation.len(), c.obs_dim);
        out.extend_from_slice(observation);
        one_hot_into(out, prev_action, c.n_actions);
        one_hot_into(out, Some(i), c.n_agents);
        match self.variant {
            Variant::Qmix | Variant::QmixFull => {
                for w in own_waypoints {
                    let d = (*w - position) * INSTRUCTION_FEATURE_SCALE;
                    out.push(d.x);
                    out.push(d.y);
                }
                if self.variant == Variant::QmixFull {
                    debug_assert_eq!(global_state.len(), c.state_dim);
                    out.extend_from_slice(global_state);
                }
            }
            Variant::IccoNoCe | Variant::Icco => {}
        }
    }

    pub fn to_checkpoint(&self, optimizer: Option<&Adam>, train_step: u64, episodes: u64) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            variant: self.variant,
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(name, m)| NamedTensor {
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.as_slice().to_vec(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
            train_step,
            episodes,
        }
    }

    /// Rebuilds the model and fills every parameter by name. Tensors in the
    /// checkpoint that the current layout does not use are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Version(ckpt.version));
        }
        let mut model = Model::new(ckpt.variant, ckpt.config.clone(), 0)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let t = ckpt
                .params
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            let m = model.params.get_mut(id);
            if (t.rows, t.cols) != m.shape() || t.data.len() != t.rows * t.cols {
                return Err(ModelError::ParamShape {
                    name,
                    expected: m.shape(),
                    actual: (t.rows, t.cols),
                });
            }
            *m = Matrix::from_vec(t.rows, t.cols, t.data.clone());
        }
        Ok(model)
    }
}

/// Multiplies waypoint offsets before they enter any network. Training walks
/// move about 0.1 m per waypoint, so raw offsets are an order of magnitude
/// smaller than the other inputs.
pub const INSTRUCTION_FEATURE_SCALE: f64 = 10.0;

/// Instruction input of the coordinator and the posterior: each agent's
/// waypoints as scaled offsets from that agent's position, agent-major. The
/// absolute waypoints are already part of the global state.
pub fn instruction_features(instructions: &InstructionVector, positions: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(instructions.flat_len());
    for (i, &p) in positions.iter().enumerate() {
        out.extend(instructions.relative_to(i, p).into_iter().map(|x| x * INSTRUCTION_FEATURE_SCALE));
    }
    out
}

pub(crate) fn one_hot_into(out: &mut Vec<f64>, index: Option<usize>, n: usize) {
    let start = out.len();
    out.resize(start + n, 0.0);
    if let Some(i) = index {
        out[start + i] = 1.0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// On-disk model snapshot (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub variant: Variant,
    pub config: ModelConfig,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<Adam>,
    pub train_step: u64,
    pub episodes: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path.as_ref())?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Version(ckpt.version));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown variant {0:?}; expected QMIX, QMIX_FULL, ICCO_NO_CE or ICCO")]
    UnknownVariant(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name}: expected shape {expected:?}, checkpoint has {actual:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
