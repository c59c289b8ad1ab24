use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnvError;

/// Event reward constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConstants {
    pub pick: f64,
    pub collect: f64,
    pub defense: f64,
    pub breach: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            pick: 5.0,
            collect: 1.0,
            defense: 4.0,
            breach: -4.0,
        }
    }
}

/// Static description of the resource-collection field. Loaded from TOML;
/// omitted keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub n_agents: usize,
    pub n_resources: usize,
    /// 0 or 1.
    pub n_invaders: usize,
    /// Side length of the square field, centered on the origin (m).
    pub field_side: f64,
    pub episode_len: usize,
    /// Agent displacement per step (m).
    pub step_size: f64,
    /// Invader displacement per step (m).
    pub invader_speed: f64,
    pub contact_radius: f64,
    pub home_radius: f64,
    pub observation_radius: f64,
    pub rewards: RewardConstants,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n_agents: 3,
            n_resources: 6,
            n_invaders: 1,
            field_side: 6.5,
            episode_len: 145,
            step_size: 0.1,
            invader_speed: 0.05,
            contact_radius: 0.15,
            home_radius: 0.3,
            observation_radius: 0.65,
            rewards: RewardConstants::default(),
        }
    }
}

impl Scenario {
    pub fn half_extent(&self) -> f64 {
        self.field_side / 2.0
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidScenario(msg));
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if self.n_resources == 0 {
            return bad("n_resources must be positive".into());
        }
        if self.n_invaders > 1 {
            return bad(format!("at most one invader is supported, got {}", self.n_invaders));
        }
        if self.episode_len == 0 {
            return bad("episode_len must be positive".into());
        }
        for (name, v) in [
            ("field_side", self.field_side),
            ("step_size", self.step_size),
            ("invader_speed", self.invader_speed),
            ("contact_radius", self.contact_radius),
            ("home_radius", self.home_radius),
            ("observation_radius", self.observation_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.home_radius + self.contact_radius >= self.half_extent() {
            return bad("home does not fit inside the field".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, EnvError> {
        let scenario: Scenario = toml::from_str(s).map_err(|e| EnvError::InvalidScenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}
