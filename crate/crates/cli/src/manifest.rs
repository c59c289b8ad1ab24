//! Run manifest: the index of everything a training run wrote.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use icco_core::model::Variant;
use icco_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub run_id: String,
    pub variant: Variant,
    pub use_ce_loss: bool,
    /// Snapshot of the config the run was started with. Never rewritten.
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: Vec<PathBuf>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("unsupported manifest version {0}")]
    Version(u32),
    #[error("manifest config differs from the run's original config")]
    ConfigChanged,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RunManifest {
    pub fn new(run_id: String, config: TrainConfig) -> Self {
        Self {
            version: MANIFEST_VERSION,
            run_id,
            variant: config.variant,
            use_ce_loss: config.variant.config().use_ce_loss,
            seeds: vec![config.seed],
            config,
            checkpoints: Vec::new(),
            metrics: Vec::new(),
            created_at: Utc::now(),
        }
    }

    /// Writes via a temporary file and rename so readers never see a torn
    /// manifest. Refuses to change the config of an existing run.
    pub fn write(&self, dir: &Path) -> Result<(), ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            let old = Self::load(dir)?;
            if old.config != self.config {
                return Err(ManifestError::ConfigChanged);
            }
        }
        let tmp = dir.join("manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ManifestError> {
        let m: Self = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
        if m.version != MANIFEST_VERSION {
            return Err(ManifestError::Version(m.version));
        }
        Ok(m)
    }
}
