//! Pipeline configuration file: TOML with one table per stage.
//!
//! ```toml
//! seed = 7
//!
//! [gaze.cone]
//! aperture_deg = 1.0
//!
//! [model]
//! token_dim = 64
//!
//! [model.patches]
//! count = 32
//! size = 16
//!
//! [train]
//! epochs = 150
//!
//! [simplify]
//! lambda = 5.0
//! ```
//!
//! Every key is optional; missing keys take their defaults. Unknown top-level tables
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaze::GazeConfig;
use crate::model::ModelConfig;
use crate::simplify::SimplifyConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; copied into the model and training seeds when set.
    pub seed: Option<u64>,
    pub gaze: GazeConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub simplify: SimplifyConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
