use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GatModel, TrainConfig, HIDDEN_DIM, N_HEADS, N_LAYERS, READOUT_DIM};
use crate::archgraph::FEATURE_DIM;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "coolgraph-gat";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained model plus what is needed to reproduce its evaluation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub readout_dim: usize,
    pub model: GatModel,
    pub train_config: TrainConfig,
    pub train_scenarios: Vec<u64>,
}

impl Checkpoint {
    pub fn new(model: GatModel, train_config: TrainConfig, train_scenarios: Vec<u64>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            feature_dim: FEATURE_DIM,
            hidden_dim: HIDDEN_DIM,
            n_layers: N_LAYERS,
            n_heads: N_HEADS,
            readout_dim: READOUT_DIM,
            model,
            train_config,
            train_scenarios,
        }
    }

    fn check(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let declared = (self.feature_dim, self.hidden_dim, self.n_layers, self.n_heads, self.readout_dim);
        if declared != (FEATURE_DIM, HIDDEN_DIM, N_LAYERS, N_HEADS, READOUT_DIM) {
            return Err(Error::Checkpoint(format!("declared dims {declared:?} do not match this build")));
        }
        self.model
            .validate()
            .map_err(|e| Error::Checkpoint(format!("model tensors: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }
}

/// Writes through a temporary file and renames, so readers never see a
/// partial checkpoint.
pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    c.check()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, c.to_json()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&s)
}
