use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelPair, TrainConfig};
use crate::error::{check_dim, Result};
use crate::taylor::TaylorGradNet;

/// Both trained networks plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tp: TaylorGradNet,
    pub vq: TaylorGradNet,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(model: ModelPair, config: TrainConfig) -> Self {
        Checkpoint { tp: model.tp, vq: model.vq, config }
    }

    pub fn model(&self) -> Result<ModelPair> {
        ModelPair::new(self.tp.clone(), self.vq.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        check_dim(ck.tp.dim(), ck.vq.dim())?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
