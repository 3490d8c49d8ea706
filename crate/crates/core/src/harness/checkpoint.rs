use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::ShiftRegion;
use crate::error::Result;

use super::config::Config;
use super::model::Model;
use super::train::{EpochRecord, Trained};

/// Trained weights, fitted shift regions and the configuration that
/// produced them, stored as one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub config: Config,
    pub kept_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub shift_regions: Vec<ShiftRegion>,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(config: &Config, seed: u64, trained: &Trained) -> Self {
        Self {
            seed,
            config: config.clone(),
            kept_epoch: trained.kept_epoch,
            history: trained.history.clone(),
            shift_regions: trained.regions.clone(),
            model: trained.model.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = toml::from_str(&fs::read_to_string(path)?)?;
        ck.model.validate()?;
        for r in &ck.shift_regions {
            r.validate()?;
        }
        Ok(ck)
    }
}
