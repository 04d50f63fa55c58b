//! Scenario files: one TOML document fully determines a run.
//!
//! Terrain comes either from a DEM file (path resolved relative to the
//! scenario file) or from the seeded generator, so a scenario plus a seed
//! reproduces every command bit-for-bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::KinematicLimits;
use crate::flowfield::FieldConfig;
use crate::mdrrt::RrtConfig;
use crate::mission::{MissionConfig, Region, RewardConfig, World};
use crate::ppo::PpoConfig;
use crate::terrain::{generate_terrain, TerrainGrid};
use crate::threats::{SensorConfig, Threat};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum TerrainSource {
    File {
        path: PathBuf,
    },
    Generate {
        seed: u64,
        cols: usize,
        rows: usize,
        cell_size: f64,
        relief: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Master seed; every stream (episodes, updates, evaluation) derives
    /// from it.
    pub seed: u64,
    pub terrain: TerrainSource,
    #[serde(default)]
    pub threats: Vec<Threat>,
    pub start: Region,
    pub goal: Region,
    #[serde(default)]
    pub limits: KinematicLimits,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub rrt: RrtConfig,
    #[serde(default)]
    pub mission: MissionConfig,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario parse: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("scenario encode: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Materializes the simulation world. `base_dir` anchors relative DEM
    /// paths (normally the scenario file's directory).
    pub fn build_world(&self, base_dir: &Path) -> Result<World> {
        let terrain = match &self.terrain {
            TerrainSource::File { path } => {
                let resolved = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                TerrainGrid::load(&resolved)?
            }
            TerrainSource::Generate { seed, cols, rows, cell_size, relief } => {
                generate_terrain(*seed, *cols, *rows, *cell_size, *relief)?
            }
        };
        let world = World {
            terrain,
            threats: self.threats.clone(),
            limits: self.limits,
            field: self.field,
            sensor: self.sensor,
            reward: self.reward,
            rrt: self.rrt,
            mission: self.mission,
            start_region: self.start,
            goal_region: self.goal,
        };
        world.validate()?;
        Ok(world)
    }
}
