//! Run configuration, read from a TOML file. Every field has a default, so
//! an empty file is a valid configuration.
//!
//! ```toml
//! [sim]
//! dt = 0.2
//! y_goal = 1.0
//!
//! [camera]
//! cam_y = 2.4
//!
//! [trainer]
//! seed = 7
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dqn::TrainerConfig;
use crate::env::{ActionTable, EnvSettings, EpisodeConfig, ObservationEncoding, PhaseConfig};
use crate::error::{DockError, Result};
use crate::sim::SimConfig;
use crate::vision::{CameraModel, DetectorNoise, MarkerLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DockConfig {
    pub sim: SimConfig,
    pub camera: CameraModel,
    pub markers: MarkerLayout,
    /// Detector noise applied while training.
    pub noise: DetectorNoise,
    pub episode: EpisodeConfig,
    pub actions: ActionTable,
    pub encoding: ObservationEncoding,
    pub phases: Vec<PhaseConfig>,
    pub trainer: TrainerConfig,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Detector jitter during grid evaluation, in pixels.
    pub sigma_px: f64,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            sigma_px: 1.0,
            seed: 2021,
        }
    }
}

impl Default for DockConfig {
    fn default() -> Self {
        DockConfig {
            sim: SimConfig::default(),
            camera: CameraModel::default(),
            markers: MarkerLayout::default(),
            noise: DetectorNoise::default(),
            episode: EpisodeConfig::default(),
            actions: ActionTable::default(),
            encoding: ObservationEncoding::default(),
            phases: PhaseConfig::all(),
            trainer: TrainerConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl DockConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DockError::io(path, e))?;
        let cfg = Self::from_toml_str(&text).map_err(|message| DockError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn env_settings(&self) -> EnvSettings {
        EnvSettings {
            sim: self.sim,
            camera: self.camera,
            markers: self.markers,
            noise: self.noise,
            episode: self.episode,
            actions: self.actions.clone(),
            encoding: self.encoding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.camera.validate()?;
        self.markers.validate()?;
        self.noise.validate()?;
        self.episode.validate()?;
        self.actions.validate(&self.sim)?;
        self.encoding.validate()?;
        self.trainer.validate()?;
        if self.phases.is_empty() {
            return Err(DockError::Config("at least one curriculum phase is required".into()));
        }
        for p in &self.phases {
            if !(p.c1 > 0.0 && p.c2 >= 0.0 && p.success_reward >= 0.0 && p.advance_threshold.is_finite()) {
                return Err(DockError::Config(format!("invalid phase {p:?}")));
            }
        }
        Ok(())
    }
}
