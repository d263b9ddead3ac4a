//! Simulator configuration, loaded from a JSON file.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::control::{ModeBindings, SpeedLimits};
use crate::disturbance::{DitherSpec, FrictionParams};
use crate::error::{Error, Result};
use crate::kinematics::{CatheterGeometry, JointState};
use crate::phantom::ValvePhantom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct SessionConfig {
    pub geometry: CatheterGeometry,
    pub friction: FrictionParams,
    pub dither: DitherSpec,
    pub speed_limits: SpeedLimits,
    pub mode_bindings: ModeBindings,
    pub phantom: ValvePhantom,
    /// Simulation tick rate (Hz).
    pub tick_rate: f64,
    /// Live snapshot rate (Hz).
    pub snapshot_rate: f64,
    /// Stick deadzone, as a fraction of full deflection.
    pub deadzone: f64,
    /// Flip the back-to-front stick axes.
    pub invert_ap: bool,
    /// Joint state at the start of a trial: clip just out of the transseptal
    /// sheath inside the left atrium.
    pub initial_state: JointState,
    /// Where live sessions write trial logs.
    pub log_dir: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            geometry: CatheterGeometry::default(),
            friction: FrictionParams::default(),
            dither: DitherSpec::default(),
            speed_limits: SpeedLimits::default(),
            mode_bindings: ModeBindings::default(),
            phantom: ValvePhantom::default(),
            tick_rate: 100.0,
            snapshot_rate: 30.0,
            deadzone: 0.05,
            invert_ap: false,
            initial_state: JointState { ts_translation: 30.0, is_translation: 5.0, ..Default::default() },
            log_dir: None,
        }
    }
}

impl SessionConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: SessionConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: std::result::Result<(), String>| r.map_err(Error::Config);
        wrap(self.geometry.validate())?;
        wrap(self.friction.validate())?;
        wrap(self.speed_limits.validate())?;
        wrap(self.phantom.validate())?;
        if !(self.dither.amplitude >= 0.0 && self.dither.frequency > 0.0) {
            return Err(Error::Config("dither amplitude must be >= 0 and frequency > 0".into()));
        }
        if !(self.tick_rate > 0.0 && self.snapshot_rate > 0.0) {
            return Err(Error::Config("tick and snapshot rates must be positive".into()));
        }
        if self.snapshot_rate > self.tick_rate {
            return Err(Error::Config(format!("snapshot rate {} exceeds tick rate {}", self.snapshot_rate, self.tick_rate)));
        }
        if !(0.0..1.0).contains(&self.deadzone) {
            return Err(Error::Config("deadzone must be in [0, 1)".into()));
        }
        if let Some(dir) = &self.log_dir {
            if !dir.is_dir() {
                return Err(Error::Config(format!("log_dir {} does not exist", dir.display())));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn plant(&self) -> crate::control::PlantModel<'_> {
        crate::control::PlantModel { geometry: &self.geometry, friction: &self.friction, dither: &self.dither }
    }
}
