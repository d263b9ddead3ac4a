use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::control::{ControlMode, ControlPath, ManualAction};
use crate::error::{Error, Result};
use crate::hid::GamepadFrame;
use crate::kinematics::JointState;
use crate::phantom::Segment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ClipCommand {
    OpenArms,
    CloseArms,
    LowerGrippers,
    RaiseGrippers,
    Release,
}

/// What happens at a scripted instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScriptAction {
    /// Controller input, held until the next frame (robotic path).
    Frame { frame: GamepadFrame },
    /// Handle adjustment, held until the next one (manual path).
    Manual { manual: ManualAction },
    StepStart { step: u8 },
    StepEnd { step: u8 },
    CorrectionStart,
    CorrectionEnd,
    /// Roll-induced lateral displacement of the clip (mm), applied as an
    /// uncommanded intermediate sheath deflection.
    LateralOffset { mm: f64 },
    Clip { command: ClipCommand },
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScriptEntry {
    /// Seconds from trial start.
    pub t: f64,
    #[serde(flatten)]
    pub action: ScriptAction,
}

/// A timed input sequence for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CommandScript {
    pub name: String,
    pub control: ControlPath,
    pub target: Segment,
    /// Seed the script was generated from; carried into the trial log.
    #[serde(default)]
    pub seed: u64,
    /// Starting joints; the configured initial state when absent.
    #[serde(default)]
    pub initial_state: Option<JointState>,
    #[serde(default = "default_mode")]
    pub initial_mode: ControlMode,
    pub entries: Vec<ScriptEntry>,
}

fn default_mode() -> ControlMode {
    ControlMode::ALL[0]
}

impl CommandScript {
    /// Structural checks that need no simulation: ordered, finite timestamps,
    /// inputs matching the control path, nothing after `end`.
    pub fn validate(&self) -> Result<()> {
        let mut last = 0.0;
        for (i, e) in self.entries.iter().enumerate() {
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(Error::Script { t: e.t, reason: "timestamp must be finite and non-negative".into() });
            }
            if e.t < last {
                return Err(Error::Script { t: e.t, reason: "entries are not in time order".into() });
            }
            last = e.t;
            match (&e.action, self.control) {
                (ScriptAction::Frame { .. }, ControlPath::Manual) => {
                    return Err(Error::Script { t: e.t, reason: "controller frame in a manual script".into() })
                }
                (ScriptAction::Manual { .. }, ControlPath::Robotic) => {
                    return Err(Error::Script { t: e.t, reason: "handle action in a robotic script".into() })
                }
                (ScriptAction::End, _) if i + 1 != self.entries.len() => {
                    return Err(Error::Script { t: e.t, reason: "entries after end".into() })
                }
                (ScriptAction::StepStart { step } | ScriptAction::StepEnd { step }, _) if !(1..=8).contains(step) => {
                    return Err(Error::Script { t: e.t, reason: format!("step {step} is not in 1..=8") })
                }
                (ScriptAction::LateralOffset { mm }, _) if !mm.is_finite() => {
                    return Err(Error::Script { t: e.t, reason: "non-finite lateral offset".into() })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.t)
    }
}

/// A family of scripts for one experiment: a canonical script per control
/// path plus perturbed variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub target: Segment,
    pub canonical: Vec<CommandScript>,
    pub variants: Vec<CommandScript>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for s in scenario.canonical.iter().chain(&scenario.variants) {
            s.validate()?;
        }
        Ok(scenario)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn canonical_for(&self, control: ControlPath) -> Option<&CommandScript> {
        self.canonical.iter().find(|s| s.control == control)
    }

    pub fn variants_for(&self, control: ControlPath) -> Vec<&CommandScript> {
        self.variants.iter().filter(|s| s.control == control).collect()
    }
}
