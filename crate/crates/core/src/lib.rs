//! Simulation core for robotic transcatheter edge-to-edge repair delivery.
//!
//! The crate models a three-sheath steerable catheter (transseptal,
//! intermediate and device sheath, eight continuous joints), the hidden plant
//! effects that make manual delivery hard (coupled device-sheath extension and
//! stick-slip torsional windup), the four-mode joystick controller that gates
//! joints per delivery step, a mitral valve phantom for scoring clip
//! placement, and a deterministic trial harness that logs, replays and
//! measures scripted or live runs.
//!
//! Everything here is deterministic: identical scripts and configuration give
//! bit-identical logs.

pub mod config;
pub mod control;
pub mod disturbance;
pub mod error;
pub mod gateway;
pub mod hid;
pub mod hull;
pub mod kinematics;
pub mod phantom;
pub mod scenarios;
pub mod trials;

pub use config::SessionConfig;
pub use control::{ControlMode, ControlPath, Controller, Dof, ManualAction, ModeButton, SpeedLimits, VelocityCommand};
pub use disturbance::{DisturbanceState, DitherSpec, FrictionParams};
pub use error::{Error, Result};
pub use hid::GamepadFrame;
pub use kinematics::{CatheterGeometry, ChainPose, JointState, Pose, SheathGeometry};
pub use phantom::{PlacementScore, Segment, ValvePhantom};
pub use trials::{CommandScript, StepTimings, TrialLog};
