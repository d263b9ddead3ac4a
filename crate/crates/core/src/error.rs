use thiserror::Error;

use crate::control::Dof;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed gamepad frame: {0}")]
    MalformedFrame(String),

    #[error("script error at t={t:.3}s: {reason}")]
    Script { t: f64, reason: String },

    #[error("script commands {dof:?} while mode {mode} gates it (t={t:.3}s)")]
    GatedDof { dof: Dof, mode: u8, t: f64 },

    #[error("malformed trial log: {0}")]
    MalformedLog(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("placement spread needs at least two logs for a single target: {0}")]
    Spread(String),

    #[error("session error: {0}")]
    Session(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
