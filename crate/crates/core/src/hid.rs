//! Normalised game controller frames.
//!
//! Physical devices are read elsewhere (the browser cockpit or a script); the
//! simulator only ever sees [`GamepadFrame`]s.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ModeButton {
    X,
    Y,
    A,
    B,
}

impl ModeButton {
    pub const ALL: [ModeButton; 4] = [ModeButton::X, ModeButton::Y, ModeButton::A, ModeButton::B];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct Dpad {
    #[serde(default)]
    pub up: bool,
    #[serde(default)]
    pub down: bool,
    #[serde(default)]
    pub left: bool,
    #[serde(default)]
    pub right: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct Buttons {
    #[serde(default)]
    pub x: bool,
    #[serde(default)]
    pub y: bool,
    #[serde(default)]
    pub a: bool,
    #[serde(default)]
    pub b: bool,
}

impl Buttons {
    pub fn pressed(&self, button: ModeButton) -> bool {
        match button {
            ModeButton::X => self.x,
            ModeButton::Y => self.y,
            ModeButton::A => self.a,
            ModeButton::B => self.b,
        }
    }

    pub fn only(button: ModeButton) -> Self {
        let mut b = Buttons::default();
        match button {
            ModeButton::X => b.x = true,
            ModeButton::Y => b.y = true,
            ModeButton::A => b.a = true,
            ModeButton::B => b.b = true,
        }
        b
    }
}

/// One normalised controller sample.
///
/// Sticks are `[x, y]` in `[-1, 1]`, triggers `[left, right]` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct GamepadFrame {
    #[serde(default)]
    pub left_stick: [f64; 2],
    #[serde(default)]
    pub right_stick: [f64; 2],
    #[serde(default)]
    pub dpad: Dpad,
    #[serde(default)]
    pub triggers: [f64; 2],
    #[serde(default)]
    pub buttons: Buttons,
    #[serde(default)]
    pub timestamp: f64,
}

/// Unprocessed device readings: `[lx, ly, rx, ry]`, `[lt, rt]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RawInput {
    pub sticks: [f64; 4],
    pub triggers: [f64; 2],
    pub dpad: Dpad,
    pub buttons: Buttons,
    pub timestamp: f64,
}

fn shape(value: f64, deadzone: f64, lo: f64) -> f64 {
    if value.abs() < deadzone {
        0.0
    } else {
        value.clamp(lo, 1.0)
    }
}

/// Deadzone and range normalisation. Idempotent on its own output.
pub fn normalize(raw: &RawInput, deadzone: f64) -> Result<GamepadFrame> {
    let finite = raw.sticks.iter().chain(raw.triggers.iter()).all(|v| v.is_finite()) && raw.timestamp.is_finite();
    if !finite {
        return Err(Error::MalformedFrame("non-finite axis value".into()));
    }
    let s = raw.sticks.map(|v| shape(v, deadzone, -1.0));
    Ok(GamepadFrame {
        left_stick: [s[0], s[1]],
        right_stick: [s[2], s[3]],
        dpad: raw.dpad,
        triggers: raw.triggers.map(|v| shape(v, deadzone, 0.0)),
        buttons: raw.buttons,
        timestamp: raw.timestamp,
    })
}

impl GamepadFrame {
    pub fn neutral(timestamp: f64) -> Self {
        GamepadFrame { timestamp, ..Default::default() }
    }

    pub fn raw(&self) -> RawInput {
        RawInput {
            sticks: [self.left_stick[0], self.left_stick[1], self.right_stick[0], self.right_stick[1]],
            triggers: self.triggers,
            dpad: self.dpad,
            buttons: self.buttons,
            timestamp: self.timestamp,
        }
    }

    /// Re-apply normalisation to a frame received from outside.
    pub fn normalized(&self, deadzone: f64) -> Result<GamepadFrame> {
        normalize(&self.raw(), deadzone)
    }

    /// Same inputs ignoring the timestamp.
    pub fn same_input(&self, other: &GamepadFrame) -> bool {
        self.left_stick == other.left_stick
            && self.right_stick == other.right_stick
            && self.dpad == other.dpad
            && self.triggers == other.triggers
            && self.buttons == other.buttons
    }
}

/// Rising-edge detector for the mode buttons.
#[derive(Debug, Clone, Default)]
pub struct ButtonLatch {
    held: Buttons,
}

impl ButtonLatch {
    /// Buttons that went down in this frame.
    pub fn edges(&mut self, buttons: Buttons) -> Vec<ModeButton> {
        let fired = ModeButton::ALL.into_iter().filter(|b| buttons.pressed(*b) && !self.held.pressed(*b)).collect();
        self.held = buttons;
        fired
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_axis(v: f64) -> RawInput {
        RawInput { sticks: [v, 0.0, 0.0, 0.0], ..Default::default() }
    }

    #[test]
    fn deadzone_zeroes_small_deflection() {
        assert_eq!(normalize(&raw_axis(0.03), 0.05).unwrap().left_stick[0], 0.0);
        assert_eq!(normalize(&raw_axis(-0.049), 0.05).unwrap().left_stick[0], 0.0);
    }

    #[test]
    fn full_deflection_passes_through() {
        assert_eq!(normalize(&raw_axis(1.0), 0.05).unwrap().left_stick[0], 1.0);
        assert_eq!(normalize(&raw_axis(1.7), 0.05).unwrap().left_stick[0], 1.0);
    }

    #[test]
    fn nan_axis_is_rejected() {
        assert!(matches!(normalize(&raw_axis(f64::NAN), 0.05), Err(Error::MalformedFrame(_))));
        assert!(normalize(&raw_axis(f64::INFINITY), 0.05).is_err());
    }

    #[test]
    fn held_button_fires_once() {
        let mut latch = ButtonLatch::default();
        let held = Buttons::only(ModeButton::A);
        let events: usize = (0..3).map(|_| latch.edges(held).len()).sum();
        assert_eq!(events, 1);
        assert!(latch.edges(Buttons::default()).is_empty());
        assert_eq!(latch.edges(held), vec![ModeButton::A]);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(
            sticks in proptest::array::uniform4(-1.5f64..1.5),
            triggers in proptest::array::uniform2(-0.2f64..1.2),
            dz in 0.0f64..0.2,
        ) {
            let raw = RawInput { sticks, triggers, ..Default::default() };
            let once = normalize(&raw, dz).unwrap();
            let twice = once.normalized(dz).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
