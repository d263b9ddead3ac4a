//! Four-mode joint-space velocity controller and the manual handle emulation
//! it is compared against.
//!
//! Joystick deflection is a velocity command. Each mode enables only the
//! joints used in its delivery steps; the triggers translate a group of
//! sheaths in unison. Because intermediate and device insertions are measured
//! relative to their carrier sheath, moving a group in unison changes only the
//! outermost sheath of the group.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::disturbance::{step_coupling, step_dither, step_torsion, DisturbanceState, DitherSpec, FrictionParams};
use crate::error::{Error, Result};
pub use crate::hid::ModeButton;
use crate::hid::{ButtonLatch, GamepadFrame};
pub use crate::kinematics::{Dof, DofKind};
use crate::kinematics::{CatheterGeometry, JointState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SpeedLimits {
    /// deg/s
    pub flexure_max: f64,
    /// deg/s
    pub roll_max: f64,
    /// mm/s
    pub translation_max: f64,
}

impl Default for SpeedLimits {
    fn default() -> Self {
        SpeedLimits { flexure_max: 5.46, roll_max: 14.56, translation_max: 6.0 }
    }
}

impl SpeedLimits {
    pub fn limit(&self, dof: Dof) -> f64 {
        match dof.kind() {
            DofKind::Flexure => self.flexure_max,
            DofKind::Roll => self.roll_max,
            DofKind::Translation => self.translation_max,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if [self.flexure_max, self.roll_max, self.translation_max].iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err("speed limits must be positive".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Sheath {
    Transseptal,
    Intermediate,
    Device,
}

impl Sheath {
    pub fn translation(self) -> Dof {
        match self {
            Sheath::Transseptal => Dof::TsTranslation,
            Sheath::Intermediate => Dof::IsTranslation,
            Sheath::Device => Dof::DsTranslation,
        }
    }
}

/// One of the four control modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(try_from = "u8", into = "u8")]
pub struct ControlMode(u8);

impl TryFrom<u8> for ControlMode {
    type Error = String;
    fn try_from(id: u8) -> std::result::Result<Self, String> {
        ControlMode::new(id).ok_or_else(|| format!("control mode {id} is not in 1..=4"))
    }
}

impl From<ControlMode> for u8 {
    fn from(m: ControlMode) -> u8 {
        m.0
    }
}

impl ControlMode {
    pub const ALL: [ControlMode; 4] = [ControlMode(1), ControlMode(2), ControlMode(3), ControlMode(4)];

    pub fn new(id: u8) -> Option<Self> {
        (1..=4).contains(&id).then_some(ControlMode(id))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// Joints driven by the sticks and the D-pad.
    pub fn axis_dofs(self) -> &'static [Dof] {
        match self.0 {
            1 => &[Dof::TsBend, Dof::TsRotation],
            2 => &[Dof::TsRotation, Dof::IsBendMl],
            3 => &[Dof::TsRotation, Dof::IsBendMl, Dof::IsBendAp],
            _ => &[Dof::TsRotation, Dof::DsTranslation, Dof::DsRotation],
        }
    }

    /// Sheaths the triggers translate in unison.
    pub fn trigger_translation_set(self) -> &'static [Sheath] {
        match self.0 {
            1 => &[Sheath::Transseptal, Sheath::Intermediate, Sheath::Device],
            2 | 3 => &[Sheath::Intermediate, Sheath::Device],
            _ => &[Sheath::Device],
        }
    }

    /// The relative joint that moves when the trigger group translates.
    pub fn trigger_dof(self) -> Dof {
        self.trigger_translation_set()[0].translation()
    }

    pub fn enabled_dofs(self) -> Vec<Dof> {
        let mut dofs: Vec<Dof> = self.axis_dofs().to_vec();
        if !dofs.contains(&self.trigger_dof()) {
            dofs.push(self.trigger_dof());
        }
        dofs.sort();
        dofs
    }

    pub fn enables(self, dof: Dof) -> bool {
        self.axis_dofs().contains(&dof) || self.trigger_dof() == dof
    }

    /// Mode used for a delivery step: 1, 2 and 3 map to themselves, 4 to 8 to mode 4.
    pub fn for_step(step: u8) -> Option<Self> {
        match step {
            1..=3 => ControlMode::new(step),
            4..=8 => Some(ControlMode(4)),
            _ => None,
        }
    }
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ModeBindings {
    pub x: ControlMode,
    pub y: ControlMode,
    pub a: ControlMode,
    pub b: ControlMode,
}

impl Default for ModeBindings {
    fn default() -> Self {
        ModeBindings { x: ControlMode(1), y: ControlMode(2), a: ControlMode(3), b: ControlMode(4) }
    }
}

impl ModeBindings {
    pub fn mode(&self, button: ModeButton) -> ControlMode {
        match button {
            ModeButton::X => self.x,
            ModeButton::Y => self.y,
            ModeButton::A => self.a,
            ModeButton::B => self.b,
        }
    }

    pub fn button(&self, mode: ControlMode) -> Option<ModeButton> {
        ModeButton::ALL.into_iter().find(|b| self.mode(*b) == mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ControlPath {
    Manual,
    Robotic,
}

/// Per-joint rates, ordered as [`Dof::ALL`] (deg/s or mm/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct VelocityCommand {
    pub rates: [f64; 8],
    #[serde(default)]
    pub dither_requested: bool,
}

impl VelocityCommand {
    pub fn rate(&self, dof: Dof) -> f64 {
        self.rates[dof.index()]
    }

    pub fn set_rate(&mut self, dof: Dof, rate: f64) {
        self.rates[dof.index()] = rate;
    }

    pub fn is_zero(&self) -> bool {
        self.rates.iter().all(|r| *r == 0.0) && !self.dither_requested
    }
}

/// Componentwise saturation to the speed limits.
pub fn clamp(cmd: &VelocityCommand, limits: &SpeedLimits) -> VelocityCommand {
    let mut out = *cmd;
    for dof in Dof::ALL {
        let lim = limits.limit(dof);
        out.set_rate(dof, cmd.rate(dof).clamp(-lim, lim));
    }
    out
}

fn digital(pos: bool, neg: bool) -> f64 {
    (pos as i8 - neg as i8) as f64
}

/// Translate a controller frame into gated, clamped joint rates.
pub fn map_gamepad(frame: &GamepadFrame, mode: ControlMode, limits: &SpeedLimits, invert_ap: bool) -> Result<VelocityCommand> {
    let axes = [frame.left_stick[0], frame.left_stick[1], frame.right_stick[0], frame.right_stick[1], frame.triggers[0], frame.triggers[1]];
    if axes.iter().any(|a| a.is_nan()) {
        return Err(Error::MalformedFrame("NaN axis".into()));
    }
    let ap_sign = if invert_ap { -1.0 } else { 1.0 };
    let mut raw = VelocityCommand::default();
    raw.set_rate(Dof::TsBend, frame.left_stick[0]);
    raw.set_rate(Dof::TsRotation, ap_sign * frame.left_stick[1]);
    raw.set_rate(Dof::IsBendMl, frame.right_stick[0]);
    raw.set_rate(Dof::IsBendAp, ap_sign * frame.right_stick[1]);
    raw.set_rate(Dof::DsTranslation, digital(frame.dpad.up, frame.dpad.down));
    raw.set_rate(Dof::DsRotation, digital(frame.dpad.right, frame.dpad.left));

    let mut cmd = VelocityCommand::default();
    for &dof in mode.axis_dofs() {
        cmd.set_rate(dof, raw.rate(dof) * limits.limit(dof));
    }
    let trigger = frame.triggers[1] - frame.triggers[0];
    let tdof = mode.trigger_dof();
    cmd.set_rate(tdof, cmd.rate(tdof) + trigger * limits.limit(tdof));

    let mut cmd = clamp(&cmd, limits);
    cmd.dither_requested = mode.id() == 4 && cmd.rate(Dof::DsRotation) != 0.0;
    Ok(cmd)
}

/// Mode bound to `button`. Selection is allowed in any order.
pub fn set_mode(_current: ControlMode, button: ModeButton, bindings: &ModeBindings) -> ControlMode {
    bindings.mode(button)
}

/// Plant parameters needed to integrate one tick.
#[derive(Debug, Clone, Copy)]
pub struct PlantModel<'a> {
    pub geometry: &'a CatheterGeometry,
    pub friction: &'a FrictionParams,
    pub dither: &'a DitherSpec,
}

fn integrate(
    js: &JointState,
    dist: &DisturbanceState,
    rates: &[f64; 8],
    ds_cart_locked: bool,
    dithering: bool,
    dt: f64,
    plant: &PlantModel,
) -> (JointState, DisturbanceState) {
    let mut next = *js;
    let mut realized = [0.0; 8];
    for dof in Dof::ALL {
        let rate = rates[dof.index()];
        if rate == 0.0 {
            continue;
        }
        let q = js.get(dof);
        let q_next = plant.geometry.saturate(dof, q + rate * dt);
        realized[dof.index()] = (q_next - q) / dt;
        next.set(dof, q_next);
    }
    let is_bend_rate = realized[Dof::IsBendMl.index()].hypot(realized[Dof::IsBendAp.index()]);
    let amplitude = dithering.then_some(plant.dither.amplitude);
    let mut d = step_coupling(is_bend_rate, ds_cart_locked, dt, *dist, plant.friction);
    d = step_torsion(realized[Dof::DsRotation.index()], realized[Dof::DsTranslation.index()], amplitude, dt, d, plant.friction);
    d = step_dither(dithering, dt, d, plant.dither);
    (next, d)
}

/// One Euler step of the robotic plant. `cmd` must already be gated and
/// clamped. The device-sheath cart is servo-held whenever its own (relative)
/// translation is not commanded.
pub fn step_robotic(
    js: &JointState,
    dist: &DisturbanceState,
    cmd: &VelocityCommand,
    dt: f64,
    plant: &PlantModel,
) -> (JointState, DisturbanceState) {
    let ds_cart_locked = cmd.rate(Dof::DsTranslation) == 0.0;
    integrate(js, dist, &cmd.rates, ds_cart_locked, cmd.dither_requested, dt, plant)
}

/// A single handle adjustment: one joint at a time, optionally with hand dither.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct ManualAction {
    #[serde(default)]
    pub dof: Option<Dof>,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub hand_dither: bool,
}

impl ManualAction {
    pub fn idle() -> Self {
        ManualAction::default()
    }

    pub fn moving(dof: Dof, rate: f64) -> Self {
        ManualAction { dof: Some(dof), rate, hand_dither: false }
    }

    pub fn with_dither(self, hand_dither: bool) -> Self {
        ManualAction { hand_dither, ..self }
    }

    pub fn command(&self, limits: &SpeedLimits) -> VelocityCommand {
        let mut cmd = VelocityCommand::default();
        if let Some(dof) = self.dof {
            cmd.set_rate(dof, self.rate);
        }
        clamp(&cmd, limits)
    }
}

/// One Euler step of the manual plant: no gating, no cart lock, dither only by hand.
pub fn step_manual(
    js: &JointState,
    dist: &DisturbanceState,
    action: &ManualAction,
    limits: &SpeedLimits,
    dt: f64,
    plant: &PlantModel,
) -> (JointState, DisturbanceState) {
    let cmd = action.command(limits);
    integrate(js, dist, &cmd.rates, false, action.hand_dither, dt, plant)
}

/// Single-handle interpretation of a live controller frame: the most deflected
/// input wins, holding X adds hand dither.
pub fn manual_action_from_frame(frame: &GamepadFrame, limits: &SpeedLimits, invert_ap: bool) -> Result<ManualAction> {
    let mut best: Option<(Dof, f64)> = None;
    for mode in ControlMode::ALL {
        let cmd = map_gamepad(frame, mode, limits, invert_ap)?;
        for dof in Dof::ALL {
            let r = cmd.rate(dof);
            let norm = r.abs() / limits.limit(dof);
            if norm > best.map_or(0.0, |(d, b)| b.abs() / limits.limit(d)) {
                best = Some((dof, r));
            }
        }
    }
    Ok(match best {
        Some((dof, rate)) => ManualAction { dof: Some(dof), rate, hand_dither: frame.buttons.x },
        None => ManualAction { hand_dither: frame.buttons.x, ..ManualAction::idle() },
    })
}

/// Stateful controller fed by a stream of frames.
///
/// A mode change zeroes the command until the next frame arrives.
#[derive(Debug, Clone)]
pub struct Controller {
    mode: ControlMode,
    bindings: ModeBindings,
    limits: SpeedLimits,
    invert_ap: bool,
    latch: ButtonLatch,
    frame: GamepadFrame,
    awaiting_input: bool,
}

impl Controller {
    pub fn new(mode: ControlMode, bindings: ModeBindings, limits: SpeedLimits, invert_ap: bool) -> Self {
        Controller {
            mode,
            bindings,
            limits,
            invert_ap,
            latch: ButtonLatch::default(),
            frame: GamepadFrame::default(),
            awaiting_input: false,
        }
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn frame(&self) -> &GamepadFrame {
        &self.frame
    }

    /// Accept a frame; returns the new mode if a mode button was pressed.
    pub fn submit(&mut self, frame: GamepadFrame) -> Result<Option<ControlMode>> {
        let axes = frame.left_stick.iter().chain(&frame.right_stick).chain(&frame.triggers);
        if axes.clone().any(|a| !a.is_finite()) {
            return Err(Error::MalformedFrame("non-finite axis".into()));
        }
        let pressed = self.latch.edges(frame.buttons);
        self.frame = frame;
        match pressed.last() {
            Some(button) => Ok(self.select(*button)),
            None => {
                self.awaiting_input = false;
                Ok(None)
            }
        }
    }

    /// Apply a mode button directly.
    pub fn select(&mut self, button: ModeButton) -> Option<ControlMode> {
        let next = set_mode(self.mode, button, &self.bindings);
        if next == self.mode {
            return None;
        }
        self.mode = next;
        self.awaiting_input = true;
        Some(next)
    }

    /// Forget the held input (driver gone or input stale).
    pub fn release(&mut self) {
        self.frame = GamepadFrame::neutral(self.frame.timestamp);
        self.latch = ButtonLatch::default();
    }

    pub fn command(&self) -> VelocityCommand {
        if self.awaiting_input {
            return VelocityCommand::default();
        }
        map_gamepad(&self.frame, self.mode, &self.limits, self.invert_ap).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hid::{Buttons, Dpad};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mode(id: u8) -> ControlMode {
        ControlMode::new(id).unwrap()
    }

    fn stick(l: [f64; 2], r: [f64; 2]) -> GamepadFrame {
        GamepadFrame { left_stick: l, right_stick: r, ..Default::default() }
    }

    #[test]
    fn mode_masks() {
        use Dof::*;
        assert_eq!(mode(1).enabled_dofs(), vec![TsTranslation, TsRotation, TsBend]);
        assert_eq!(mode(2).enabled_dofs(), vec![TsRotation, IsTranslation, IsBendMl]);
        assert_eq!(mode(3).enabled_dofs(), vec![TsRotation, IsTranslation, IsBendMl, IsBendAp]);
        assert_eq!(mode(4).enabled_dofs(), vec![TsRotation, DsTranslation, DsRotation]);
        assert_eq!(mode(1).trigger_translation_set().len(), 3);
        assert_eq!(mode(4).trigger_translation_set(), &[Sheath::Device]);
    }

    #[test]
    fn table_steps_to_modes() {
        let expected = [1, 2, 3, 4, 4, 4, 4, 4];
        for (step, m) in (1..=8).zip(expected) {
            assert_eq!(ControlMode::for_step(step).unwrap().id(), m);
        }
        assert!(ControlMode::for_step(0).is_none());
        assert!(ControlMode::for_step(9).is_none());
    }

    #[test]
    fn mode_four_ignores_right_stick() {
        let cmd = map_gamepad(&stick([0.0, 0.0], [1.0, 1.0]), mode(4), &SpeedLimits::default(), false).unwrap();
        assert_eq!(cmd.rate(Dof::IsBendMl), 0.0);
        assert_eq!(cmd.rate(Dof::IsBendAp), 0.0);
        assert_eq!(cmd.rate(Dof::IsTranslation), 0.0);
    }

    #[test]
    fn mode_three_left_stick() {
        let l = SpeedLimits::default();
        let cmd = map_gamepad(&stick([1.0, 0.0], [0.0, 0.0]), mode(3), &l, false).unwrap();
        assert!(cmd.is_zero());
        let cmd = map_gamepad(&stick([0.0, 1.0], [0.0, 0.0]), mode(3), &l, false).unwrap();
        assert_eq!(cmd.rate(Dof::TsRotation), 14.56);
        assert_eq!(cmd.rates.iter().filter(|r| **r != 0.0).count(), 1);
        let cmd = map_gamepad(&stick([1.0, 0.0], [0.0, 0.0]), mode(1), &l, false).unwrap();
        assert_eq!(cmd.rate(Dof::TsBend), 5.46);
    }

    #[test]
    fn neutral_frame_is_zero_command() {
        for m in ControlMode::ALL {
            let cmd = map_gamepad(&GamepadFrame::default(), m, &SpeedLimits::default(), false).unwrap();
            assert!(cmd.is_zero());
        }
    }

    #[test]
    fn nan_frame_rejected() {
        let f = stick([f64::NAN, 0.0], [0.0, 0.0]);
        assert!(map_gamepad(&f, mode(1), &SpeedLimits::default(), false).is_err());
    }

    #[test]
    fn triggers_move_outermost_group_member() {
        let l = SpeedLimits::default();
        let f = GamepadFrame { triggers: [0.0, 0.5], ..Default::default() };
        assert_eq!(map_gamepad(&f, mode(1), &l, false).unwrap().rate(Dof::TsTranslation), 3.0);
        assert_eq!(map_gamepad(&f, mode(2), &l, false).unwrap().rate(Dof::IsTranslation), 3.0);
        assert_eq!(map_gamepad(&f, mode(3), &l, false).unwrap().rate(Dof::IsTranslation), 3.0);
        assert_eq!(map_gamepad(&f, mode(4), &l, false).unwrap().rate(Dof::DsTranslation), 3.0);
        // D-pad plus trigger still respects the clamp.
        let f = GamepadFrame { triggers: [0.0, 1.0], dpad: Dpad { up: true, ..Default::default() }, ..Default::default() };
        assert_eq!(map_gamepad(&f, mode(4), &l, false).unwrap().rate(Dof::DsTranslation), 6.0);
    }

    #[test]
    fn dither_only_for_mode_four_roll() {
        let l = SpeedLimits::default();
        let roll = GamepadFrame { dpad: Dpad { right: true, ..Default::default() }, ..Default::default() };
        assert!(map_gamepad(&roll, mode(4), &l, false).unwrap().dither_requested);
        let push = GamepadFrame { dpad: Dpad { up: true, ..Default::default() }, ..Default::default() };
        assert!(!map_gamepad(&push, mode(4), &l, false).unwrap().dither_requested);
        for m in [1, 2, 3] {
            assert!(!map_gamepad(&roll, mode(m), &l, false).unwrap().dither_requested);
        }
    }

    #[test]
    fn invert_ap_flips_back_to_front_axes() {
        let l = SpeedLimits::default();
        let f = stick([0.0, 0.5], [0.0, 0.5]);
        let a = map_gamepad(&f, mode(3), &l, false).unwrap();
        let b = map_gamepad(&f, mode(3), &l, true).unwrap();
        assert_eq!(a.rate(Dof::TsRotation), -b.rate(Dof::TsRotation));
        assert_eq!(a.rate(Dof::IsBendAp), -b.rate(Dof::IsBendAp));
    }

    #[test]
    fn clamp_reference_values() {
        let l = SpeedLimits::default();
        let mut c = VelocityCommand::default();
        c.set_rate(Dof::IsBendMl, 10.0);
        c.set_rate(Dof::IsTranslation, 3.0);
        c.set_rate(Dof::DsRotation, -100.0);
        let out = clamp(&c, &l);
        assert_eq!(out.rate(Dof::IsBendMl), 5.46);
        assert_eq!(out.rate(Dof::IsTranslation), 3.0);
        assert_eq!(out.rate(Dof::DsRotation), -14.56);
    }

    #[test]
    fn set_mode_follows_bindings() {
        let b = ModeBindings::default();
        for current in ControlMode::ALL {
            assert_eq!(set_mode(current, ModeButton::A, &b).id(), 3);
            let once = set_mode(current, ModeButton::Y, &b);
            assert_eq!(set_mode(once, ModeButton::Y, &b), once);
        }
        assert_eq!(b.button(mode(4)), Some(ModeButton::B));
    }

    fn plant_defaults() -> (CatheterGeometry, FrictionParams, DitherSpec) {
        (CatheterGeometry::default(), FrictionParams::default(), DitherSpec::default())
    }

    #[test]
    fn quarter_turn_roll_takes_six_seconds() {
        let (g, f, d) = plant_defaults();
        let plant = PlantModel { geometry: &g, friction: &f, dither: &d };
        let l = SpeedLimits::default();
        let frame = GamepadFrame { dpad: Dpad { right: true, ..Default::default() }, ..Default::default() };
        let cmd = map_gamepad(&frame, mode(4), &l, false).unwrap();
        let mut js = JointState::default();
        let mut dist = DisturbanceState::default();
        let dt = 0.01;
        let mut ticks = 0;
        while js.ds_rotation_cmd < 90.0 {
            (js, dist) = step_robotic(&js, &dist, &cmd, dt, &plant);
            ticks += 1;
        }
        let analytic = 90.0 / 14.56;
        assert!((ticks as f64 * dt - analytic).abs() <= dt, "{ticks}");
        assert_abs_diff_eq!(js.ds_rotation_cmd, dist.distal_roll + dist.windup, epsilon = 1e-9);
    }

    #[test]
    fn zero_command_only_touches_dither_phase() {
        let (g, f, d) = plant_defaults();
        let plant = PlantModel { geometry: &g, friction: &f, dither: &d };
        let js = JointState { ts_translation: 40.0, is_bend_ml: 30.0, ds_rotation_cmd: 50.0, ..Default::default() };
        let dist = DisturbanceState { windup: 12.0, distal_roll: 38.0, coupled_extension: 3.0, dither_active: true, dither_phase: 1.0, ap_deflection: 0.0 };
        let (js2, dist2) = step_robotic(&js, &dist, &VelocityCommand::default(), 0.01, &plant);
        assert_eq!(js, js2);
        assert_eq!(DisturbanceState { dither_active: false, dither_phase: 0.0, ..dist }, dist2);
    }

    #[test]
    fn robotic_flexure_never_extends_device_sheath() {
        let (g, f, d) = plant_defaults();
        let plant = PlantModel { geometry: &g, friction: &f, dither: &d };
        let l = SpeedLimits::default();
        let cmd = map_gamepad(&stick([0.0, 0.0], [1.0, 0.0]), mode(2), &l, false).unwrap();
        let mut js = JointState { is_translation: 30.0, ..Default::default() };
        let mut dist = DisturbanceState::default();
        for _ in 0..2500 {
            (js, dist) = step_robotic(&js, &dist, &cmd, 0.01, &plant);
        }
        assert_eq!(dist.coupled_extension, 0.0);
        assert_eq!(js.is_bend_ml, 120.0);
    }

    #[test]
    fn manual_flexure_extends_device_sheath() {
        let (g, f, d) = plant_defaults();
        let plant = PlantModel { geometry: &g, friction: &f, dither: &d };
        let l = SpeedLimits::default();
        let mut js = JointState::default();
        let mut dist = DisturbanceState::default();
        let act = ManualAction::moving(Dof::IsBendMl, 5.0);
        for _ in 0..100 {
            (js, dist) = step_manual(&js, &dist, &act, &l, 0.01, &plant);
        }
        assert!(dist.coupled_extension > 0.3);
        let before = (js, dist);
        let after = step_manual(&js, &dist, &ManualAction::idle(), &l, 0.01, &plant);
        assert_eq!(before, after);
    }

    #[test]
    fn manual_hand_dither_lowers_threshold_only_while_dithering() {
        let (g, f, d) = plant_defaults();
        let plant = PlantModel { geometry: &g, friction: &f, dither: &d };
        let l = SpeedLimits::default();
        let mut js = JointState::default();
        let mut dist = DisturbanceState::default();
        let roll = ManualAction::moving(Dof::DsRotation, 14.56);
        for _ in 0..300 {
            (js, dist) = step_manual(&js, &dist, &roll.with_dither(true), &l, 0.01, &plant);
        }
        assert_abs_diff_eq!(dist.windup, 6.0, epsilon = 1e-9);
        for _ in 0..300 {
            (js, dist) = step_manual(&js, &dist, &roll, &l, 0.01, &plant);
        }
        assert_abs_diff_eq!(dist.windup, 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(js.ds_rotation_cmd, dist.distal_roll + dist.windup, epsilon = 1e-9);
    }

    #[test]
    fn mode_change_mid_roll_emits_one_zero_tick() {
        let mut c = Controller::new(mode(4), ModeBindings::default(), SpeedLimits::default(), false);
        let roll = GamepadFrame { dpad: Dpad { right: true, ..Default::default() }, ..Default::default() };
        c.submit(roll).unwrap();
        assert_eq!(c.command().rate(Dof::DsRotation), 14.56);
        let press = GamepadFrame { buttons: Buttons::only(ModeButton::A), ..roll };
        assert_eq!(c.submit(press).unwrap(), Some(mode(3)));
        assert!(c.command().is_zero());
        let stir = GamepadFrame { right_stick: [0.5, 0.0], ..Default::default() };
        assert_eq!(c.submit(stir).unwrap(), None);
        assert_abs_diff_eq!(c.command().rate(Dof::IsBendMl), 2.73);
    }

    #[test]
    fn manual_frame_picks_single_dof() {
        let l = SpeedLimits::default();
        let f = stick([0.2, 0.0], [0.0, -0.9]);
        let a = manual_action_from_frame(&f, &l, false).unwrap();
        assert_eq!(a.dof, Some(Dof::IsBendAp));
        assert_abs_diff_eq!(a.rate, -0.9 * 5.46, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn gating_and_clamp_hold_for_any_frame(
            l in proptest::array::uniform2(-1.0f64..1.0),
            r in proptest::array::uniform2(-1.0f64..1.0),
            t in proptest::array::uniform2(0.0f64..1.0),
            dpad in proptest::array::uniform4(any::<bool>()),
            id in 1u8..=4,
        ) {
            let f = GamepadFrame {
                left_stick: l, right_stick: r, triggers: t,
                dpad: Dpad { up: dpad[0], down: dpad[1], left: dpad[2], right: dpad[3] },
                ..Default::default()
            };
            let m = mode(id);
            let limits = SpeedLimits::default();
            let cmd = map_gamepad(&f, m, &limits, false).unwrap();
            for dof in Dof::ALL {
                prop_assert!(cmd.rate(dof).abs() <= limits.limit(dof));
                if !m.enables(dof) {
                    prop_assert_eq!(cmd.rate(dof), 0.0);
                }
            }
            prop_assert_eq!(cmd.dither_requested, id == 4 && cmd.rate(Dof::DsRotation) != 0.0);
            prop_assert_eq!(clamp(&cmd, &limits), cmd);
        }

        #[test]
        fn clamp_is_idempotent(rates in proptest::array::uniform8(-100.0f64..100.0)) {
            let limits = SpeedLimits::default();
            let c = VelocityCommand { rates, dither_requested: false };
            let once = clamp(&c, &limits);
            prop_assert_eq!(clamp(&once, &limits), once);
        }
    }
}
