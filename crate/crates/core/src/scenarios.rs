//! Seeded generation of the shipped scenario families.
//!
//! Scripts are planned against the simulated plant itself: the builder runs a
//! [`Simulator`] alongside the script it writes, so every decision (how far
//! to roll, whether a correction is needed) is taken on the state the runner
//! will reproduce. Operator variability is drawn from a seeded generator and
//! frozen into the script.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::SessionConfig;
use crate::control::{ControlMode, ControlPath, Dof, ManualAction};
use crate::disturbance::DisturbanceState;
use crate::error::{Error, Result};
use crate::hid::{Buttons, Dpad, GamepadFrame};
use crate::kinematics::{chain_fk, JointState, Pose};
use crate::phantom::Segment;
use crate::trials::{run_trial, ClipCommand, CommandScript, Scenario, ScriptAction, ScriptEntry, Simulator};

/// Height of the ready pose above the coaptation line (mm).
pub const READY_HEIGHT: f64 = 12.0;
/// Depth below the valve plane reached in step 5 (mm).
pub const GRASP_DEPTH: f64 = 5.0;
/// Roll error that triggers a twist correction (deg).
pub const TWIST_TOLERANCE: f64 = 5.0;
/// Device sheath travel in the twist experiment, each way (mm).
pub const TWIST_TRAVEL: f64 = 40.0;

/// How an operator behaves, as seen by the script generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorModel {
    /// Mean pause between actions (s).
    pub pause: f64,
    /// Uniform spread of the pause (s).
    pub pause_jitter: f64,
    /// Uniform spread added to each move duration (s).
    pub timing_jitter: f64,
    /// Uniform relative spread of commanded rates.
    pub rate_jitter: f64,
    /// Uniform misjudgement of the target position along the line (mm),
    /// drawn once per trial.
    pub aim_error: f64,
    /// Seconds of hand dither at the start of an initial roll (manual only).
    pub dither_burst: f64,
    /// Range of roll-induced clip displacement magnitude (mm, manual only).
    pub lateral_offset: [f64; 2],
    /// Time to press and release a mode button (s, robotic only).
    pub button_press: f64,
}

impl OperatorModel {
    pub fn manual() -> Self {
        OperatorModel {
            pause: 1.3,
            pause_jitter: 0.6,
            timing_jitter: 0.5,
            rate_jitter: 0.15,
            aim_error: 8.0,
            dither_burst: 1.0,
            lateral_offset: [2.0, 4.0],
            button_press: 0.0,
        }
    }

    pub fn robotic() -> Self {
        OperatorModel {
            pause: 0.6,
            pause_jitter: 0.2,
            timing_jitter: 0.05,
            rate_jitter: 0.02,
            aim_error: 1.2,
            dither_burst: 0.0,
            lateral_offset: [0.0, 0.0],
            button_press: 0.3,
        }
    }

    pub fn for_path(control: ControlPath) -> Self {
        match control {
            ControlPath::Manual => Self::manual(),
            ControlPath::Robotic => Self::robotic(),
        }
    }

    /// The same operator with every random spread removed.
    pub fn exact(self) -> Self {
        OperatorModel {
            pause_jitter: 0.0,
            timing_jitter: 0.0,
            rate_jitter: 0.0,
            aim_error: 0.0,
            lateral_offset: [self.lateral_offset.iter().sum::<f64>() / 2.0; 2],
            ..self
        }
    }
}

/// Writes a script while simulating it.
pub struct ScriptBuilder<'c> {
    sim: Simulator<'c>,
    entries: Vec<ScriptEntry>,
    op: OperatorModel,
    rng: ChaCha8Rng,
    initial_state: JointState,
    initial_mode: ControlMode,
}

impl<'c> ScriptBuilder<'c> {
    pub fn new(config: &'c SessionConfig, control: ControlPath, js: JointState, mode: ControlMode, op: OperatorModel, seed: u64) -> Self {
        ScriptBuilder {
            sim: Simulator::new(config, control, js, mode, true),
            entries: Vec::new(),
            op,
            rng: ChaCha8Rng::seed_from_u64(seed),
            initial_state: js,
            initial_mode: mode,
        }
    }

    pub fn sim(&self) -> &Simulator<'c> {
        &self.sim
    }

    fn config(&self) -> &'c SessionConfig {
        self.sim.config()
    }

    fn control(&self) -> ControlPath {
        self.sim.control()
    }

    /// Uniform sample in `[-half, half]`; exactly zero when `half` is zero.
    pub fn spread(&mut self, half: f64) -> f64 {
        if half > 0.0 {
            self.rng.gen_range(-half..=half)
        } else {
            0.0
        }
    }

    pub fn push(&mut self, action: ScriptAction) -> Result<()> {
        self.sim.apply(&action)?;
        self.entries.push(ScriptEntry { t: self.sim.time(), action });
        Ok(())
    }

    pub fn advance(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.sim.step();
        }
    }

    fn ticks_for(&self, secs: f64) -> u64 {
        (secs.max(0.0) * self.config().tick_rate).round() as u64
    }

    pub fn wait(&mut self, secs: f64) {
        let n = self.ticks_for(secs);
        self.advance(n);
    }

    pub fn pause(&mut self) {
        let jitter = self.spread(self.op.pause_jitter);
        self.wait(self.op.pause + jitter);
    }

    fn idle_action(&self) -> ScriptAction {
        match self.control() {
            ControlPath::Manual => ScriptAction::Manual { manual: ManualAction::idle() },
            ControlPath::Robotic => ScriptAction::Frame { frame: GamepadFrame::default() },
        }
    }

    pub fn select_mode(&mut self, mode: ControlMode) -> Result<()> {
        if self.control() != ControlPath::Robotic || self.sim.mode() == mode {
            return Ok(());
        }
        let button = self.config().mode_bindings.button(mode).ok_or_else(|| Error::Config(format!("no button bound to mode {mode}")))?;
        self.push(ScriptAction::Frame { frame: GamepadFrame { buttons: Buttons::only(button), ..Default::default() } })?;
        self.wait(self.op.button_press);
        self.push(ScriptAction::Frame { frame: GamepadFrame::default() })
    }

    /// Open a step, selecting its mode first on the robotic path.
    pub fn step_start(&mut self, step: u8) -> Result<()> {
        if let Some(mode) = ControlMode::for_step(step) {
            self.select_mode(mode)?;
        }
        self.push(ScriptAction::StepStart { step })
    }

    pub fn step_end(&mut self, step: u8) -> Result<()> {
        self.push(ScriptAction::StepEnd { step })
    }

    fn frame_for(&self, inputs: &[(Dof, f64)]) -> Result<GamepadFrame> {
        let mode = self.sim.mode();
        let ap = if self.config().invert_ap { -1.0 } else { 1.0 };
        let mut f = GamepadFrame::default();
        for &(dof, a) in inputs {
            if !mode.enables(dof) {
                return Err(Error::GatedDof { dof, mode: mode.id(), t: self.sim.time() });
            }
            if dof == mode.trigger_dof() {
                f.triggers = if a >= 0.0 { [0.0, a] } else { [-a, 0.0] };
                continue;
            }
            match dof {
                Dof::TsBend => f.left_stick[0] = a,
                Dof::TsRotation => f.left_stick[1] = ap * a,
                Dof::IsBendMl => f.right_stick[0] = a,
                Dof::IsBendAp => f.right_stick[1] = ap * a,
                Dof::DsTranslation => f.dpad = Dpad { up: a > 0.0, down: a < 0.0, ..Default::default() },
                Dof::DsRotation => f.dpad = Dpad { right: a > 0.0, left: a < 0.0, ..Default::default() },
                Dof::TsTranslation | Dof::IsTranslation => unreachable!("translations are trigger driven"),
            }
        }
        Ok(f)
    }

    /// Move joints by the given amounts: together on the robotic path (one
    /// frame, rates scaled so all finish together), one after another on the
    /// manual path.
    pub fn move_joints(&mut self, moves: &[(Dof, f64)]) -> Result<()> {
        let moves: Vec<(Dof, f64)> = moves.iter().copied().filter(|(_, d)| d.abs() > 1e-6).collect();
        if moves.is_empty() {
            return Ok(());
        }
        match self.control() {
            ControlPath::Manual => {
                for (dof, delta) in moves {
                    self.manual_move(dof, delta)?;
                }
                Ok(())
            }
            ControlPath::Robotic => {
                let limits = self.config().speed_limits;
                let longest = moves.iter().map(|(d, x)| x.abs() / limits.limit(*d)).fold(0.0, f64::max);
                let floor = 2.0 * self.config().deadzone;
                let (together, apart): (Vec<_>, Vec<_>) =
                    moves.iter().partition(|(d, x)| *d != Dof::DsRotation && x.abs() / limits.limit(*d) >= floor * longest);
                if !together.is_empty() {
                    self.robotic_move(&together)?;
                }
                for m in apart {
                    self.robotic_move(&[m])?;
                }
                Ok(())
            }
        }
    }

    fn robotic_move(&mut self, moves: &[(Dof, f64)]) -> Result<()> {
        let limits = self.config().speed_limits;
        let dt = self.config().dt();
        let longest = moves.iter().map(|(d, x)| x.abs() / limits.limit(*d)).fold(0.0, f64::max);
        let n = (longest / dt - 1e-9).ceil().max(1.0);
        let mut inputs = Vec::new();
        for &(dof, delta) in moves {
            let a = if dof == Dof::DsRotation { delta.signum() } else { delta / (limits.limit(dof) * n * dt) };
            let a = (a * (1.0 + self.spread(self.op.rate_jitter))).clamp(-1.0, 1.0);
            inputs.push((dof, a));
        }
        let extra = self.spread(self.op.timing_jitter);
        let ticks = (n + (extra / dt).round()).max(1.0) as u64;
        let frame = self.frame_for(&inputs)?;
        self.push(ScriptAction::Frame { frame })?;
        self.advance(ticks);
        let idle = self.idle_action();
        self.push(idle)?;
        self.pause();
        Ok(())
    }

    fn manual_move(&mut self, dof: Dof, delta: f64) -> Result<()> {
        let limit = self.config().speed_limits.limit(dof);
        let dt = self.config().dt();
        let n = (delta.abs() / limit / dt - 1e-9).ceil().max(1.0);
        let rate = (delta / (n * dt) * (1.0 + self.spread(self.op.rate_jitter))).clamp(-limit, limit);
        let extra = self.spread(self.op.timing_jitter);
        let ticks = n + (extra / dt).round();
        if ticks < 1.0 {
            return Ok(());
        }
        self.push(ScriptAction::Manual { manual: ManualAction::moving(dof, rate) })?;
        self.advance(ticks as u64);
        self.push(ScriptAction::Manual { manual: ManualAction::idle() })?;
        self.pause();
        Ok(())
    }

    /// Roll the device sheath at full speed until the clip's actual roll
    /// reaches `target` (deg). `careful` makes a manual operator dither for
    /// the whole roll; otherwise only the opening burst is dithered.
    pub fn roll_to(&mut self, target: f64, careful: bool) -> Result<()> {
        let limit = self.config().speed_limits.roll_max;
        let aim = target + self.spread(self.op.timing_jitter) * limit;
        let sign = (aim - self.sim.disturbance().distal_roll).signum();
        if sign == 0.0 {
            return Ok(());
        }
        let reached = |b: &Self| (b.sim.disturbance().distal_roll - aim) * sign >= 0.0;
        let max_ticks = self.ticks_for(120.0);
        let mut ticks = 0;
        match self.control() {
            ControlPath::Robotic => {
                let frame = self.frame_for(&[(Dof::DsRotation, sign)])?;
                self.push(ScriptAction::Frame { frame })?;
            }
            ControlPath::Manual => {
                let dithered = careful || self.op.dither_burst > 0.0;
                self.push(ScriptAction::Manual { manual: ManualAction::moving(Dof::DsRotation, sign * limit).with_dither(dithered) })?;
                if !careful {
                    let burst = self.ticks_for(self.op.dither_burst);
                    while ticks < burst && !reached(self) {
                        self.advance(1);
                        ticks += 1;
                    }
                    if dithered && !reached(self) {
                        self.push(ScriptAction::Manual { manual: ManualAction::moving(Dof::DsRotation, sign * limit) })?;
                    }
                }
            }
        }
        while !reached(self) {
            if ticks >= max_ticks {
                return Err(Error::Script { t: self.sim.time(), reason: "roll target not reached".into() });
            }
            self.advance(1);
            ticks += 1;
        }
        let idle = self.idle_action();
        self.push(idle)?;
        self.pause();
        Ok(())
    }

    pub fn finish(mut self, name: impl Into<String>, target: Segment, seed: u64) -> Result<CommandScript> {
        self.push(ScriptAction::End)?;
        Ok(CommandScript {
            name: name.into(),
            control: self.control(),
            target,
            seed,
            initial_state: Some(self.initial_state),
            initial_mode: self.initial_mode,
            entries: self.entries,
        })
    }
}

fn clip_pose(config: &SessionConfig, js: &JointState, dist: &DisturbanceState) -> Pose {
    chain_fk(js, &dist.plant_offsets(&config.dither), &config.geometry).clip
}

/// Damped least squares on the chosen joints so the clip tip sits at `point`
/// with its axis pointing down the valve axis. The disturbance state is held
/// fixed. Returns the solved joints and the remaining position error (mm).
pub fn solve_pose(
    config: &SessionConfig,
    js: &JointState,
    dist: &DisturbanceState,
    dofs: &[Dof],
    point: &Vector3<f64>,
) -> (JointState, f64) {
    let down = -config.phantom.valve_axis();
    let axis_weight = 20.0;
    let residual = |q: &JointState| -> DVector<f64> {
        let pose = clip_pose(config, q, dist);
        let e = pose.position() - point;
        let a = pose.axis().cross(&down) * axis_weight;
        DVector::from_vec(vec![e.x, e.y, e.z, a.x, a.y, a.z])
    };
    let with = |q: &JointState, step: &DVector<f64>| -> JointState {
        let mut out = *q;
        for (i, dof) in dofs.iter().enumerate() {
            out.set(*dof, config.geometry.saturate(*dof, q.get(*dof) + step[i]));
        }
        out
    };

    let mut q = *js;
    let mut r = residual(&q);
    let mut lambda = 1e-2;
    for _ in 0..200 {
        let h = 1e-5;
        let mut jac = DMatrix::zeros(6, dofs.len());
        for (i, dof) in dofs.iter().enumerate() {
            let mut qp = q;
            qp.set(*dof, q.get(*dof) + h);
            let mut qm = q;
            qm.set(*dof, q.get(*dof) - h);
            jac.set_column(i, &((residual(&qp) - residual(&qm)) / (2.0 * h)));
        }
        let jt = jac.transpose();
        let mut normal = &jt * &jac;
        for i in 0..dofs.len() {
            normal[(i, i)] *= 1.0 + lambda;
            normal[(i, i)] += 1e-9;
        }
        let Some(step) = normal.lu().solve(&(-(&jt * &r))) else { break };
        let candidate = with(&q, &step);
        let rc = residual(&candidate);
        if rc.norm_squared() < r.norm_squared() {
            let done = (r.norm_squared() - rc.norm_squared()) < 1e-16;
            q = candidate;
            r = rc;
            lambda = (lambda / 3.0).max(1e-9);
            if done {
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    let err = (clip_pose(config, &q, dist).position() - point).norm();
    (q, err)
}

/// Actual clip roll (deg) that puts the arms perpendicular to the line at the
/// clip's current projection, searched in `[from + 45, from + 225)`.
pub fn aligned_roll(config: &SessionConfig, js: &JointState, dist: &DisturbanceState, target: Segment) -> f64 {
    let from = dist.distal_roll;
    let score = |roll: f64| {
        let d = DisturbanceState { distal_roll: roll, ..*dist };
        config.phantom.score_placement(&clip_pose(config, js, &d), target).roll_error
    };
    let mut best = (f64::INFINITY, from + 90.0);
    let mut k = 0.0;
    while k < 180.0 {
        let roll = from + 45.0 + k;
        let e = score(roll);
        if e < best.0 {
            best = (e, roll);
        }
        k += 0.25;
    }
    // Golden-section refinement around the coarse minimum.
    let (mut a, mut b) = (best.1 - 0.25, best.1 + 0.25);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..40 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if score(c) < score(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}

fn ready_point(config: &SessionConfig, target: Segment, aim: f64) -> Vector3<f64> {
    let ph = &config.phantom;
    let s = (target.midpoint() + aim / ph.line_length()).clamp(0.0, 1.0);
    ph.line_point(s) + ph.valve_axis() * READY_HEIGHT
}

const APPROACH_DOFS: [Dof; 4] = [Dof::IsTranslation, Dof::TsRotation, Dof::IsBendMl, Dof::IsBendAp];

/// Joint state that puts the closed clip at the ready pose above `target` on
/// a rigid plant, starting from the configured initial state.
pub fn ready_state(config: &SessionConfig, target: Segment) -> JointState {
    let guess = JointState { is_translation: 30.0, is_bend_ml: 80.0, ..config.initial_state };
    let dofs = [Dof::TsTranslation, Dof::IsTranslation, Dof::TsRotation, Dof::IsBendMl, Dof::IsBendAp];
    let dist = DisturbanceState::relaxed(guess.ds_rotation_cmd);
    solve_pose(config, &guess, &dist, &dofs, &ready_point(config, target, 0.0)).0
}

fn deltas(from: &JointState, to: &JointState, dofs: &[Dof]) -> Vec<(Dof, f64)> {
    dofs.iter().map(|d| (*d, to.get(*d) - from.get(*d))).collect()
}

/// Position the clip above the (misjudged) target with the approach joints.
fn approach(b: &mut ScriptBuilder, target: Segment, aim: f64, passes: usize) -> Result<()> {
    let config = b.config();
    let point = ready_point(config, target, aim);
    for _ in 0..passes {
        let js = *b.sim().joints();
        let dist = *b.sim().disturbance();
        let (goal, _) = solve_pose(config, &js, &dist, &APPROACH_DOFS, &point);
        let d = deltas(&js, &goal, &APPROACH_DOFS);
        if d.iter().all(|(_, x)| x.abs() < 0.05) {
            break;
        }
        match b.control() {
            ControlPath::Robotic => {
                b.move_joints(&[d[0], d[1]])?;
                b.move_joints(&[d[2], d[3]])?;
            }
            ControlPath::Manual => b.move_joints(&[d[0], d[2], d[3], d[1]])?,
        }
    }
    Ok(())
}

/// Device sheath travel that takes the clip `depth` mm below the valve plane.
fn travel_to_depth(b: &ScriptBuilder, depth: f64) -> f64 {
    let config = b.config();
    let clip = b.sim().chain().clip;
    let axis = config.phantom.valve_axis();
    let height = (clip.position() - config.phantom.frame.position()).dot(&axis);
    let cos = (-clip.axis().dot(&axis)).max(0.2);
    (height + depth) / cos
}

/// One full eight-step delivery to `target`.
pub fn delivery_script(config: &SessionConfig, control: ControlPath, target: Segment, op: OperatorModel, seed: u64, name: &str) -> Result<CommandScript> {
    let mut b = ScriptBuilder::new(config, control, config.initial_state, ControlMode::ALL[0], op, seed);
    let aim = b.spread(op.aim_error);
    let plan = ready_state(config, target);
    b.pause();

    b.step_start(1)?;
    b.move_joints(&[(Dof::TsTranslation, plan.ts_translation - config.initial_state.ts_translation)])?;
    b.step_end(1)?;

    b.step_start(2)?;
    let js = *b.sim().joints();
    let coarse = [(Dof::IsTranslation, plan.is_translation - 5.0 - js.is_translation), (Dof::IsBendMl, plan.is_bend_ml - js.is_bend_ml)];
    b.move_joints(&coarse)?;
    b.move_joints(&[(Dof::TsRotation, plan.ts_rotation - js.ts_rotation)])?;
    b.step_end(2)?;

    b.step_start(3)?;
    approach(&mut b, target, aim, 2)?;
    b.step_end(3)?;

    b.step_start(4)?;
    let roll = aligned_roll(config, b.sim().joints(), b.sim().disturbance(), target);
    b.roll_to(roll, false)?;
    b.step_end(4)?;

    if control == ControlPath::Manual {
        let [lo, hi] = op.lateral_offset;
        let magnitude = lo + (hi - lo) * (0.5 + b.spread(0.5));
        let sign = if b.spread(1.0) < 0.0 { -1.0 } else { 1.0 };
        b.push(ScriptAction::LateralOffset { mm: sign * magnitude })?;
        b.pause();
        b.push(ScriptAction::CorrectionStart)?;
        approach(&mut b, target, aim, 1)?;
        let current = b.sim().disturbance().distal_roll;
        let roll = nearest_equivalent(aligned_roll(config, b.sim().joints(), b.sim().disturbance(), target), current);
        if (roll - current).abs() > TWIST_TOLERANCE {
            b.roll_to(roll, true)?;
        }
        b.push(ScriptAction::CorrectionEnd)?;
    }

    b.step_start(5)?;
    let travel = travel_to_depth(&b, GRASP_DEPTH);
    b.move_joints(&[(Dof::DsTranslation, travel)])?;
    b.step_end(5)?;

    for _ in 0..3 {
        let roll = aligned_roll(config, b.sim().joints(), b.sim().disturbance(), target);
        let current = b.sim().disturbance().distal_roll;
        let roll = nearest_equivalent(roll, current);
        if (roll - current).abs() <= TWIST_TOLERANCE {
            break;
        }
        // Aim for alignment at the grasp depth, where the clip will end up.
        b.push(ScriptAction::CorrectionStart)?;
        b.move_joints(&[(Dof::DsTranslation, -travel)])?;
        b.roll_to(roll, true)?;
        b.move_joints(&[(Dof::DsTranslation, travel)])?;
        b.push(ScriptAction::CorrectionEnd)?;
    }

    b.step_start(6)?;
    b.push(ScriptAction::Clip { command: ClipCommand::OpenArms })?;
    b.pause();
    let back = travel_to_depth(&b, 0.0);
    b.move_joints(&[(Dof::DsTranslation, back.min(0.0))])?;
    b.step_end(6)?;

    b.step_start(7)?;
    b.push(ScriptAction::Clip { command: ClipCommand::LowerGrippers })?;
    b.wait(3.0);
    b.step_end(7)?;

    b.step_start(8)?;
    b.push(ScriptAction::Clip { command: ClipCommand::CloseArms })?;
    b.wait(3.0);
    b.step_end(8)?;
    b.finish(name, target, seed)
}

/// Representative of `roll` modulo 180 deg closest to `current`.
fn nearest_equivalent(roll: f64, current: f64) -> f64 {
    roll - 180.0 * ((roll - current) / 180.0).round()
}

/// State after step 1 of a delivery to `target`.
fn after_step_one(config: &SessionConfig, target: Segment) -> JointState {
    let plan = ready_state(config, target);
    JointState { ts_translation: plan.ts_translation, ..config.initial_state }
}

/// Step 2 alone: advance the intermediate sheath and flex it through 90 deg.
pub fn step2_script(config: &SessionConfig, control: ControlPath, op: OperatorModel, seed: u64, name: &str) -> Result<CommandScript> {
    let start = after_step_one(config, Segment::A2p2);
    let mode = ControlMode::for_step(2).unwrap();
    let mut b = ScriptBuilder::new(config, control, start, mode, op, seed);
    let sweep = 90.0 * (1.0 + b.spread(op.rate_jitter * 0.6));
    b.step_start(2)?;
    b.move_joints(&[(Dof::IsTranslation, 25.0), (Dof::IsBendMl, sweep)])?;
    b.move_joints(&[(Dof::TsRotation, 5.0)])?;
    b.step_end(2)?;
    b.finish(name, Segment::A2p2, seed)
}

/// Step 3 alone, from a coarse pose to the ready pose above A2P2.
pub fn step3_script(config: &SessionConfig, control: ControlPath, name: &str) -> Result<CommandScript> {
    let plan = ready_state(config, Segment::A2p2);
    let start = JointState {
        is_translation: plan.is_translation - 10.0,
        ts_rotation: plan.ts_rotation - 12.0,
        is_bend_ml: plan.is_bend_ml - 15.0,
        is_bend_ap: plan.is_bend_ap + 12.0,
        ..plan
    };
    let mode = ControlMode::for_step(3).unwrap();
    let mut b = ScriptBuilder::new(config, control, start, mode, OperatorModel::for_path(control).exact(), 0);
    let d = deltas(&start, &plan, &APPROACH_DOFS);
    b.step_start(3)?;
    match control {
        ControlPath::Robotic => {
            b.move_joints(&[d[0], d[1]])?;
            b.move_joints(&[d[2], d[3]])?;
        }
        ControlPath::Manual => b.move_joints(&[d[0], d[2], d[3], d[1]])?,
    }
    b.step_end(3)?;
    b.finish(name, Segment::A2p2, 0)
}

/// Steps 4 to 6 alone: a quarter-turn roll from the ready pose, then the
/// device sheath is advanced and withdrawn.
pub fn twist_script(config: &SessionConfig, control: ControlPath, op: OperatorModel, seed: u64, name: &str) -> Result<CommandScript> {
    let start = ready_state(config, Segment::A2p2);
    let mode = ControlMode::for_step(4).unwrap();
    let mut b = ScriptBuilder::new(config, control, start, mode, op, seed);
    let travel = TWIST_TRAVEL + b.spread(op.timing_jitter * 6.0);
    b.step_start(4)?;
    b.roll_to(start.ds_rotation_cmd + 90.0, false)?;
    b.step_end(4)?;
    b.step_start(5)?;
    b.move_joints(&[(Dof::DsTranslation, travel)])?;
    b.step_end(5)?;
    b.step_start(6)?;
    b.move_joints(&[(Dof::DsTranslation, -travel)])?;
    b.step_end(6)?;
    b.finish(name, Segment::A2p2, seed)
}

/// A long robotic roll in mode 4 with the device sheath partly inserted.
pub fn dither_script(config: &SessionConfig, name: &str) -> Result<CommandScript> {
    let start = JointState { ds_translation: 10.0, ..ready_state(config, Segment::A2p2) };
    let mode = ControlMode::for_step(4).unwrap();
    let mut b = ScriptBuilder::new(config, ControlPath::Robotic, start, mode, OperatorModel::robotic().exact(), 0);
    b.step_start(4)?;
    let frame = GamepadFrame { dpad: Dpad { right: true, ..Default::default() }, ..Default::default() };
    b.push(ScriptAction::Frame { frame })?;
    b.wait(12.0);
    b.push(ScriptAction::Frame { frame: GamepadFrame::default() })?;
    b.step_end(4)?;
    b.wait(0.5);
    b.finish(name, Segment::A2p2, 0)
}

/// Seed of variant `i` in a family.
pub fn variant_seed(family: u64, i: usize) -> u64 {
    family * 1000 + i as u64
}

type Generator = fn(&SessionConfig, ControlPath, OperatorModel, u64, &str) -> Result<CommandScript>;

fn family(config: &SessionConfig, name: &str, family_seed: u64, variants: usize, generate: Generator) -> Result<(Vec<CommandScript>, Vec<CommandScript>)> {
    let mut canonical = Vec::new();
    let mut perturbed = Vec::new();
    for control in [ControlPath::Manual, ControlPath::Robotic] {
        let op = OperatorModel::for_path(control);
        let tag = match control {
            ControlPath::Manual => "manual",
            ControlPath::Robotic => "robotic",
        };
        canonical.push(generate(config, control, op.exact(), 0, &format!("{name}-{tag}-canonical"))?);
        for i in 0..variants {
            let seed = variant_seed(family_seed, i);
            perturbed.push(generate(config, control, op, seed, &format!("{name}-{tag}-{i:02}"))?);
        }
    }
    Ok((canonical, perturbed))
}

/// Every shipped scenario, keyed by file stem.
pub fn all_scenarios(config: &SessionConfig) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();

    let (canonical, variants) = family(config, "step2", 2, 5, step2_script)?;
    out.push(Scenario {
        name: "step2".into(),
        description: "Step 2 alone: intermediate sheath advance and 90 degree medial-lateral flexure.".into(),
        target: Segment::A2p2,
        canonical,
        variants,
    });

    out.push(Scenario {
        name: "step3".into(),
        description: "Step 3 alone: sequential single-joint moves versus paired stick input to the same ready pose.".into(),
        target: Segment::A2p2,
        canonical: vec![step3_script(config, ControlPath::Manual, "step3-manual-canonical")?, step3_script(config, ControlPath::Robotic, "step3-robotic-canonical")?],
        variants: Vec::new(),
    });

    let (canonical, variants) = family(config, "twist", 4, 5, twist_script)?;
    out.push(Scenario {
        name: "twist".into(),
        description: "Steps 4 to 6 alone: quarter-turn clip roll, then device sheath advance and withdrawal.".into(),
        target: Segment::A2p2,
        canonical,
        variants,
    });

    out.push(Scenario {
        name: "dither".into(),
        description: "Twelve seconds of continuous mode 4 roll with automatic dither.".into(),
        target: Segment::A2p2,
        canonical: vec![dither_script(config, "dither-robotic-canonical")?],
        variants: Vec::new(),
    });

    for (i, target) in Segment::ALL.into_iter().enumerate() {
        let name = format!("delivery_{target}");
        let seed = 10 + i as u64;
        let gen: Generator = match target {
            Segment::A1p1 => |c, p, o, s, n| delivery_script(c, p, Segment::A1p1, o, s, n),
            Segment::A2p2 => |c, p, o, s, n| delivery_script(c, p, Segment::A2p2, o, s, n),
            Segment::A3p3 => |c, p, o, s, n| delivery_script(c, p, Segment::A3p3, o, s, n),
        };
        let (canonical, variants) = family(config, &name, seed, 10, gen)?;
        out.push(Scenario {
            name: name.clone(),
            description: format!("Full eight-step clip delivery to {}.", target.to_string().to_uppercase()),
            target,
            canonical,
            variants,
        });
    }
    Ok(out)
}

/// Regenerate every scenario file into `dir`.
pub fn write_scenarios(config: &SessionConfig, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for s in all_scenarios(config)? {
        let path = dir.join(format!("{}.json", s.name));
        s.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Total intermediate flexure swept over a run (deg).
pub fn bend_swept(script: &CommandScript, config: &SessionConfig) -> Result<f64> {
    let log = run_trial(script, config)?;
    let ticks: Vec<_> = log.ticks().collect();
    Ok(ticks
        .windows(2)
        .map(|w| (w[1].js.is_bend_ml - w[0].js.is_bend_ml).hypot(w[1].js.is_bend_ap - w[0].js.is_bend_ap))
        .sum())
}

/// Residual twist of a steps-4-to-6 run.
pub fn residual_twist(script: &CommandScript, config: &SessionConfig) -> Result<f64> {
    let log = run_trial(script, config)?;
    log.summary
        .and_then(|s| s.residual_twist)
        .ok_or_else(|| Error::Script { t: 0.0, reason: format!("'{}' has no step 4 and step 6 markers", script.name) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub k_couple: f64,
    pub release_gain: f64,
    pub canonical_twist: f64,
}

/// Coupling gain from the canonical manual step-2 script, and the twist
/// release gain that makes the canonical manual twist script leave
/// `target_twist` degrees of residual rotation.
pub fn calibrate(config: &SessionConfig, step2: &CommandScript, twist: &CommandScript, target_twist: f64) -> Result<Calibration> {
    let sweep = bend_swept(step2, config)?;
    if sweep <= 0.0 {
        return Err(Error::Config("canonical step-2 script sweeps no flexure".into()));
    }
    let k_couple = 6.0 / sweep;
    let mut cfg = config.clone();
    let mut eval = |g: f64| -> Result<f64> {
        cfg.friction.release_gain = g;
        residual_twist(twist, &cfg)
    };
    let (mut lo, mut hi) = (1e-5, 1.0);
    if eval(hi)? < target_twist {
        return Err(Error::Config(format!("canonical twist script cannot reach {target_twist} deg")));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? < target_twist {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let release_gain = 0.5 * (lo + hi);
    let canonical_twist = eval(release_gain)?;
    Ok(Calibration { k_couple, release_gain, canonical_twist })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ready_state_reaches_the_ready_pose() {
        let cfg = SessionConfig::default();
        for target in Segment::ALL {
            let js = ready_state(&cfg, target);
            let pose = clip_pose(&cfg, &js, &DisturbanceState::relaxed(js.ds_rotation_cmd));
            let err = (pose.position() - ready_point(&cfg, target, 0.0)).norm();
            // At ~90 deg of flexure TS roll and IS AP bend are nearly redundant,
            // so the off-axis middle of the coaptation arc is a position/axis
            // compromise rather than an exact solve.
            assert!(err < 1.0, "{target}: {err}");
            let dofs = [Dof::TsTranslation, Dof::IsTranslation, Dof::TsRotation, Dof::IsBendMl, Dof::IsBendAp];
            let (_, again) = solve_pose(&cfg, &js, &DisturbanceState::relaxed(js.ds_rotation_cmd), &dofs, &ready_point(&cfg, target, 0.0));
            assert!(again >= err - 1e-6, "{target}: re-solve improved {err} to {again}");
            assert!(pose.axis().dot(&Vector3::z()) < -0.99, "{target} axis {:?}", pose.axis());
            assert!(cfg.phantom.in_atrium(&pose.position()));
        }
    }

    #[test]
    fn aligned_roll_zeroes_roll_error() {
        let cfg = SessionConfig::default();
        let js = ready_state(&cfg, Segment::A2p2);
        let dist = DisturbanceState::relaxed(js.ds_rotation_cmd);
        let roll = aligned_roll(&cfg, &js, &dist, Segment::A2p2);
        let d = DisturbanceState { distal_roll: roll, ..dist };
        let score = cfg.phantom.score_placement(&clip_pose(&cfg, &js, &d), Segment::A2p2);
        assert!(score.roll_error < 1e-3, "{}", score.roll_error);
    }

    #[test]
    fn built_script_replays_to_the_builders_own_run() {
        let cfg = SessionConfig::default();
        let op = OperatorModel::robotic();
        let mut b = ScriptBuilder::new(&cfg, ControlPath::Robotic, ready_state(&cfg, Segment::A2p2), ControlMode::ALL[3], op, 5);
        b.step_start(4).unwrap();
        b.roll_to(40.0, false).unwrap();
        b.step_end(4).unwrap();
        let ticks_in_builder = b.sim().ticks();
        let final_js = *b.sim().joints();
        let script = b.finish("probe", Segment::A2p2, 5).unwrap();
        let log = run_trial(&script, &cfg).unwrap();
        assert_eq!(log.ticks().count() as u64, ticks_in_builder + 1);
        assert_eq!(log.ticks().last().unwrap().js, final_js);
    }

    #[test]
    fn robotic_move_pairs_joints_in_one_frame() {
        let cfg = SessionConfig::default();
        let start = ready_state(&cfg, Segment::A2p2);
        let mut b = ScriptBuilder::new(&cfg, ControlPath::Robotic, start, ControlMode::ALL[2], OperatorModel::robotic().exact(), 0);
        b.move_joints(&[(Dof::IsBendMl, 10.0), (Dof::IsBendAp, -5.0)]).unwrap();
        let js = b.sim().joints();
        assert_abs_diff_eq!(js.is_bend_ml - start.is_bend_ml, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(js.is_bend_ap - start.is_bend_ap, -5.0, epsilon = 1e-9);
        let frames = b.entries.iter().filter(|e| matches!(e.action, ScriptAction::Frame { .. })).count();
        assert_eq!(frames, 2);
    }

    #[test]
    fn nearest_equivalent_wraps_half_turns() {
        assert_abs_diff_eq!(nearest_equivalent(190.0, 5.0), 10.0);
        assert_abs_diff_eq!(nearest_equivalent(-100.0, 70.0), 80.0);
    }
}
