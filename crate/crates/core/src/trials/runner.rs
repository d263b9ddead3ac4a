use super::log::{EventKind, LogHeader, LogRecord, Tick, TrialEvent, TrialLog, LOG_FORMAT};
use super::metrics::TrialMetrics;
use super::script::{ClipCommand, CommandScript, ScriptAction};
use crate::config::SessionConfig;
use crate::control::{step_manual, step_robotic, ControlMode, ControlPath, Controller, Dof, ManualAction, VelocityCommand};
use crate::disturbance::DisturbanceState;
use crate::error::{Error, Result};
use crate::hid::GamepadFrame;
use crate::kinematics::{chain_fk, ChainPose, ClipArms, ClipAttachment, Grippers, JointState};

/// Joints a frame asks to move, before mode gating. Trigger input always
/// maps to the mode's own trigger joint and is never gated.
pub fn requested_dofs(frame: &GamepadFrame) -> Vec<Dof> {
    let mut out = Vec::new();
    let axes = [
        (frame.left_stick[0], Dof::TsBend),
        (frame.left_stick[1], Dof::TsRotation),
        (frame.right_stick[0], Dof::IsBendMl),
        (frame.right_stick[1], Dof::IsBendAp),
    ];
    for (v, dof) in axes {
        if v != 0.0 {
            out.push(dof);
        }
    }
    if frame.dpad.up || frame.dpad.down {
        out.push(Dof::DsTranslation);
    }
    if frame.dpad.left || frame.dpad.right {
        out.push(Dof::DsRotation);
    }
    out
}

/// Tick-by-tick simulation of one trial, shared by the script runner and
/// live sessions.
///
/// In strict mode every scripted input must respect the step and mode
/// protocol; live sessions run non-strict and simply gate the input.
#[derive(Debug, Clone)]
pub struct Simulator<'c> {
    config: &'c SessionConfig,
    control: ControlPath,
    strict: bool,
    js: JointState,
    dist: DisturbanceState,
    controller: Controller,
    manual: ManualAction,
    ticks: u64,
    open_step: Option<u8>,
    in_correction: bool,
    outside_atrium: bool,
    last_cmd: VelocityCommand,
    records: Vec<LogRecord>,
}

impl<'c> Simulator<'c> {
    pub fn new(config: &'c SessionConfig, control: ControlPath, js: JointState, mode: ControlMode, strict: bool) -> Self {
        let controller = Controller::new(mode, config.mode_bindings, config.speed_limits, config.invert_ap);
        let mut sim = Simulator {
            config,
            control,
            strict,
            js,
            dist: DisturbanceState::relaxed(js.ds_rotation_cmd),
            controller,
            manual: ManualAction::idle(),
            ticks: 0,
            open_step: None,
            in_correction: false,
            outside_atrium: false,
            last_cmd: VelocityCommand::default(),
            records: Vec::new(),
        };
        sim.record_tick();
        sim
    }

    pub fn config(&self) -> &'c SessionConfig {
        self.config
    }

    pub fn control(&self) -> ControlPath {
        self.control
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.config.dt()
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn joints(&self) -> &JointState {
        &self.js
    }

    pub fn disturbance(&self) -> &DisturbanceState {
        &self.dist
    }

    pub fn mode(&self) -> ControlMode {
        self.controller.mode()
    }

    pub fn open_step(&self) -> Option<u8> {
        self.open_step
    }

    pub fn in_correction(&self) -> bool {
        self.in_correction
    }

    pub fn last_command(&self) -> &VelocityCommand {
        &self.last_cmd
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn chain(&self) -> ChainPose {
        chain_fk(&self.js, &self.dist.plant_offsets(&self.config.dither), &self.config.geometry)
    }

    /// Press a mode button directly (robotic path). Ignored on the manual path.
    pub fn select_mode(&mut self, button: crate::hid::ModeButton) -> Result<()> {
        if self.control != ControlPath::Robotic {
            return Ok(());
        }
        let before = self.controller.mode();
        let next = self.config.mode_bindings.mode(button);
        if self.strict {
            if let Some(step) = self.open_step {
                if ControlMode::for_step(step) != Some(next) {
                    return Err(self.script_error(format!("mode {next} selected during step {step}")));
                }
            }
        }
        if let Some(to) = self.controller.select(button) {
            self.event(EventKind::ModeChange { from: before, to });
        }
        Ok(())
    }

    /// Most recent controller frame accepted on the robotic path.
    pub fn input(&self) -> &GamepadFrame {
        self.controller.frame()
    }

    /// Discard recorded history, keeping the live state. Used by idle live
    /// sessions that are not recording a trial.
    pub fn forget_history(&mut self) {
        self.records.clear();
    }

    /// Drop all input: neutral controller, idle handles.
    pub fn release_input(&mut self) {
        self.controller.release();
        self.manual = ManualAction::idle();
    }

    fn script_error(&self, reason: impl Into<String>) -> Error {
        Error::Script { t: self.time(), reason: reason.into() }
    }

    fn event(&mut self, kind: EventKind) {
        self.records.push(LogRecord::Event(TrialEvent { t: self.time(), kind }));
    }

    fn record_tick(&mut self) {
        let tick = Tick {
            t: self.time(),
            js: self.js,
            dist: self.dist,
            cmd: self.last_cmd,
            mode: (self.control == ControlPath::Robotic).then(|| self.controller.mode()),
            plant_ds_translation: self.js.ds_translation + self.dist.coupled_extension + self.dist.dither_offset(&self.config.dither),
        };
        self.records.push(LogRecord::Tick(tick));
    }

    /// Apply one input or marker at the current time.
    pub fn apply(&mut self, action: &ScriptAction) -> Result<()> {
        match *action {
            ScriptAction::Frame { frame } => self.apply_frame(frame)?,
            ScriptAction::Manual { manual } => {
                if self.control != ControlPath::Manual {
                    return Err(self.script_error("handle action on the robotic path"));
                }
                if !manual.rate.is_finite() {
                    return Err(Error::MalformedFrame("non-finite handle rate".into()));
                }
                self.manual = manual;
            }
            ScriptAction::StepStart { step } => {
                if self.open_step.is_some() || self.in_correction {
                    return Err(self.script_error(format!("step {step} starts inside another interval")));
                }
                let mode = ControlMode::for_step(step).ok_or_else(|| self.script_error(format!("no step {step}")))?;
                if self.control == ControlPath::Robotic && self.mode() != mode {
                    return Err(self.script_error(format!("step {step} needs mode {mode}, controller is in mode {}", self.mode())));
                }
                self.open_step = Some(step);
                self.event(EventKind::StepStart { step });
            }
            ScriptAction::StepEnd { step } => {
                if self.open_step != Some(step) {
                    return Err(self.script_error(format!("step {step} ends but was not started")));
                }
                self.open_step = None;
                self.event(EventKind::StepEnd { step });
            }
            ScriptAction::CorrectionStart => {
                if self.open_step.is_some() || self.in_correction {
                    return Err(self.script_error("correction starts inside another interval"));
                }
                self.in_correction = true;
                self.event(EventKind::CorrectionStart);
            }
            ScriptAction::CorrectionEnd => {
                if !self.in_correction {
                    return Err(self.script_error("correction ends but was not started"));
                }
                self.in_correction = false;
                self.event(EventKind::CorrectionEnd);
            }
            ScriptAction::LateralOffset { mm } => {
                let deg = mm / self.ap_sensitivity();
                self.dist.ap_deflection += deg;
                self.event(EventKind::LateralOffset { mm, ap_deflection: deg });
            }
            ScriptAction::Clip { command } => {
                match command {
                    ClipCommand::Release => return Err(self.script_error("clip release is outside the delivery protocol")),
                    ClipCommand::OpenArms if self.open_step == Some(4) => {
                        return Err(self.script_error("clip arms must stay closed while the clip is rolled"))
                    }
                    ClipCommand::OpenArms => self.js.clip_arms = ClipArms::Open,
                    ClipCommand::CloseArms => self.js.clip_arms = ClipArms::Closed,
                    ClipCommand::LowerGrippers => self.js.grippers = Grippers::Down,
                    ClipCommand::RaiseGrippers => self.js.grippers = Grippers::Up,
                }
                debug_assert_eq!(self.js.clip, ClipAttachment::Attached);
                self.event(EventKind::Clip { command });
            }
            ScriptAction::End => {}
        }
        Ok(())
    }

    fn apply_frame(&mut self, frame: GamepadFrame) -> Result<()> {
        let mut frame = frame.normalized(self.config.deadzone)?;
        frame.timestamp = self.time();
        if self.control == ControlPath::Manual {
            if self.strict {
                return Err(self.script_error("controller frame on the manual path"));
            }
            self.manual = crate::control::manual_action_from_frame(&frame, &self.config.speed_limits, self.config.invert_ap)?;
            return Ok(());
        }
        let before = self.controller.mode();
        if let Some(to) = self.controller.submit(frame)? {
            self.event(EventKind::ModeChange { from: before, to });
        }
        let mode = self.controller.mode();
        if self.strict {
            if let Some(step) = self.open_step {
                if ControlMode::for_step(step) != Some(mode) {
                    return Err(self.script_error(format!("mode {mode} selected during step {step}")));
                }
            }
            if let Some(dof) = requested_dofs(&frame).into_iter().find(|d| !mode.enables(*d)) {
                return Err(Error::GatedDof { dof, mode: mode.id(), t: self.time() });
            }
        }
        Ok(())
    }

    /// Clip displacement per degree of intermediate AP deflection (mm/deg).
    fn ap_sensitivity(&self) -> f64 {
        let h = 0.01;
        let mut offsets = self.dist.plant_offsets(&self.config.dither);
        offsets.is_ap_deflection += h;
        let plus = chain_fk(&self.js, &offsets, &self.config.geometry).clip.position();
        offsets.is_ap_deflection -= 2.0 * h;
        let minus = chain_fk(&self.js, &offsets, &self.config.geometry).clip.position();
        ((plus - minus).norm() / (2.0 * h)).max(1e-6)
    }

    /// Advance one tick under the held input.
    pub fn step(&mut self) {
        let dt = self.config.dt();
        let plant = self.config.plant();
        let (cmd, (js, dist)) = match self.control {
            ControlPath::Robotic => {
                let cmd = self.controller.command();
                (cmd, step_robotic(&self.js, &self.dist, &cmd, dt, &plant))
            }
            ControlPath::Manual => {
                let mut cmd = self.manual.command(&self.config.speed_limits);
                cmd.dither_requested = self.manual.hand_dither;
                (cmd, step_manual(&self.js, &self.dist, &self.manual, &self.config.speed_limits, dt, &plant))
            }
        };
        self.js = js;
        self.dist = dist;
        self.last_cmd = cmd;
        self.ticks += 1;
        self.record_tick();

        if matches!(self.open_step, Some(1..=3)) {
            let outside = !self.config.phantom.in_atrium(&self.chain().clip.position());
            if outside && !self.outside_atrium {
                self.event(EventKind::AtriumExit);
            }
            self.outside_atrium = outside;
        } else {
            self.outside_atrium = false;
        }
    }

    /// Close the trial and compute its metrics.
    pub fn finish(self, script: &str, target: crate::phantom::Segment, seed: u64) -> Result<TrialLog> {
        if self.open_step.is_some() || self.in_correction {
            return Err(self.script_error("trial ended inside a step or correction"));
        }
        let header = LogHeader {
            format: LOG_FORMAT,
            script: script.to_string(),
            config_hash: self.config.hash(),
            control: self.control,
            target,
            seed,
            dt: self.config.dt(),
        };
        let mut log = TrialLog { header, records: self.records, summary: None };
        log.summary = Some(TrialMetrics::compute(&log, self.config)?);
        Ok(log)
    }
}

/// Run a script to completion. Deterministic: the same script and
/// configuration always give an identical log.
pub fn run_trial(script: &CommandScript, config: &SessionConfig) -> Result<TrialLog> {
    script.validate()?;
    let js = script.initial_state.unwrap_or(config.initial_state);
    let mut sim = Simulator::new(config, script.control, js, script.initial_mode, true);
    let dt = config.dt();
    for entry in &script.entries {
        let k = (entry.t / dt).round() as u64;
        while sim.ticks() < k {
            sim.step();
        }
        if entry.action == ScriptAction::End {
            break;
        }
        sim.apply(&entry.action)?;
    }
    sim.finish(&script.name, script.target, script.seed)
}
