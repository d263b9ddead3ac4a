//! Live session protocol: wire messages and the transport-free session
//! state machine behind the WebSocket server.
//!
//! Every outbound message carries the session id and a sequence number.
//! Broadcast messages advance the sequence by one; a message addressed to a
//! single client (its welcome snapshot, a rejection) repeats the latest
//! broadcast number, so each client sees a non-decreasing stream. Snapshots
//! also carry their own gapless `index`.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use crate::config::SessionConfig;
use crate::control::{ControlMode, ControlPath, VelocityCommand};
use crate::disturbance::DisturbanceState;
use crate::error::{Error, Result};
use crate::hid::{GamepadFrame, ModeButton};
use crate::kinematics::{ChainPose, JointState, Pose};
use crate::phantom::{PlacementScore, Segment};
use crate::trials::{ClipCommand, EventKind, ReplayFrame, ScriptAction, Simulator, TrialEvent, TrialLog, TrialMetrics};

/// Held driver input is dropped once no frame has arrived for this long (s).
pub const STALE_INPUT: f64 = 0.1;

/// Visible part of the hidden plant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DisturbanceSummary {
    pub windup: f64,
    pub distal_roll: f64,
    pub coupled_extension: f64,
    pub dither_active: bool,
    pub ap_deflection: f64,
}

impl From<&DisturbanceState> for DisturbanceSummary {
    fn from(d: &DisturbanceState) -> Self {
        DisturbanceSummary {
            windup: d.windup,
            distal_roll: d.distal_roll,
            coupled_extension: d.coupled_extension,
            dither_active: d.dither_active,
            ap_deflection: d.ap_deflection,
        }
    }
}

/// Running scores for the trial in progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Scores {
    pub placement: PlacementScore,
    pub corrections: usize,
    pub atrium_exits: usize,
}

/// Complete, self-contained view of the session at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Snapshot {
    /// Gapless snapshot counter for the session.
    pub index: u64,
    pub t: f64,
    pub control: ControlPath,
    pub target: Segment,
    /// True while a trial is being recorded.
    pub recording: bool,
    pub joints: JointState,
    pub clip: Pose,
    pub disturbance: DisturbanceSummary,
    /// Controller mode; absent on the manual path.
    pub mode: Option<ControlMode>,
    /// Joint rates applied over the last tick.
    pub command: VelocityCommand,
    /// Last controller frame accepted from the driver, echoed verbatim.
    pub input: GamepadFrame,
    pub step: Option<u8>,
    pub in_correction: bool,
    pub scores: Scores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "marker", rename_all = "snake_case")]
pub enum Marker {
    StepStart { step: u8 },
    StepEnd { step: u8 },
    CorrectionStart,
    CorrectionEnd,
    Clip { command: ClipCommand },
}

impl Marker {
    fn action(self) -> ScriptAction {
        match self {
            Marker::StepStart { step } => ScriptAction::StepStart { step },
            Marker::StepEnd { step } => ScriptAction::StepEnd { step },
            Marker::CorrectionStart => ScriptAction::CorrectionStart,
            Marker::CorrectionEnd => ScriptAction::CorrectionEnd,
            Marker::Clip { command } => ScriptAction::Clip { command },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TrialAction {
    /// Begin recording a fresh trial from the configured initial state.
    Start { control: ControlPath, target: Segment },
    /// Finish the recorded trial and publish its metrics.
    Stop,
    /// Abandon any trial and return to the initial state.
    Reset,
    /// Step, correction or clip marker from the operator checklist.
    Mark { marker: Marker },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Snapshot(Snapshot),
    InputFrame { frame: GamepadFrame },
    ModeSelect { button: ModeButton },
    TrialControl(TrialAction),
    Event(TrialEvent),
    TrialSummary { script: String, metrics: TrialMetrics, log: Option<PathBuf> },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Envelope {
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub message: WireMessage,
}

impl Envelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Session(format!("malformed message: {e}")))
    }
}

/// JSON schema of [`Envelope`], shared with the cockpit.
pub fn wire_schema() -> String {
    let schema = schemars::schema_for!(Envelope);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Driver,
    Observer,
}

pub type ClientId = u64;

/// What the transport must do after a session call.
#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Broadcast(Envelope),
    To(ClientId, Envelope),
    /// Send the envelope, then close the connection.
    Close(ClientId, Envelope),
}

/// Step state and running counts rebuilt from the event stream.
#[derive(Debug, Clone, Copy, Default)]
struct Tracker {
    step: Option<u8>,
    in_correction: bool,
    corrections: usize,
    atrium_exits: usize,
}

impl Tracker {
    fn observe(&mut self, kind: &EventKind) {
        match *kind {
            EventKind::StepStart { step } => self.step = Some(step),
            EventKind::StepEnd { .. } => self.step = None,
            EventKind::CorrectionStart => {
                self.in_correction = true;
                self.corrections += 1;
            }
            EventKind::CorrectionEnd => self.in_correction = false,
            EventKind::AtriumExit => self.atrium_exits += 1,
            _ => {}
        }
    }
}

struct View<'a> {
    t: f64,
    control: ControlPath,
    target: Segment,
    recording: bool,
    joints: &'a JointState,
    chain: ChainPose,
    dist: &'a DisturbanceState,
    mode: Option<ControlMode>,
    command: VelocityCommand,
    input: GamepadFrame,
}

fn snapshot(index: u64, view: View<'_>, tracker: &Tracker, config: &SessionConfig) -> Snapshot {
    Snapshot {
        index,
        t: view.t,
        control: view.control,
        target: view.target,
        recording: view.recording,
        joints: *view.joints,
        clip: view.chain.clip,
        disturbance: view.dist.into(),
        mode: view.mode,
        command: view.command,
        input: view.input,
        step: tracker.step,
        in_correction: tracker.in_correction,
        scores: Scores {
            placement: config.phantom.score_placement(&view.chain.clip, view.target),
            corrections: tracker.corrections,
            atrium_exits: tracker.atrium_exits,
        },
    }
}

/// Numbers outbound messages for one session.
#[derive(Debug, Clone)]
struct Sequencer {
    id: String,
    seq: u64,
    snapshots: u64,
}

impl Sequencer {
    fn new(id: String) -> Self {
        Sequencer { id, seq: 0, snapshots: 0 }
    }

    fn broadcast(&mut self, message: WireMessage) -> Envelope {
        self.seq += 1;
        Envelope { session_id: self.id.clone(), seq: self.seq, message }
    }

    fn direct(&self, message: WireMessage) -> Envelope {
        Envelope { session_id: self.id.clone(), seq: self.seq, message }
    }

    fn next_index(&mut self) -> u64 {
        let i = self.snapshots;
        self.snapshots += 1;
        i
    }
}

/// Ticks at which a snapshot is due so that `snapshot_rate` is met on average.
fn snapshot_due(tick: u64, config: &SessionConfig) -> bool {
    let per = config.snapshot_rate / config.tick_rate;
    tick == 0 || ((tick as f64) * per).floor() > ((tick - 1) as f64 * per).floor()
}

/// One live session: a simulator ticking at the configured rate, a single
/// driver and any number of observers.
pub struct Session<'c> {
    config: &'c SessionConfig,
    seq: Sequencer,
    sim: Simulator<'c>,
    target: Segment,
    recording: bool,
    trials: u32,
    tracker: Tracker,
    scanned: usize,
    driver: Option<ClientId>,
    clients: BTreeSet<ClientId>,
    inbound: BTreeMap<ClientId, u64>,
    next_client: ClientId,
    last_input_tick: Option<u64>,
    newest_stamp: Option<f64>,
    latest: Envelope,
}

impl<'c> Session<'c> {
    pub fn new(config: &'c SessionConfig, id: impl Into<String>) -> Self {
        let sim = Self::idle_sim(config, ControlPath::Robotic);
        let mut seq = Sequencer::new(id.into());
        let tracker = Tracker::default();
        let view = Self::view_of(&sim, Segment::A2p2, false);
        let first = snapshot(seq.next_index(), view, &tracker, config);
        let latest = seq.direct(WireMessage::Snapshot(first));
        Session {
            config,
            seq,
            sim,
            target: Segment::A2p2,
            recording: false,
            trials: 0,
            tracker,
            scanned: 0,
            driver: None,
            clients: BTreeSet::new(),
            inbound: BTreeMap::new(),
            next_client: 1,
            last_input_tick: None,
            newest_stamp: None,
            latest,
        }
    }

    fn idle_sim(config: &'c SessionConfig, control: ControlPath) -> Simulator<'c> {
        Simulator::new(config, control, config.initial_state, ControlMode::ALL[0], false)
    }

    fn view_of<'s>(sim: &'s Simulator<'_>, target: Segment, recording: bool) -> View<'s> {
        View {
            t: sim.time(),
            control: sim.control(),
            target,
            recording,
            joints: sim.joints(),
            chain: sim.chain(),
            dist: sim.disturbance(),
            mode: (sim.control() == ControlPath::Robotic).then(|| sim.mode()),
            command: *sim.last_command(),
            input: *sim.input(),
        }
    }

    pub fn id(&self) -> &str {
        &self.seq.id
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn simulator(&self) -> &Simulator<'c> {
        &self.sim
    }

    pub fn driver(&self) -> Option<ClientId> {
        self.driver
    }

    /// Most recent broadcast snapshot.
    pub fn latest_snapshot(&self) -> &Envelope {
        &self.latest
    }

    /// Admit a client. Its first message is the latest full snapshot. A
    /// second driver is refused.
    pub fn connect(&mut self, role: Role) -> Result<(ClientId, Envelope)> {
        if role == Role::Driver && self.driver.is_some() {
            return Err(Error::Session("a driver is already connected".into()));
        }
        let id = self.next_client;
        self.next_client += 1;
        self.clients.insert(id);
        if role == Role::Driver {
            self.driver = Some(id);
            self.newest_stamp = None;
        }
        Ok((id, self.latest.clone()))
    }

    /// Forget a client. Losing the driver zeroes the held input before the
    /// next tick.
    pub fn disconnect(&mut self, client: ClientId) {
        self.clients.remove(&client);
        self.inbound.remove(&client);
        if self.driver == Some(client) {
            self.driver = None;
            self.sim.release_input();
            self.last_input_tick = None;
        }
    }

    fn reject(&self, client: ClientId, reason: impl Into<String>) -> Vec<Outgoing> {
        vec![Outgoing::Close(client, self.seq.direct(WireMessage::Error { message: reason.into() }))]
    }

    fn refuse(&self, client: ClientId, reason: impl Into<String>) -> Vec<Outgoing> {
        vec![Outgoing::To(client, self.seq.direct(WireMessage::Error { message: reason.into() }))]
    }

    /// Handle one text message from a client.
    pub fn receive(&mut self, client: ClientId, text: &str) -> Vec<Outgoing> {
        if !self.clients.contains(&client) {
            return Vec::new();
        }
        let env = match Envelope::parse(text) {
            Ok(env) => env,
            Err(e) => return self.reject(client, e.to_string()),
        };
        if env.session_id != self.seq.id {
            return self.reject(client, format!("unknown session {}", env.session_id));
        }
        if let Some(prev) = self.inbound.get(&client) {
            if env.seq <= *prev {
                return self.reject(client, format!("sequence {} does not follow {prev}", env.seq));
            }
        }
        self.inbound.insert(client, env.seq);
        if self.driver != Some(client) {
            return self.reject(client, "observers are receive-only");
        }
        match env.message {
            WireMessage::InputFrame { frame } => self.input(client, frame),
            WireMessage::ModeSelect { button } => {
                let before = self.sim.records().len();
                match self.sim.select_mode(button) {
                    Ok(()) => self.drain_events(before),
                    Err(e) => self.refuse(client, e.to_string()),
                }
            }
            WireMessage::TrialControl(action) => self.trial_control(client, action),
            _ => self.reject(client, "only input, mode and trial messages are accepted"),
        }
    }

    fn input(&mut self, client: ClientId, frame: GamepadFrame) -> Vec<Outgoing> {
        if !frame.timestamp.is_finite() {
            return self.reject(client, "non-finite frame timestamp");
        }
        if let Some(newest) = self.newest_stamp {
            if frame.timestamp < newest - STALE_INPUT {
                return Vec::new();
            }
        }
        let before = self.sim.records().len();
        match self.sim.apply(&ScriptAction::Frame { frame }) {
            Ok(()) => {
                self.newest_stamp = Some(self.newest_stamp.map_or(frame.timestamp, |n| n.max(frame.timestamp)));
                self.last_input_tick = Some(self.sim.ticks());
                self.drain_events(before)
            }
            Err(e) => self.reject(client, e.to_string()),
        }
    }

    fn trial_control(&mut self, client: ClientId, action: TrialAction) -> Vec<Outgoing> {
        match action {
            TrialAction::Start { control, target } => {
                if self.recording {
                    return self.refuse(client, "a trial is already recording");
                }
                self.sim = Self::idle_sim(self.config, control);
                self.target = target;
                self.recording = true;
                self.tracker = Tracker::default();
                self.scanned = 0;
                self.last_input_tick = None;
                Vec::new()
            }
            TrialAction::Stop => {
                if !self.recording {
                    return self.refuse(client, "no trial is recording");
                }
                if self.sim.open_step().is_some() || self.sim.in_correction() {
                    return self.refuse(client, "close the open step or correction first");
                }
                let mut idle = self.sim.clone();
                idle.forget_history();
                let done = std::mem::replace(&mut self.sim, idle);
                self.recording = false;
                self.scanned = 0;
                self.trials += 1;
                let script = format!("live-{}-{}", self.seq.id, self.trials);
                match self.publish(done, &script) {
                    Ok(msg) => vec![Outgoing::Broadcast(self.seq.broadcast(msg))],
                    Err(e) => self.refuse(client, e.to_string()),
                }
            }
            TrialAction::Reset => {
                self.sim = Self::idle_sim(self.config, self.sim.control());
                self.recording = false;
                self.tracker = Tracker::default();
                self.scanned = 0;
                self.last_input_tick = None;
                Vec::new()
            }
            TrialAction::Mark { marker } => {
                let before = self.sim.records().len();
                match self.sim.apply(&marker.action()) {
                    Ok(()) => self.drain_events(before),
                    Err(e) => self.refuse(client, e.to_string()),
                }
            }
        }
    }

    fn publish(&self, done: Simulator<'c>, script: &str) -> Result<WireMessage> {
        let log = done.finish(script, self.target, 0)?;
        let path = match &self.config.log_dir {
            Some(dir) => {
                let path = dir.join(format!("{script}.jsonl"));
                log.save(&path)?;
                Some(path)
            }
            None => None,
        };
        let metrics = log.summary.clone().expect("finished logs carry metrics");
        Ok(WireMessage::TrialSummary { script: script.to_string(), metrics, log: path })
    }

    fn drain_events(&mut self, from: usize) -> Vec<Outgoing> {
        let events: Vec<TrialEvent> = self.sim.records()[from.max(self.scanned)..]
            .iter()
            .filter_map(|r| match r {
                crate::trials::LogRecord::Event(e) => Some(*e),
                _ => None,
            })
            .collect();
        self.scanned = self.sim.records().len();
        events
            .into_iter()
            .map(|e| {
                self.tracker.observe(&e.kind);
                Outgoing::Broadcast(self.seq.broadcast(WireMessage::Event(e)))
            })
            .collect()
    }

    /// Advance the simulation one tick.
    pub fn tick(&mut self) -> Vec<Outgoing> {
        if let Some(k) = self.last_input_tick {
            if (self.sim.ticks() - k) as f64 * self.config.dt() > STALE_INPUT + 1e-9 {
                self.sim.release_input();
                self.last_input_tick = None;
            }
        }
        let before = self.sim.records().len();
        self.sim.step();
        let mut out = self.drain_events(before);
        if snapshot_due(self.sim.ticks(), self.config) {
            let view = Self::view_of(&self.sim, self.target, self.recording);
            let snap = snapshot(self.seq.next_index(), view, &self.tracker, self.config);
            self.latest = self.seq.broadcast(WireMessage::Snapshot(snap));
            out.push(Outgoing::Broadcast(self.latest.clone()));
        }
        if !self.recording {
            self.sim.forget_history();
            self.scanned = 0;
        }
        out
    }
}

/// Turns a finished log into the same snapshot and event stream a live
/// session would emit.
pub struct ReplayFeed<'a> {
    config: &'a SessionConfig,
    log: &'a TrialLog,
    seq: Sequencer,
    tracker: Tracker,
    latest: Option<Envelope>,
}

impl<'a> ReplayFeed<'a> {
    pub fn new(config: &'a SessionConfig, log: &'a TrialLog, id: impl Into<String>) -> Self {
        ReplayFeed { config, log, seq: Sequencer::new(id.into()), tracker: Tracker::default(), latest: None }
    }

    pub fn latest_snapshot(&self) -> Option<&Envelope> {
        self.latest.as_ref()
    }

    /// Messages for one replayed tick.
    pub fn frame(&mut self, frame: &ReplayFrame, tick_index: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        for e in &frame.events {
            self.tracker.observe(&e.kind);
            out.push(self.seq.broadcast(WireMessage::Event(*e)));
        }
        if snapshot_due(tick_index, self.config) {
            let view = View {
                t: frame.tick.t,
                control: self.log.header.control,
                target: self.log.header.target,
                recording: false,
                joints: &frame.tick.js,
                chain: frame.chain,
                dist: &frame.tick.dist,
                mode: frame.tick.mode,
                command: frame.tick.cmd,
                input: GamepadFrame::default(),
            };
            let snap = snapshot(self.seq.next_index(), view, &self.tracker, self.config);
            let env = self.seq.broadcast(WireMessage::Snapshot(snap));
            self.latest = Some(env.clone());
            out.push(env);
        }
        out
    }

    /// Final message once the replay is exhausted.
    pub fn summary(&mut self) -> Option<Envelope> {
        let metrics = self.log.summary.clone()?;
        Some(self.seq.broadcast(WireMessage::TrialSummary { script: self.log.header.script.clone(), metrics, log: None }))
    }
}
