use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use super::metrics::TrialMetrics;
use super::script::ClipCommand;
use crate::control::{ControlMode, ControlPath, VelocityCommand};
use crate::disturbance::DisturbanceState;
use crate::error::{Error, Result};
use crate::kinematics::JointState;
use crate::phantom::Segment;

pub const LOG_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct LogHeader {
    pub format: u32,
    pub script: String,
    pub config_hash: String,
    pub control: ControlPath,
    pub target: Segment,
    pub seed: u64,
    pub dt: f64,
}

/// State after one simulation tick. `cmd` is the command that was applied
/// over the interval ending at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Tick {
    pub t: f64,
    pub js: JointState,
    pub dist: DisturbanceState,
    pub cmd: VelocityCommand,
    /// Active controller mode; absent on the manual path.
    pub mode: Option<ControlMode>,
    /// Device sheath insertion seen by the plant, including coupled
    /// extension and dither (mm).
    pub plant_ds_translation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    StepStart { step: u8 },
    StepEnd { step: u8 },
    CorrectionStart,
    CorrectionEnd,
    ModeChange { from: ControlMode, to: ControlMode },
    LateralOffset { mm: f64, ap_deflection: f64 },
    Clip { command: ClipCommand },
    /// The clip tip left the atrium while approaching the valve.
    AtriumExit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TrialEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogRecord {
    Tick(Tick),
    Event(TrialEvent),
}

/// One line of a JSON-lines trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Tick(Tick),
    Event(TrialEvent),
    Summary(TrialMetrics),
}

/// A complete trial: header, interleaved ticks and events, and the metrics
/// computed when the trial finished.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
    pub summary: Option<TrialMetrics>,
}

impl TrialLog {
    pub fn ticks(&self) -> impl Iterator<Item = &Tick> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Tick(t) => Some(t),
            _ => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &TrialEvent> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Event(e) => Some(e),
            _ => None,
        })
    }

    /// Tick whose timestamp is `t`, to within a quarter tick.
    pub fn tick_at(&self, t: f64) -> Option<&Tick> {
        let k = (t / self.header.dt).round();
        if (t / self.header.dt - k).abs() > 0.25 {
            return None;
        }
        let tick = self.ticks().nth(k as usize)?;
        ((tick.t - t).abs() <= 0.25 * self.header.dt).then_some(tick)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let line = |l: &LogLine, w: &mut W| -> Result<()> {
            serde_json::to_writer(&mut *w, l)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&LogLine::Header(self.header.clone()), &mut w)?;
        for r in &self.records {
            match r {
                LogRecord::Tick(t) => line(&LogLine::Tick(*t), &mut w)?,
                LogRecord::Event(e) => line(&LogLine::Event(*e), &mut w)?,
            }
        }
        if let Some(s) = &self.summary {
            line(&LogLine::Summary(s.clone()), &mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        let mut summary = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine =
                serde_json::from_str(&line).map_err(|e| Error::MalformedLog(format!("line {}: {e}", n + 1)))?;
            if summary.is_some() {
                return Err(Error::MalformedLog(format!("line {}: content after summary", n + 1)));
            }
            match (parsed, header.is_some()) {
                (LogLine::Header(h), false) => header = Some(h),
                (LogLine::Header(_), true) => return Err(Error::MalformedLog(format!("line {}: second header", n + 1))),
                (_, false) => return Err(Error::MalformedLog("first line is not a header".into())),
                (LogLine::Tick(t), true) => records.push(LogRecord::Tick(t)),
                (LogLine::Event(e), true) => records.push(LogRecord::Event(e)),
                (LogLine::Summary(s), true) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| Error::MalformedLog("empty log".into()))?;
        let log = TrialLog { header, records, summary };
        log.validate()?;
        Ok(log)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f)).map_err(|e| match e {
            Error::MalformedLog(m) => Error::MalformedLog(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Tick times start at zero and advance by exactly one step; events are
    /// stamped with the time of the tick they follow; step markers pair up.
    pub fn validate(&self) -> Result<()> {
        let dt = self.header.dt;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::MalformedLog(format!("bad dt {dt}")));
        }
        let tol = 1e-9;
        let mut last_tick: Option<f64> = None;
        for r in &self.records {
            match r {
                LogRecord::Tick(t) => {
                    let ok = match last_tick {
                        None => t.t.abs() <= tol,
                        Some(prev) => (t.t - prev - dt).abs() <= tol,
                    };
                    if !ok {
                        return Err(Error::MalformedLog(format!("tick at t={} breaks the {dt} s cadence", t.t)));
                    }
                    last_tick = Some(t.t);
                }
                LogRecord::Event(e) => match last_tick {
                    Some(prev) if (e.t - prev).abs() <= tol => {}
                    _ => return Err(Error::MalformedLog(format!("event at t={} does not follow its tick", e.t))),
                },
            }
        }
        if last_tick.is_none() {
            return Err(Error::MalformedLog("log has no ticks".into()));
        }
        super::metrics::extract_timings(self)?;
        Ok(())
    }
}
