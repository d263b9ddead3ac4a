use std::time::Duration;

use super::log::{LogRecord, Tick, TrialEvent, TrialLog};
use super::metrics::TrialMetrics;
use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::kinematics::{chain_fk, ChainPose};

/// One replayed tick with the events stamped at its time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayFrame {
    pub tick: Tick,
    pub chain: ChainPose,
    pub events: Vec<TrialEvent>,
    /// Wall-clock wait before presenting this frame. Zero at speed 0.
    pub delay: Duration,
}

/// Iterates a log's ticks, reconstructing poses from the logged state.
pub struct Replay<'a> {
    log: &'a TrialLog,
    config: &'a SessionConfig,
    pos: usize,
    delay: Duration,
}

/// Replay a log. `speed` is a multiple of real time; 0 means as fast as possible.
pub fn replay<'a>(log: &'a TrialLog, config: &'a SessionConfig, speed: f64) -> Result<Replay<'a>> {
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(Error::Config(format!("replay speed {speed} must be finite and >= 0")));
    }
    if log.header.config_hash != config.hash() {
        return Err(Error::MalformedLog("log was recorded with a different configuration".into()));
    }
    let delay = if speed == 0.0 { Duration::ZERO } else { Duration::from_secs_f64(log.header.dt / speed) };
    Ok(Replay { log, config, pos: 0, delay })
}

impl Iterator for Replay<'_> {
    type Item = ReplayFrame;

    fn next(&mut self) -> Option<ReplayFrame> {
        let records = &self.log.records;
        let tick = loop {
            match records.get(self.pos)? {
                LogRecord::Tick(t) => break *t,
                LogRecord::Event(_) => self.pos += 1,
            }
        };
        let first = self.pos == 0;
        self.pos += 1;
        let mut events = Vec::new();
        while let Some(LogRecord::Event(e)) = records.get(self.pos) {
            events.push(*e);
            self.pos += 1;
        }
        let chain = chain_fk(&tick.js, &tick.dist.plant_offsets(&self.config.dither), &self.config.geometry);
        Some(ReplayFrame { tick, chain, events, delay: if first { Duration::ZERO } else { self.delay } })
    }
}

/// Recompute the metrics from the logged ticks and compare them with the
/// logged summary. Returns the recomputed metrics.
pub fn verify(log: &TrialLog, config: &SessionConfig) -> Result<TrialMetrics> {
    let again = TrialMetrics::compute(log, config)?;
    match &log.summary {
        Some(s) if *s == again => Ok(again),
        Some(_) => Err(Error::MalformedLog("logged summary does not match the ticks".into())),
        None => Err(Error::MalformedLog("log has no summary".into())),
    }
}
