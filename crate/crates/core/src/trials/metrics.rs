use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::log::{EventKind, TrialLog};
use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::kinematics::{chain_fk, Pose};
use crate::phantom::{PlacementScore, Segment};

/// Durations (s) of the timed step groups. Step 1 is setup and is not timed;
/// correction intervals (returns to steps 3 to 5) form their own group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct StepTimings {
    pub steps_2_3: f64,
    pub steps_4_6: f64,
    pub corrections: f64,
    pub steps_7_8: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

/// Step and correction intervals recovered from the event stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Markers {
    pub steps: Vec<(u8, Interval)>,
    pub corrections: Vec<Interval>,
}

impl Markers {
    pub fn from_log(log: &TrialLog) -> Result<Self> {
        let bad = |t: f64, why: &str| Error::MalformedLog(format!("t={t}: {why}"));
        let mut out = Markers::default();
        let mut open_step: Option<(u8, f64)> = None;
        let mut open_corr: Option<f64> = None;
        for e in log.events() {
            match e.kind {
                EventKind::StepStart { step } => {
                    if !(1..=8).contains(&step) {
                        return Err(bad(e.t, "step out of range"));
                    }
                    if open_step.is_some() || open_corr.is_some() {
                        return Err(bad(e.t, "step starts inside another interval"));
                    }
                    open_step = Some((step, e.t));
                }
                EventKind::StepEnd { step } => match open_step.take() {
                    Some((s, start)) if s == step => out.steps.push((step, Interval { start, end: e.t })),
                    _ => return Err(bad(e.t, "step end without matching start")),
                },
                EventKind::CorrectionStart => {
                    if open_step.is_some() || open_corr.is_some() {
                        return Err(bad(e.t, "correction starts inside another interval"));
                    }
                    open_corr = Some(e.t);
                }
                EventKind::CorrectionEnd => match open_corr.take() {
                    Some(start) => out.corrections.push(Interval { start, end: e.t }),
                    None => return Err(bad(e.t, "correction end without start")),
                },
                _ => {}
            }
        }
        if open_step.is_some() || open_corr.is_some() {
            return Err(Error::MalformedLog("unterminated step or correction".into()));
        }
        Ok(out)
    }

    pub fn last_end(&self, step: u8) -> Option<f64> {
        self.steps.iter().rev().find(|(s, _)| *s == step).map(|(_, i)| i.end)
    }

    pub fn contains(&self, steps: &[u8], t: f64) -> bool {
        self.steps.iter().any(|(s, i)| steps.contains(s) && i.start <= t && t <= i.end)
    }
}

pub fn extract_timings(log: &TrialLog) -> Result<StepTimings> {
    let m = Markers::from_log(log)?;
    let sum = |steps: &[u8]| -> f64 { m.steps.iter().filter(|(s, _)| steps.contains(s)).map(|(_, i)| i.end - i.start).fold(0.0, |a, b| a + b) };
    let mut t = StepTimings {
        steps_2_3: sum(&[2, 3]),
        steps_4_6: sum(&[4, 5, 6]),
        corrections: m.corrections.iter().map(|i| i.end - i.start).fold(0.0, |a, b| a + b),
        steps_7_8: sum(&[7, 8]),
        total: 0.0,
    };
    t.total = t.steps_2_3 + t.steps_4_6 + t.corrections + t.steps_7_8;
    Ok(t)
}

/// Outcome measures of one trial, all recomputable from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TrialMetrics {
    pub duration: f64,
    pub timings: StepTimings,
    pub final_clip: Pose,
    pub placement: PlacementScore,
    /// Uncommanded device extension at the end of step 2, or at the end of
    /// the trial when there is no step 2 (mm).
    pub coupled_extension: f64,
    /// Clip rotation not explained by commanded roll between the end of step 4
    /// and the end of step 6 (deg).
    pub residual_twist: Option<f64>,
    /// Convex-hull volume of the clip path during steps 2 and 3 (mm^3).
    pub swept_volume: f64,
    pub atrium_violation: bool,
    pub corrections: usize,
}

impl TrialMetrics {
    pub fn compute(log: &TrialLog, config: &SessionConfig) -> Result<Self> {
        let markers = Markers::from_log(log)?;
        let timings = extract_timings(log)?;
        let geometry = &config.geometry;
        let clip = |tick: &super::log::Tick| chain_fk(&tick.js, &tick.dist.plant_offsets(&config.dither), geometry).clip;

        let last = log.ticks().last().ok_or_else(|| Error::MalformedLog("log has no ticks".into()))?;
        let final_clip = clip(last);
        let placement = config.phantom.score_placement(&final_clip, log.header.target);

        let coupled_extension = match markers.last_end(2) {
            Some(t) => log.tick_at(t).ok_or_else(|| Error::MalformedLog("step 2 end off the tick grid".into()))?.dist.coupled_extension,
            None => last.dist.coupled_extension,
        };

        let residual_twist = match (markers.last_end(4), markers.last_end(6)) {
            (Some(t4), Some(t6)) if t6 > t4 => {
                let a = log.tick_at(t4).ok_or_else(|| Error::MalformedLog("step 4 end off the tick grid".into()))?;
                let b = log.tick_at(t6).ok_or_else(|| Error::MalformedLog("step 6 end off the tick grid".into()))?;
                Some(((b.dist.distal_roll - a.dist.distal_roll) - (b.js.ds_rotation_cmd - a.js.ds_rotation_cmd)).abs())
            }
            _ => None,
        };

        let path: Vec<Pose> = log.ticks().filter(|t| markers.contains(&[2, 3], t.t)).map(clip).collect();
        let check = config.phantom.check_atrium_collision(&path);

        Ok(TrialMetrics {
            duration: last.t,
            timings,
            final_clip,
            placement,
            coupled_extension,
            residual_twist,
            swept_volume: check.swept_volume_proxy,
            atrium_violation: check.violation,
            corrections: markers.corrections.len(),
        })
    }
}

/// Spread (max minus min, mm) of final along-line clip positions across
/// trials aimed at the same segment.
pub fn placement_spread(logs: &[TrialLog], target: Segment) -> Result<f64> {
    if logs.len() < 2 {
        return Err(Error::Spread(format!("need at least two trials, got {}", logs.len())));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for log in logs {
        if log.header.target != target {
            return Err(Error::Spread(format!("trial '{}' targets {} not {target}", log.header.script, log.header.target)));
        }
        let s = log.summary.as_ref().ok_or_else(|| Error::Spread(format!("trial '{}' has no summary", log.header.script)))?;
        lo = lo.min(s.placement.along_line_position);
        hi = hi.max(s.placement.along_line_position);
    }
    Ok(hi - lo)
}
