use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::log::TrialLog;
use super::metrics::{placement_spread, TrialMetrics};
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::phantom::Segment;

/// One trial flattened for tabular output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TrialRow {
    pub script: String,
    pub control: ControlPath,
    pub target: Segment,
    pub seed: u64,
    pub duration: f64,
    pub steps_2_3: f64,
    pub steps_4_6: f64,
    pub correction_time: f64,
    pub steps_7_8: f64,
    pub total: f64,
    pub corrections: usize,
    pub coupled_extension: f64,
    pub residual_twist: Option<f64>,
    pub swept_volume: f64,
    pub along_line_position: f64,
    pub along_line_error: f64,
    pub off_line_error: f64,
    pub axis_tilt: f64,
    pub roll_error: f64,
    pub atrium_violation: bool,
}

impl TrialRow {
    pub fn new(log: &TrialLog) -> Result<Self> {
        let m: &TrialMetrics = log.summary.as_ref().ok_or_else(|| Error::MalformedLog(format!("{} has no summary", log.header.script)))?;
        Ok(TrialRow {
            script: log.header.script.clone(),
            control: log.header.control,
            target: log.header.target,
            seed: log.header.seed,
            duration: m.duration,
            steps_2_3: m.timings.steps_2_3,
            steps_4_6: m.timings.steps_4_6,
            correction_time: m.timings.corrections,
            steps_7_8: m.timings.steps_7_8,
            total: m.timings.total,
            corrections: m.corrections,
            coupled_extension: m.coupled_extension,
            residual_twist: m.residual_twist,
            swept_volume: m.swept_volume,
            along_line_position: m.placement.along_line_position,
            along_line_error: m.placement.along_line_error,
            off_line_error: m.placement.off_line_error,
            axis_tilt: m.placement.axis_tilt,
            roll_error: m.placement.roll_error,
            atrium_violation: m.atrium_violation,
        })
    }
}

/// Aggregates over all trials sharing a control path and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GroupRow {
    pub control: ControlPath,
    pub target: Segment,
    pub trials: usize,
    pub steps_2_3_mean: f64,
    pub steps_4_6_mean: f64,
    pub correction_time_mean: f64,
    pub steps_7_8_mean: f64,
    pub total_mean: f64,
    pub total_sd: f64,
    pub corrections_mean: f64,
    pub coupled_extension_mean: f64,
    pub residual_twist_mean: Option<f64>,
    pub swept_volume_mean: f64,
    /// Max minus min along-line position; needs two or more trials (mm).
    pub placement_spread: Option<f64>,
    /// Robotic mean total over manual mean total for the same target.
    pub time_ratio_to_manual: Option<f64>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |a, b| a + b) / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Group rows ordered by target, then manual before robotic.
pub fn summarize(logs: &[TrialLog]) -> Result<Vec<GroupRow>> {
    let mut groups: BTreeMap<(Segment, ControlPath), Vec<&TrialLog>> = BTreeMap::new();
    for log in logs {
        groups.entry((log.header.target, log.header.control)).or_default().push(log);
    }
    let mut rows = Vec::new();
    for ((target, control), members) in &groups {
        let trial_rows = members.iter().map(|l| TrialRow::new(l)).collect::<Result<Vec<_>>>()?;
        let col = |f: fn(&TrialRow) -> f64| trial_rows.iter().map(f).collect::<Vec<f64>>();
        let twists: Vec<f64> = trial_rows.iter().filter_map(|r| r.residual_twist).collect();
        let owned: Vec<TrialLog> = members.iter().map(|l| (*l).clone()).collect();
        let totals = col(|r| r.total);
        rows.push(GroupRow {
            control: *control,
            target: *target,
            trials: members.len(),
            steps_2_3_mean: mean(&col(|r| r.steps_2_3)),
            steps_4_6_mean: mean(&col(|r| r.steps_4_6)),
            correction_time_mean: mean(&col(|r| r.correction_time)),
            steps_7_8_mean: mean(&col(|r| r.steps_7_8)),
            total_mean: mean(&totals),
            total_sd: sample_sd(&totals),
            corrections_mean: mean(&col(|r| r.corrections as f64)),
            coupled_extension_mean: mean(&col(|r| r.coupled_extension)),
            residual_twist_mean: (!twists.is_empty()).then(|| mean(&twists)),
            swept_volume_mean: mean(&col(|r| r.swept_volume)),
            placement_spread: (owned.len() >= 2).then(|| placement_spread(&owned, *target)).transpose()?,
            time_ratio_to_manual: None,
        });
    }
    let manual: BTreeMap<Segment, f64> =
        rows.iter().filter(|r| r.control == ControlPath::Manual).map(|r| (r.target, r.total_mean)).collect();
    for row in rows.iter_mut().filter(|r| r.control == ControlPath::Robotic) {
        row.time_ratio_to_manual = manual.get(&row.target).filter(|m| **m > 0.0).map(|m| row.total_mean / m);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sd_matches_textbook_example() {
        // Population {2,4,4,4,5,5,7,9}: mean 5, sample variance 32/7.
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_abs_diff_eq!(mean(&xs), 5.0);
        assert_abs_diff_eq!(sample_sd(&xs), (32.0f64 / 7.0).sqrt(), epsilon = 1e-12);
        assert_eq!(sample_sd(&[3.0]), 0.0);
    }
}
