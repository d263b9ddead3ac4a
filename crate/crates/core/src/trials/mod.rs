//! Scripted trials: command scripts, the tick runner, JSON-lines logs,
//! timing extraction, outcome metrics, group summaries and replay.

mod log;
mod metrics;
mod replay;
mod runner;
mod script;
mod summary;

pub use log::{EventKind, LogHeader, LogLine, LogRecord, Tick, TrialEvent, TrialLog, LOG_FORMAT};
pub use metrics::{extract_timings, placement_spread, Interval, Markers, StepTimings, TrialMetrics};
pub use replay::{replay, verify, Replay, ReplayFrame};
pub use runner::{requested_dofs, run_trial, Simulator};
pub use script::{ClipCommand, CommandScript, Scenario, ScriptAction, ScriptEntry};
pub use summary::{mean, sample_sd, summarize, GroupRow, TrialRow};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SessionConfig;
    use crate::control::{ControlMode, ControlPath, Dof, ManualAction};
    use crate::error::Error;
    use crate::hid::{Buttons, Dpad, GamepadFrame, ModeButton};
    use crate::phantom::Segment;
    use approx::assert_abs_diff_eq;

    fn at(t: f64, action: ScriptAction) -> ScriptEntry {
        ScriptEntry { t, action }
    }

    fn frame(f: GamepadFrame) -> ScriptAction {
        ScriptAction::Frame { frame: f }
    }

    fn button(b: ModeButton) -> ScriptAction {
        frame(GamepadFrame { buttons: Buttons::only(b), ..Default::default() })
    }

    fn neutral() -> ScriptAction {
        frame(GamepadFrame::default())
    }

    fn robotic(entries: Vec<ScriptEntry>, mode: u8) -> CommandScript {
        CommandScript {
            name: "unit".into(),
            control: ControlPath::Robotic,
            target: Segment::A2p2,
            seed: 7,
            initial_state: None,
            initial_mode: ControlMode::new(mode).unwrap(),
            entries,
        }
    }

    fn roll_script() -> CommandScript {
        let roll = frame(GamepadFrame { dpad: Dpad { right: true, ..Default::default() }, ..Default::default() });
        let push = frame(GamepadFrame { triggers: [0.0, 1.0], ..Default::default() });
        robotic(
            vec![
                at(0.0, ScriptAction::StepStart { step: 4 }),
                at(0.0, roll),
                at(3.0, neutral()),
                at(3.0, ScriptAction::StepEnd { step: 4 }),
                at(3.0, ScriptAction::StepStart { step: 5 }),
                at(3.0, push),
                at(5.0, neutral()),
                at(5.0, ScriptAction::StepEnd { step: 5 }),
                at(5.5, ScriptAction::End),
            ],
            4,
        )
    }

    #[test]
    fn run_is_deterministic_and_round_trips() {
        let cfg = SessionConfig::default();
        let a = run_trial(&roll_script(), &cfg).unwrap();
        let b = run_trial(&roll_script(), &cfg).unwrap();
        let text = a.to_jsonl();
        assert_eq!(text, b.to_jsonl());
        let parsed = TrialLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(parsed, a);
        assert_eq!(parsed.ticks().count(), 551);
        verify(&parsed, &cfg).unwrap();
    }

    #[test]
    fn ticks_advance_by_dt_and_rates_respect_limits() {
        let cfg = SessionConfig::default();
        let log = run_trial(&roll_script(), &cfg).unwrap();
        let ticks: Vec<_> = log.ticks().collect();
        for w in ticks.windows(2) {
            assert_abs_diff_eq!(w[1].t - w[0].t, 0.01, epsilon = 1e-9);
            for dof in Dof::ALL {
                let rate = (w[1].js.get(dof) - w[0].js.get(dof)) / 0.01;
                assert!(rate.abs() <= cfg.speed_limits.limit(dof) + 1e-6);
                assert!(w[1].cmd.rate(dof).abs() <= cfg.speed_limits.limit(dof));
            }
            assert_eq!(w[1].mode.map(|m| m.id()), Some(4));
        }
    }

    #[test]
    fn timings_group_steps() {
        let cfg = SessionConfig::default();
        let log = run_trial(&roll_script(), &cfg).unwrap();
        let t = extract_timings(&log).unwrap();
        assert_abs_diff_eq!(t.steps_4_6, 5.0, epsilon = 1e-9);
        assert_eq!(t.steps_2_3, 0.0);
        assert_abs_diff_eq!(t.total, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn gated_frame_is_a_script_error() {
        let cfg = SessionConfig::default();
        let s = robotic(vec![at(0.0, frame(GamepadFrame { right_stick: [0.5, 0.0], ..Default::default() })), at(1.0, ScriptAction::End)], 4);
        match run_trial(&s, &cfg) {
            Err(Error::GatedDof { dof, mode, .. }) => {
                assert_eq!(dof, Dof::IsBendMl);
                assert_eq!(mode, 4);
            }
            other => panic!("expected gated dof error, got {other:?}"),
        }
    }

    #[test]
    fn step_in_wrong_mode_rejected() {
        let cfg = SessionConfig::default();
        let s = robotic(vec![at(0.0, ScriptAction::StepStart { step: 2 }), at(1.0, ScriptAction::End)], 4);
        assert!(matches!(run_trial(&s, &cfg), Err(Error::Script { .. })));
    }

    #[test]
    fn mode_switch_inside_step_rejected() {
        let cfg = SessionConfig::default();
        let s = robotic(vec![at(0.0, ScriptAction::StepStart { step: 4 }), at(0.5, button(ModeButton::A)), at(1.0, ScriptAction::End)], 4);
        assert!(matches!(run_trial(&s, &cfg), Err(Error::Script { .. })));
    }

    #[test]
    fn mode_switch_records_event_and_a_zero_tick() {
        let cfg = SessionConfig::default();
        let s = robotic(
            vec![
                at(0.0, button(ModeButton::Y)),
                at(0.5, frame(GamepadFrame { triggers: [0.0, 1.0], ..Default::default() })),
                at(1.0, ScriptAction::End),
            ],
            1,
        );
        let log = run_trial(&s, &cfg).unwrap();
        assert!(log.events().any(|e| matches!(e.kind, EventKind::ModeChange { .. })));
        assert_abs_diff_eq!(log.ticks().last().unwrap().js.is_translation, 5.0 + 3.0, epsilon = 1e-9);
    }

    #[test]
    fn arms_open_during_roll_rejected_and_release_rejected() {
        let cfg = SessionConfig::default();
        let open = ScriptAction::Clip { command: ClipCommand::OpenArms };
        let s = robotic(vec![at(0.0, ScriptAction::StepStart { step: 4 }), at(0.1, open), at(1.0, ScriptAction::End)], 4);
        assert!(run_trial(&s, &cfg).is_err());
        let s = robotic(vec![at(0.1, ScriptAction::Clip { command: ClipCommand::Release }), at(1.0, ScriptAction::End)], 4);
        assert!(run_trial(&s, &cfg).is_err());
    }

    #[test]
    fn unterminated_step_rejected() {
        let cfg = SessionConfig::default();
        let s = robotic(vec![at(0.0, ScriptAction::StepStart { step: 4 }), at(1.0, ScriptAction::End)], 4);
        assert!(run_trial(&s, &cfg).is_err());
    }

    #[test]
    fn manual_script_runs_single_handles() {
        let cfg = SessionConfig::default();
        let s = CommandScript {
            name: "manual".into(),
            control: ControlPath::Manual,
            target: Segment::A2p2,
            seed: 0,
            initial_state: None,
            initial_mode: ControlMode::ALL[0],
            entries: vec![
                at(0.0, ScriptAction::StepStart { step: 2 }),
                at(0.0, ScriptAction::Manual { manual: ManualAction::moving(Dof::IsBendMl, 5.46) }),
                at(2.0, ScriptAction::Manual { manual: ManualAction::idle() }),
                at(2.0, ScriptAction::StepEnd { step: 2 }),
                at(2.0, ScriptAction::End),
            ],
        };
        let log = run_trial(&s, &cfg).unwrap();
        assert!(log.ticks().all(|t| t.mode.is_none()));
        let m = log.summary.as_ref().unwrap();
        assert_abs_diff_eq!(m.coupled_extension, cfg.friction.k_couple * 5.46 * 2.0, epsilon = 1e-9);
    }

    #[test]
    fn lateral_offset_moves_clip_by_requested_distance() {
        let cfg = SessionConfig::default();
        let s = robotic(vec![at(0.0, ScriptAction::LateralOffset { mm: 3.0 }), at(0.01, ScriptAction::End)], 4);
        let mut s = s;
        s.initial_state = Some(crate::kinematics::JointState { ts_translation: 40.0, is_translation: 30.0, is_bend_ml: 80.0, ds_translation: 5.0, ..Default::default() });
        let log = run_trial(&s, &cfg).unwrap();
        let ticks: Vec<_> = log.ticks().collect();
        let p = |t: &Tick| crate::kinematics::chain_fk(&t.js, &t.dist.plant_offsets(&cfg.dither), &cfg.geometry).clip.position();
        assert_abs_diff_eq!((p(ticks[1]) - p(ticks[0])).norm(), 3.0, epsilon = 0.05);
    }

    #[test]
    fn corrupt_logs_rejected() {
        let cfg = SessionConfig::default();
        let text = run_trial(&roll_script(), &cfg).unwrap().to_jsonl();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(5);
        assert!(TrialLog::read_jsonl(lines.join("\n").as_bytes()).is_err());
        assert!(TrialLog::read_jsonl(&text.as_bytes()[..text.len() / 2]).is_err());
        assert!(TrialLog::read_jsonl("".as_bytes()).is_err());
        let without_header = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(TrialLog::read_jsonl(without_header.as_bytes()).is_err());
    }

    #[test]
    fn spread_checks_inputs() {
        let cfg = SessionConfig::default();
        let log = run_trial(&roll_script(), &cfg).unwrap();
        assert!(matches!(placement_spread(std::slice::from_ref(&log), Segment::A2p2), Err(Error::Spread(_))));
        let mut other = log.clone();
        other.header.target = Segment::A1p1;
        assert!(placement_spread(&[log.clone(), other], Segment::A2p2).is_err());
        assert_eq!(placement_spread(&[log.clone(), log], Segment::A2p2).unwrap(), 0.0);
    }

    #[test]
    fn replay_reconstructs_every_tick() {
        let cfg = SessionConfig::default();
        let log = run_trial(&roll_script(), &cfg).unwrap();
        let frames: Vec<_> = replay(&log, &cfg, 0.0).unwrap().collect();
        assert_eq!(frames.len(), log.ticks().count());
        assert!(frames.iter().all(|f| f.delay.is_zero()));
        assert_eq!(frames.iter().map(|f| f.events.len()).sum::<usize>(), log.events().count());
        let mut other = cfg.clone();
        other.dither.amplitude = 1.0;
        assert!(replay(&log, &other, 1.0).is_err());
    }
}
