//! Hidden plant dynamics behind the inadvertent motions of manual delivery.
//!
//! Two effects are modelled:
//!
//! * **Coupled extension.** Flexing the intermediate sheath drags the device
//!   sheath forward unless its cart is servo-held. The accumulated extension
//!   is proportional to the bend angle swept and saturates at a cap.
//! * **Torsional windup.** Commanded device-sheath roll first winds the shaft
//!   up; the distal clip only turns once the stored twist exceeds a static
//!   friction threshold, then slips so the twist stays at that threshold.
//!   Axial dither lowers the threshold. Translating the sheath while twist is
//!   stored lets it unwind into unintended clip rotation.
//!
//! The model is deterministic. The invariant
//! `ds_rotation_cmd == distal_roll + windup` holds to rounding error.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::kinematics::PlantOffsets;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FrictionParams {
    /// Device-sheath extension per degree of intermediate flexure (mm/deg).
    pub k_couple: f64,
    /// Saturation of the coupled extension (mm).
    pub extension_cap: f64,
    /// Twist held by static friction without dither (deg).
    pub tau_static: f64,
    /// Threshold multiplier while dithering at the reference amplitude.
    pub dither_relief: f64,
    /// Dither amplitude at which `dither_relief` applies (mm). The multiplier
    /// for amplitude `a` is `dither_relief^(a / dither_reference_amplitude)`.
    pub dither_reference_amplitude: f64,
    /// Fraction of stored twist released per mm of translation.
    pub release_gain: f64,
    /// Hard limit on stored twist (deg).
    pub windup_cap: f64,
}

impl FrictionParams {
    /// Extension produced per degree swept by the canonical step-2 flexure.
    pub const CALIBRATED_K_COUPLE: f64 = 6.0 / 90.0;
    /// Tuned by `teer calibrate` against the canonical manual steps 4-6 script.
    pub const CALIBRATED_RELEASE_GAIN: f64 = 0.033_816;
}

impl Default for FrictionParams {
    fn default() -> Self {
        FrictionParams {
            k_couple: Self::CALIBRATED_K_COUPLE,
            extension_cap: 10.0,
            tau_static: 30.0,
            dither_relief: 0.2,
            dither_reference_amplitude: 2.5,
            release_gain: Self::CALIBRATED_RELEASE_GAIN,
            windup_cap: 45.0,
        }
    }
}

impl FrictionParams {
    // Negated comparisons so that NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.k_couple,
            self.extension_cap,
            self.tau_static,
            self.dither_relief,
            self.dither_reference_amplitude,
            self.release_gain,
            self.windup_cap,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err("friction parameters must be positive".into());
        }
        if self.dither_relief >= 1.0 {
            return Err("dither_relief must be below 1".into());
        }
        Ok(())
    }

    /// Slip threshold for the current dither condition.
    pub fn threshold(&self, dither_amplitude: Option<f64>) -> f64 {
        let relief = match dither_amplitude {
            Some(a) if a > 0.0 => self.dither_relief.powf(a / self.dither_reference_amplitude),
            _ => 1.0,
        };
        (self.tau_static * relief).min(self.windup_cap)
    }
}

/// Axial dither applied to the device sheath during roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DitherSpec {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Default for DitherSpec {
    fn default() -> Self {
        DitherSpec { amplitude: 2.5, frequency: 2.2 }
    }
}

/// Dither displacement `t` seconds after dithering began (mm).
pub fn dither_offset(t: f64, spec: &DitherSpec) -> f64 {
    spec.amplitude * (TAU * spec.frequency * t).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct DisturbanceState {
    /// Stored twist, commanded roll minus distal roll (deg).
    pub windup: f64,
    /// Actual clip roll (deg).
    pub distal_roll: f64,
    /// Uncommanded device sheath extension (mm).
    pub coupled_extension: f64,
    pub dither_active: bool,
    /// Dither phase (rad), reset to zero whenever dither stops.
    pub dither_phase: f64,
    /// Uncommanded anterior-posterior deflection of the intermediate sheath
    /// injected by scripted roll-induced displacement events (deg).
    #[serde(default)]
    pub ap_deflection: f64,
}

impl DisturbanceState {
    /// Plant state consistent with a commanded roll and no stored twist.
    pub fn relaxed(ds_rotation_cmd: f64) -> Self {
        DisturbanceState { distal_roll: ds_rotation_cmd, ..Default::default() }
    }

    pub fn dither_offset(&self, spec: &DitherSpec) -> f64 {
        if self.dither_active {
            spec.amplitude * self.dither_phase.sin()
        } else {
            0.0
        }
    }

    pub fn plant_offsets(&self, spec: &DitherSpec) -> PlantOffsets {
        PlantOffsets {
            ds_extension: self.coupled_extension + self.dither_offset(spec),
            is_ap_deflection: self.ap_deflection,
            distal_roll: self.distal_roll,
        }
    }
}

/// Coupled device-sheath extension from intermediate flexure.
pub fn step_coupling(
    is_bend_rate: f64,
    ds_cart_locked: bool,
    dt: f64,
    state: DisturbanceState,
    params: &FrictionParams,
) -> DisturbanceState {
    debug_assert!(dt > 0.0);
    if ds_cart_locked {
        return state;
    }
    let grown = state.coupled_extension + params.k_couple * is_bend_rate.abs() * dt;
    DisturbanceState { coupled_extension: grown.clamp(0.0, params.extension_cap), ..state }
}

/// Stick-slip torsion between the device and intermediate sheaths.
///
/// `dither_amplitude` is `Some` while axial dither is applied.
pub fn step_torsion(
    ds_roll_rate: f64,
    ds_trans_rate: f64,
    dither_amplitude: Option<f64>,
    dt: f64,
    state: DisturbanceState,
    params: &FrictionParams,
) -> DisturbanceState {
    debug_assert!(dt > 0.0);
    let mut windup = state.windup + ds_roll_rate * dt;
    let mut distal = state.distal_roll;

    if ds_trans_rate != 0.0 && windup != 0.0 {
        let fraction = (params.release_gain * ds_trans_rate.abs() * dt).min(1.0);
        let released = fraction * windup;
        distal += released;
        windup -= released;
    }

    let threshold = params.threshold(dither_amplitude);
    if windup.abs() > threshold {
        let slip = windup - threshold.copysign(windup);
        distal += slip;
        windup -= slip;
    }

    DisturbanceState { windup, distal_roll: distal, ..state }
}

/// Advance or reset the dither oscillator.
pub fn step_dither(dithering: bool, dt: f64, state: DisturbanceState, spec: &DitherSpec) -> DisturbanceState {
    if dithering {
        let phase = if state.dither_active { (state.dither_phase + TAU * spec.frequency * dt).rem_euclid(TAU) } else { 0.0 };
        DisturbanceState { dither_active: true, dither_phase: phase, ..state }
    } else {
        DisturbanceState { dither_active: false, dither_phase: 0.0, ..state }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const DT: f64 = 0.01;

    #[test]
    fn locked_cart_never_extends() {
        let p = FrictionParams::default();
        let mut s = DisturbanceState::default();
        for _ in 0..2000 {
            s = step_coupling(5.46, true, DT, s, &p);
        }
        assert_eq!(s.coupled_extension, 0.0);
    }

    #[test]
    fn unlocked_flexure_of_ninety_degrees_extends_six_mm() {
        let p = FrictionParams::default();
        let mut s = DisturbanceState::default();
        // 90 degrees at 4.5 deg/s over 20 s.
        for _ in 0..2000 {
            s = step_coupling(4.5, false, DT, s, &p);
        }
        assert_abs_diff_eq!(s.coupled_extension, 6.0, epsilon = 1e-9);
    }

    #[test]
    fn coupling_saturates_and_ignores_zero_rate() {
        let p = FrictionParams::default();
        let mut s = DisturbanceState::default();
        s = step_coupling(0.0, false, DT, s, &p);
        assert_eq!(s.coupled_extension, 0.0);
        for _ in 0..100_000 {
            s = step_coupling(-5.0, false, DT, s, &p);
        }
        assert_eq!(s.coupled_extension, p.extension_cap);
    }

    #[test]
    fn translation_without_windup_keeps_roll() {
        let p = FrictionParams::default();
        let mut s = DisturbanceState::default();
        for _ in 0..500 {
            s = step_torsion(0.0, 6.0, None, DT, s, &p);
        }
        assert_eq!(s.distal_roll, 0.0);
    }

    #[test]
    fn roll_sticks_then_slips_at_threshold() {
        let p = FrictionParams::default();
        let mut s = DisturbanceState::default();
        // 20 degrees: still stuck.
        for _ in 0..200 {
            s = step_torsion(10.0, 0.0, None, DT, s, &p);
        }
        assert_abs_diff_eq!(s.distal_roll, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.windup, 20.0, epsilon = 1e-9);
        // 50 degrees total: slipped by 20, holding 30.
        for _ in 0..300 {
            s = step_torsion(10.0, 0.0, None, DT, s, &p);
        }
        assert_abs_diff_eq!(s.windup, 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.distal_roll, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn dither_lowers_threshold() {
        let p = FrictionParams::default();
        let s = DisturbanceState { windup: 30.0, distal_roll: 60.0, ..Default::default() };
        let s = step_torsion(0.0, 0.0, Some(2.5), DT, s, &p);
        assert_abs_diff_eq!(s.windup, 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.distal_roll, 84.0, epsilon = 1e-9);
    }

    #[test]
    fn translation_releases_stored_twist() {
        let p = FrictionParams::default();
        let mut s = DisturbanceState { windup: 30.0, ..Default::default() };
        for _ in 0..1333 {
            s = step_torsion(0.0, 6.0, None, DT, s, &p);
        }
        assert!(s.distal_roll > 25.0 && s.distal_roll < 30.0, "{}", s.distal_roll);
        assert_abs_diff_eq!(s.distal_roll + s.windup, 30.0, epsilon = 1e-9);
    }

    #[test]
    fn windup_cap_bounds_threshold() {
        let p = FrictionParams { tau_static: 90.0, ..Default::default() };
        let mut s = DisturbanceState::default();
        for _ in 0..1000 {
            s = step_torsion(14.56, 0.0, None, DT, s, &p);
        }
        assert_abs_diff_eq!(s.windup, 45.0, epsilon = 1e-9);
    }

    #[test]
    fn dither_offset_reference_values() {
        let spec = DitherSpec::default();
        assert_eq!(dither_offset(0.0, &spec), 0.0);
        assert_abs_diff_eq!(dither_offset(1.0 / (4.0 * 2.2), &spec), 2.5, epsilon = 1e-12);
        // Trapezoid over one period.
        let n = 10_000;
        let period = 1.0 / spec.frequency;
        let h = period / n as f64;
        let integral: f64 = (0..n).map(|i| 0.5 * h * (dither_offset(i as f64 * h, &spec) + dither_offset((i + 1) as f64 * h, &spec))).sum();
        assert_abs_diff_eq!(integral, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn dither_phase_tracks_closed_form() {
        let spec = DitherSpec::default();
        let mut s = DisturbanceState::default();
        for k in 0..500 {
            s = step_dither(true, DT, s, &spec);
            assert_abs_diff_eq!(s.dither_offset(&spec), dither_offset(k as f64 * DT, &spec), epsilon = 1e-9);
        }
        s = step_dither(false, DT, s, &spec);
        assert_eq!(s.dither_offset(&spec), 0.0);
        assert_eq!(s.dither_phase, 0.0);
    }

    proptest! {
        #[test]
        fn conservation_and_bounds(cmds in proptest::collection::vec((-20.0f64..20.0, -8.0f64..8.0, any::<bool>()), 1..400)) {
            let p = FrictionParams::default();
            let mut s = DisturbanceState::default();
            let mut cmd = 0.0;
            for (roll, trans, dither) in cmds {
                cmd += roll * DT;
                s = step_torsion(roll, trans, dither.then_some(2.5), DT, s, &p);
                prop_assert!((cmd - s.distal_roll - s.windup).abs() < 1e-9);
                prop_assert!(s.windup.abs() <= p.windup_cap + 1e-12);
            }
        }

        #[test]
        fn locked_cart_blocks_any_stream(rates in proptest::collection::vec(-50.0f64..50.0, 1..500)) {
            let p = FrictionParams::default();
            let mut s = DisturbanceState::default();
            for r in rates {
                s = step_coupling(r, true, DT, s, &p);
            }
            prop_assert_eq!(s.coupled_extension, 0.0);
        }
    }
}
