//! Forward kinematics of three telescoping constant-curvature sheaths.
//!
//! Each steerable sheath is a straight passive segment followed by a bend
//! section of fixed length. Only the part of the bend section that protrudes
//! from the outer sheath is exposed; the commanded bend angle is spread
//! uniformly over that exposed arc. The device sheath does not bend.
//!
//! Frames: every sheath's base frame is the tip frame of the sheath around it,
//! with local +z along the sheath axis and local +x the zero-roll bend
//! direction. The clip frame keeps local +z along the clip axis and local +x
//! along the clip arms.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Below this bend (radians) the arc is evaluated with a truncated series.
const SMALL_BEND_RAD: f64 = 1e-4;

/// The eight continuous joints of the delivery system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Dof {
    TsTranslation,
    TsRotation,
    TsBend,
    IsTranslation,
    IsBendMl,
    IsBendAp,
    DsTranslation,
    DsRotation,
}

/// How a joint is rate limited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofKind {
    Translation,
    Roll,
    Flexure,
}

impl Dof {
    pub const ALL: [Dof; 8] = [
        Dof::TsTranslation,
        Dof::TsRotation,
        Dof::TsBend,
        Dof::IsTranslation,
        Dof::IsBendMl,
        Dof::IsBendAp,
        Dof::DsTranslation,
        Dof::DsRotation,
    ];

    pub fn kind(self) -> DofKind {
        match self {
            Dof::TsTranslation | Dof::IsTranslation | Dof::DsTranslation => DofKind::Translation,
            Dof::TsRotation | Dof::DsRotation => DofKind::Roll,
            Dof::TsBend | Dof::IsBendMl | Dof::IsBendAp => DofKind::Flexure,
        }
    }

    pub fn index(self) -> usize {
        Dof::ALL.iter().position(|d| *d == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ClipArms {
    #[default]
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Grippers {
    #[default]
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ClipAttachment {
    #[default]
    Attached,
    Released,
}

/// Joint values of the three sheaths. Translations in mm, angles in degrees.
///
/// Intermediate and device sheath insertions are measured relative to the tip
/// of the sheath that carries them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct JointState {
    pub ts_translation: f64,
    pub ts_rotation: f64,
    pub ts_bend: f64,
    pub is_translation: f64,
    pub is_bend_ml: f64,
    pub is_bend_ap: f64,
    pub ds_translation: f64,
    pub ds_rotation_cmd: f64,
    pub clip_arms: ClipArms,
    pub grippers: Grippers,
    pub clip: ClipAttachment,
}

impl JointState {
    pub fn get(&self, dof: Dof) -> f64 {
        match dof {
            Dof::TsTranslation => self.ts_translation,
            Dof::TsRotation => self.ts_rotation,
            Dof::TsBend => self.ts_bend,
            Dof::IsTranslation => self.is_translation,
            Dof::IsBendMl => self.is_bend_ml,
            Dof::IsBendAp => self.is_bend_ap,
            Dof::DsTranslation => self.ds_translation,
            Dof::DsRotation => self.ds_rotation_cmd,
        }
    }

    pub fn set(&mut self, dof: Dof, value: f64) {
        let slot = match dof {
            Dof::TsTranslation => &mut self.ts_translation,
            Dof::TsRotation => &mut self.ts_rotation,
            Dof::TsBend => &mut self.ts_bend,
            Dof::IsTranslation => &mut self.is_translation,
            Dof::IsBendMl => &mut self.is_bend_ml,
            Dof::IsBendAp => &mut self.is_bend_ap,
            Dof::DsTranslation => &mut self.ds_translation,
            Dof::DsRotation => &mut self.ds_rotation_cmd,
        };
        *slot = value;
    }

    pub fn continuous(&self) -> [f64; 8] {
        Dof::ALL.map(|d| self.get(d))
    }
}

/// Geometry of one sheath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SheathGeometry {
    /// Length of the steerable section (mm). For the rigid device sheath this
    /// is its rigid distal length.
    pub bend_section_length: f64,
    pub outer_radius: f64,
    /// Maximum insertion stroke (mm).
    pub max_stroke: f64,
    /// Symmetric bend limit (degrees); zero for a sheath that does not bend.
    pub max_bend: f64,
}

/// The full catheter: femoral entry frame plus the three nested sheaths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CatheterGeometry {
    pub base_frame: Pose,
    pub transseptal: SheathGeometry,
    pub intermediate: SheathGeometry,
    pub device: SheathGeometry,
}

impl Default for CatheterGeometry {
    fn default() -> Self {
        // Entry point at the septum, sheath axis along world +x, zero-roll
        // bend direction pointing down toward the valve (world -z).
        let base = Isometry3::from_parts(
            Translation3::new(-60.0, 0.0, 36.0),
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2),
        );
        CatheterGeometry {
            base_frame: Pose::from_isometry(&base),
            transseptal: SheathGeometry { bend_section_length: 80.0, outer_radius: 3.0, max_stroke: 150.0, max_bend: 180.0 },
            intermediate: SheathGeometry { bend_section_length: 60.0, outer_radius: 2.3, max_stroke: 150.0, max_bend: 120.0 },
            device: SheathGeometry { bend_section_length: 120.0, outer_radius: 1.6, max_stroke: 150.0, max_bend: 0.0 },
        }
    }
}

impl CatheterGeometry {
    // Negated comparisons so that NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        let sheaths = [&self.transseptal, &self.intermediate, &self.device];
        if sheaths.iter().any(|s| !(s.bend_section_length > 0.0) || !(s.max_stroke > 0.0) || s.max_bend < 0.0) {
            return Err("sheath lengths and strokes must be positive".into());
        }
        if !(self.transseptal.outer_radius > self.intermediate.outer_radius
            && self.intermediate.outer_radius > self.device.outer_radius
            && self.device.outer_radius > 0.0)
        {
            return Err("sheath radii must strictly decrease from transseptal to device sheath".into());
        }
        let q = self.base_frame.orientation;
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(format!("base frame quaternion norm {norm} is not 1"));
        }
        Ok(())
    }

    /// Saturation bounds for a joint; rolls are unbounded.
    pub fn joint_bounds(&self, dof: Dof) -> (f64, f64) {
        match dof {
            Dof::TsTranslation => (0.0, self.transseptal.max_stroke),
            Dof::IsTranslation => (0.0, self.intermediate.max_stroke),
            Dof::DsTranslation => (0.0, self.device.max_stroke),
            Dof::TsBend => (-self.transseptal.max_bend, self.transseptal.max_bend),
            Dof::IsBendMl | Dof::IsBendAp => (-self.intermediate.max_bend, self.intermediate.max_bend),
            Dof::TsRotation | Dof::DsRotation => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn saturate(&self, dof: Dof, value: f64) -> f64 {
        let (lo, hi) = self.joint_bounds(dof);
        value.clamp(lo, hi)
    }
}

/// Rigid pose: position in mm and a unit quaternion stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Default for Pose {
    fn default() -> Self {
        Pose { position: [0.0; 3], orientation: [1.0, 0.0, 0.0, 0.0] }
    }
}

impl Pose {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let q = iso.rotation.quaternion();
        Pose { position: [t.x, t.y, t.z], orientation: [q.w, q.i, q.j, q.k] }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [w, i, j, k] = self.orientation;
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, i, j, k));
        let [x, y, z] = self.position;
        Isometry3::from_parts(Translation3::new(x, y, z), q)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    /// Local +z expressed in the parent frame.
    pub fn axis(&self) -> Vector3<f64> {
        self.to_isometry().rotation * Vector3::z()
    }

    /// Local +x expressed in the parent frame.
    pub fn lateral(&self) -> Vector3<f64> {
        self.to_isometry().rotation * Vector3::x()
    }
}

/// `(1 - cos θ) / θ` and `sin θ / θ`, series-expanded near zero.
fn arc_factors(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_BEND_RAD {
        let t2 = theta * theta;
        (theta / 2.0 - theta * t2 / 24.0, 1.0 - t2 / 6.0)
    } else {
        ((1.0 - theta.cos()) / theta, theta.sin() / theta)
    }
}

/// Tip transform of a planar bend in the local x-z plane: straight segment of
/// `straight` mm then an arc of length `arc` subtending `theta` radians.
fn planar_section(theta: f64, straight: f64, arc: f64) -> Isometry3<f64> {
    let (fx, fz) = arc_factors(theta);
    Isometry3::from_parts(
        Translation3::new(arc * fx, 0.0, straight + arc * fz),
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), theta),
    )
}

fn exposure(insertion: f64, geom: &SheathGeometry) -> (f64, f64) {
    let insertion = insertion.max(0.0);
    let arc = insertion.min(geom.bend_section_length);
    (insertion - arc, arc)
}

/// Tip transform of a single-plane sheath relative to its base frame.
pub fn sheath_transform(bend_deg: f64, roll_deg: f64, insertion: f64, geom: &SheathGeometry) -> Isometry3<f64> {
    let (straight, arc) = exposure(insertion, geom);
    let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), roll_deg.to_radians());
    Isometry3::from_parts(Translation3::identity(), roll) * planar_section(bend_deg.to_radians(), straight, arc)
}

/// Tip pose of a single sheath relative to its base frame.
pub fn sheath_fk(bend_deg: f64, roll_deg: f64, insertion: f64, geom: &SheathGeometry) -> Pose {
    Pose::from_isometry(&sheath_transform(bend_deg, roll_deg, insertion, geom))
}

/// Tip transform of a sheath with two orthogonal bend planes. The two bends
/// combine into one bend of magnitude `hypot(ml, ap)` in direction
/// `atan2(ap, ml)`, with no twist of the tip frame.
pub fn biplanar_transform(ml_deg: f64, ap_deg: f64, insertion: f64, geom: &SheathGeometry) -> Isometry3<f64> {
    let (straight, arc) = exposure(insertion, geom);
    let theta = ml_deg.hypot(ap_deg).to_radians();
    // atan2 of two degree values is already an angle in radians.
    let phi = ap_deg.atan2(ml_deg);
    let dir = Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), phi));
    dir * planar_section(theta, straight, arc) * dir.inverse()
}

/// Plant-side quantities that modify the commanded joints before FK.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantOffsets {
    /// Uncommanded device sheath insertion (mm), including dither.
    pub ds_extension: f64,
    /// Uncommanded intermediate anterior-posterior deflection (degrees).
    pub is_ap_deflection: f64,
    /// Actual distal clip roll (degrees).
    pub distal_roll: f64,
}

impl PlantOffsets {
    /// A perfectly rigid plant: the clip follows the commanded roll.
    pub fn rigid(js: &JointState) -> Self {
        PlantOffsets { ds_extension: 0.0, is_ap_deflection: 0.0, distal_roll: js.ds_rotation_cmd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ChainPose {
    pub ts_tip: Pose,
    pub is_tip: Pose,
    pub clip: Pose,
}

/// Telescoping composition of the three sheaths in the world frame.
pub fn chain_transforms(js: &JointState, plant: &PlantOffsets, geom: &CatheterGeometry) -> [Isometry3<f64>; 3] {
    let base = geom.base_frame.to_isometry();
    let ts_tip = base * sheath_transform(js.ts_bend, js.ts_rotation, js.ts_translation, &geom.transseptal);
    let is_tip = ts_tip
        * biplanar_transform(js.is_bend_ml, js.is_bend_ap + plant.is_ap_deflection, js.is_translation, &geom.intermediate);
    let ds_insertion = (js.ds_translation + plant.ds_extension).max(0.0);
    let clip = is_tip
        * Isometry3::from_parts(
            Translation3::new(0.0, 0.0, ds_insertion),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), plant.distal_roll.to_radians()),
        );
    [ts_tip, is_tip, clip]
}

pub fn chain_fk(js: &JointState, plant: &PlantOffsets, geom: &CatheterGeometry) -> ChainPose {
    let [ts, is, clip] = chain_transforms(js, plant, geom);
    ChainPose { ts_tip: Pose::from_isometry(&ts), is_tip: Pose::from_isometry(&is), clip: Pose::from_isometry(&clip) }
}
