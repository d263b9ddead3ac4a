//! Mitral valve phantom: annulus, coaptation line, leaflet segment targets,
//! clip placement scoring and the left-atrium swept-volume check.
//!
//! All geometry is expressed in the phantom frame: annulus centre at the
//! origin, valve axis along +z (pointing into the atrium), coaptation line
//! running along x from the A1P1 end (s = 0) to the A3P3 end (s = 1).

use nalgebra::{Point3, Vector3};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::hull::convex_hull_volume;
use crate::kinematics::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    A1p1,
    A2p2,
    A3p3,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::A1p1, Segment::A2p2, Segment::A3p3];

    /// Parameter range `[start, end)` along the coaptation line.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Segment::A1p1 => (0.0, 1.0 / 3.0),
            Segment::A2p2 => (1.0 / 3.0, 2.0 / 3.0),
            Segment::A3p3 => (2.0 / 3.0, 1.0),
        }
    }

    pub fn midpoint(self) -> f64 {
        match self {
            Segment::A1p1 => 1.0 / 6.0,
            Segment::A2p2 => 0.5,
            Segment::A3p3 => 5.0 / 6.0,
        }
    }

    pub fn containing(s: f64) -> Segment {
        if s < 1.0 / 3.0 {
            Segment::A1p1
        } else if s < 2.0 / 3.0 {
            Segment::A2p2
        } else {
            Segment::A3p3
        }
    }
}

impl std::str::FromStr for Segment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "a1p1" => Ok(Segment::A1p1),
            "a2p2" => Ok(Segment::A2p2),
            "a3p3" => Ok(Segment::A3p3),
            other => Err(format!("unknown segment '{other}' (expected a1p1, a2p2 or a3p3)")),
        }
    }
}

impl std::fmt::Display for Segment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Segment::A1p1 => "a1p1",
            Segment::A2p2 => "a2p2",
            Segment::A3p3 => "a3p3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ValvePhantom {
    /// Pose of the phantom frame in the world.
    pub frame: Pose,
    /// Annulus ellipse semi-axes along x and y (mm).
    pub annulus_semi_axes: [f64; 2],
    /// Coaptation arc chord and sagitta (mm).
    pub coaptation_chord: f64,
    pub coaptation_sagitta: f64,
    /// Radius of the hemispherical atrium above the annulus (mm).
    pub atrium_radius: f64,
}

impl Default for ValvePhantom {
    fn default() -> Self {
        ValvePhantom {
            frame: Pose::default(),
            annulus_semi_axes: [19.0, 15.0],
            coaptation_chord: 30.0,
            coaptation_sagitta: 4.0,
            atrium_radius: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct PlacementScore {
    /// Arc-length distance from the clip projection to the target midpoint (mm).
    pub along_line_error: f64,
    /// Distance from the clip projection to the coaptation line (mm).
    pub off_line_error: f64,
    /// Angle between clip axis and valve axis (deg).
    pub axis_tilt: f64,
    /// Angle between the clip arms and the local perpendicular to the line (deg).
    pub roll_error: f64,
    /// Signed arc-length position relative to the target midpoint (mm).
    pub along_line_position: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AtriumCheck {
    pub swept_volume_proxy: f64,
    pub violation: bool,
}

/// Minimum spacing between path samples fed to the hull (mm).
const PATH_DECIMATION: f64 = 0.05;

impl ValvePhantom {
    pub fn validate(&self) -> Result<(), String> {
        let [a, b] = self.annulus_semi_axes;
        if !(a > 0.0 && b > 0.0 && self.coaptation_chord > 0.0 && self.coaptation_sagitta > 0.0 && self.atrium_radius > 0.0) {
            return Err("phantom dimensions must be positive".into());
        }
        let inside = |p: [f64; 2]| (p[0] / a).powi(2) + (p[1] / b).powi(2) < 1.0;
        let ends = [self.line_point_local(0.0), self.line_point_local(0.5), self.line_point_local(1.0)];
        if !ends.iter().all(|p| inside([p.x, p.y])) {
            return Err("coaptation line leaves the annulus".into());
        }
        Ok(())
    }

    fn radius(&self) -> f64 {
        let c = self.coaptation_chord;
        let s = self.coaptation_sagitta;
        (c * c / 4.0 + s * s) / (2.0 * s)
    }

    fn half_angle(&self) -> f64 {
        (self.coaptation_chord / (2.0 * self.radius())).asin()
    }

    fn circle_centre(&self) -> Vector3<f64> {
        Vector3::new(0.0, self.coaptation_sagitta / 2.0 - self.radius(), 0.0)
    }

    pub fn line_length(&self) -> f64 {
        2.0 * self.radius() * self.half_angle()
    }

    fn angle_at(&self, s: f64) -> f64 {
        let a = self.half_angle();
        -a + 2.0 * a * s
    }

    fn line_point_local(&self, s: f64) -> Vector3<f64> {
        let phi = self.angle_at(s);
        self.circle_centre() + Vector3::new(phi.sin(), phi.cos(), 0.0) * self.radius()
    }

    /// Point on the coaptation line in world coordinates.
    pub fn line_point(&self, s: f64) -> Vector3<f64> {
        (self.frame.to_isometry() * Point3::from(self.line_point_local(s))).coords
    }

    /// Unit tangent (direction of increasing s) in world coordinates.
    pub fn line_tangent(&self, s: f64) -> Vector3<f64> {
        let phi = self.angle_at(s);
        self.frame.to_isometry().rotation * Vector3::new(phi.cos(), -phi.sin(), 0.0)
    }

    pub fn valve_axis(&self) -> Vector3<f64> {
        self.frame.axis()
    }

    /// Nearest line parameter to a point already projected into the local plane.
    fn nearest_parameter(&self, local: &Vector3<f64>) -> f64 {
        let r = local - self.circle_centre();
        let phi = r.x.atan2(r.y);
        let a = self.half_angle();
        (phi.clamp(-a, a) + a) / (2.0 * a)
    }

    fn local_coords(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.frame.to_isometry().inverse() * Point3::from(*p)).coords
    }

    /// Signed arc-length position of a world point's projection along the
    /// line, relative to the midpoint of `target`.
    pub fn along_line_position(&self, p: &Vector3<f64>, target: Segment) -> f64 {
        let mut local = self.local_coords(p);
        local.z = 0.0;
        (self.nearest_parameter(&local) - target.midpoint()) * self.line_length()
    }

    pub fn score_placement(&self, clip: &Pose, target: Segment) -> PlacementScore {
        let iso = self.frame.to_isometry().inverse() * clip.to_isometry();
        let mut proj = iso.translation.vector;
        proj.z = 0.0;
        let s = self.nearest_parameter(&proj);
        let along = (s - target.midpoint()) * self.line_length();
        let nearest = self.line_point_local(s);
        let axis = iso.rotation * Vector3::z();
        let tilt = axis.z.abs().min(1.0).acos().to_degrees();

        let arms = iso.rotation * Vector3::x();
        let arms_in_plane = Vector3::new(arms.x, arms.y, 0.0);
        let phi = self.angle_at(s);
        let perpendicular = Vector3::new(phi.sin(), phi.cos(), 0.0);
        let roll_error = if arms_in_plane.norm() < 1e-12 {
            90.0
        } else {
            (arms_in_plane.normalize().dot(&perpendicular).abs().min(1.0)).acos().to_degrees()
        };
        PlacementScore {
            along_line_error: along.abs(),
            off_line_error: (proj - nearest).norm(),
            axis_tilt: tilt,
            roll_error,
            along_line_position: along,
        }
    }

    pub fn in_atrium(&self, p: &Vector3<f64>) -> bool {
        let local = self.local_coords(p);
        local.z >= 0.0 && local.norm() <= self.atrium_radius
    }

    /// Convex-hull volume of the clip tip path and whether any tip position
    /// leaves the atrium. Path samples closer than 0.05 mm to the previously
    /// kept sample are skipped before the hull is built.
    pub fn check_atrium_collision(&self, path: &[Pose]) -> AtriumCheck {
        let mut kept: Vec<Vector3<f64>> = Vec::new();
        let mut violation = false;
        for pose in path {
            let p = pose.position();
            violation |= !self.in_atrium(&p);
            if kept.last().is_none_or(|q| (p - q).norm() >= PATH_DECIMATION) {
                kept.push(p);
            }
        }
        if let (Some(last), Some(pose)) = (kept.last(), path.last()) {
            if *last != pose.position() {
                kept.push(pose.position());
            }
        }
        AtriumCheck { swept_volume_proxy: convex_hull_volume(&kept), violation }
    }
}
