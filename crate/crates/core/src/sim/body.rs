use nalgebra::{Isometry3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::revolve::{Frame, Revolution};
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::skinning::{Joint, PoseSkeleton};

pub const PELVIS: usize = 0;
pub const CHEST: usize = 1;
pub const NECK: usize = 2;
pub const HEAD_TOP: usize = 3;
pub const L_SHOULDER: usize = 4;
pub const L_ELBOW: usize = 5;
pub const L_WRIST: usize = 6;
pub const R_SHOULDER: usize = 7;
pub const R_ELBOW: usize = 8;
pub const R_WRIST: usize = 9;

pub const JOINT_NAMES: [&str; 10] = [
    "pelvis", "chest", "neck", "head_top", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
];
const PARENTS: [Option<usize>; 10] = [None, Some(0), Some(1), Some(2), Some(1), Some(4), Some(5), Some(1), Some(7), Some(8)];

/// Body proportions, meters except `stature` (a height multiplier).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyShape {
    pub stature: f64,
    pub torso_radius: f64,
    pub shoulder_half_width: f64,
    pub arm_radius: f64,
    pub upper_arm_length: f64,
    pub head_radius: f64,
}

impl Default for BodyShape {
    fn default() -> Self {
        BodyShape {
            stature: 1.0,
            torso_radius: 0.14,
            shoulder_half_width: 0.2,
            arm_radius: 0.045,
            upper_arm_length: 0.3,
            head_radius: 0.095,
        }
    }
}

impl BodyShape {
    /// Documented `(name, low, high)` ranges.
    pub const RANGES: [(&'static str, f64, f64); 6] = [
        ("stature", 0.85, 1.15),
        ("torso_radius", 0.10, 0.18),
        ("shoulder_half_width", 0.15, 0.25),
        ("arm_radius", 0.035, 0.06),
        ("upper_arm_length", 0.25, 0.35),
        ("head_radius", 0.08, 0.11),
    ];

    pub fn to_vec(&self) -> [f64; 6] {
        [
            self.stature,
            self.torso_radius,
            self.shoulder_half_width,
            self.arm_radius,
            self.upper_arm_length,
            self.head_radius,
        ]
    }

    pub fn from_vec(v: [f64; 6]) -> Self {
        BodyShape {
            stature: v[0],
            torso_radius: v[1],
            shoulder_half_width: v[2],
            arm_radius: v[3],
            upper_arm_length: v[4],
            head_radius: v[5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for ((name, lo, hi), value) in Self::RANGES.iter().zip(self.to_vec()) {
            if !(value >= *lo && value <= *hi) {
                return Err(Error::OutOfRange {
                    name,
                    value,
                    lo: *lo,
                    hi: *hi,
                });
            }
        }
        Ok(())
    }

    /// Rest (T-pose) skeleton, y up, arms along ±x.
    pub fn rest_skeleton(&self) -> Vec<Joint> {
        let s = self.stature;
        let neck = Vec3::new(0.0, 1.46 * s, 0.0);
        let sh = |side: f64| Vec3::new(side * self.shoulder_half_width, 1.40 * s, 0.0);
        let el = |side: f64| sh(side) + Vec3::new(side * self.upper_arm_length, 0.0, 0.0);
        let wr = |side: f64| el(side) + Vec3::new(side * 0.9 * self.upper_arm_length, 0.0, 0.0);
        let pos = [
            Vec3::new(0.0, 1.0 * s, 0.0),
            Vec3::new(0.0, 1.3 * s, 0.0),
            neck,
            neck + Vec3::new(0.0, 0.03 * s + 3.2 * self.head_radius, 0.0),
            sh(1.0),
            el(1.0),
            wr(1.0),
            sh(-1.0),
            el(-1.0),
            wr(-1.0),
        ];
        pos.iter()
            .enumerate()
            .map(|(i, p)| Joint {
                name: JOINT_NAMES[i].to_string(),
                parent: PARENTS[i],
                rest: Isometry3::translation(p.x, p.y, p.z),
            })
            .collect()
    }

    /// Rest-space capsules and the joint that moves each of them.
    fn rest_capsules(&self, joints: &[Joint]) -> Vec<(usize, Capsule)> {
        let p = |j: usize| joints[j].rest.translation.vector;
        let t = self.torso_radius;
        let a = self.arm_radius;
        let h = self.head_radius;
        let head_low = p(NECK) + Vec3::new(0.0, 0.03 * self.stature + 0.9 * h, 0.0);
        let mut caps = vec![
            (PELVIS, Capsule::new(p(PELVIS), p(CHEST), t, 1.1 * t)),
            (CHEST, Capsule::new(p(CHEST), p(NECK), 0.05 * self.stature, 0.05 * self.stature)),
            (NECK, Capsule::new(head_low, head_low + Vec3::new(0.0, 0.4 * h, 0.0), h, h)),
        ];
        for (sh, el, wr) in [(L_SHOULDER, L_ELBOW, L_WRIST), (R_SHOULDER, R_ELBOW, R_WRIST)] {
            caps.push((CHEST, Capsule::new(p(CHEST), p(sh), 0.6 * t, 1.3 * a)));
            caps.push((sh, Capsule::new(p(sh), p(el), 1.2 * a, a)));
            caps.push((el, Capsule::new(p(el), p(wr), a, 0.8 * a)));
        }
        caps
    }
}

/// Per-joint local rotations of the body, radians.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyPose {
    /// Arm lowered from the T-pose, in the frontal plane.
    pub arm_down_left: f64,
    pub arm_down_right: f64,
    /// Forearm raised forward about the elbow.
    pub elbow_left: f64,
    pub elbow_right: f64,
    /// Rotation of the torso about the vertical axis.
    pub torso_twist: f64,
    /// Sideways lean of the torso in the frontal plane.
    pub torso_lean: f64,
    /// Sideways head tilt in the frontal plane.
    pub head_tilt: f64,
    pub root_translation: [f64; 3],
}

impl BodyPose {
    pub fn local_rotations(&self) -> Vec<UnitQuaternion<f64>> {
        let z = Vector3::z_axis();
        let y = Vector3::y_axis();
        let mut r = vec![UnitQuaternion::identity(); 10];
        r[PELVIS] = UnitQuaternion::from_axis_angle(&y, self.torso_twist) * UnitQuaternion::from_axis_angle(&z, self.torso_lean);
        r[NECK] = UnitQuaternion::from_axis_angle(&z, self.head_tilt);
        r[L_SHOULDER] = UnitQuaternion::from_axis_angle(&z, -self.arm_down_left);
        r[R_SHOULDER] = UnitQuaternion::from_axis_angle(&z, self.arm_down_right);
        r[L_ELBOW] = UnitQuaternion::from_axis_angle(&y, -self.elbow_left);
        r[R_ELBOW] = UnitQuaternion::from_axis_angle(&y, self.elbow_right);
        r
    }

    pub fn skeleton(&self, shape: &BodyShape) -> Result<PoseSkeleton> {
        let t = self.root_translation;
        PoseSkeleton::from_local_rotations(shape.rest_skeleton(), &self.local_rotations(), Vec3::new(t[0], t[1], t[2]))
    }
}

/// Tapered capsule: radius varies linearly from `ra` at `a` to `rb` at `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub ra: f64,
    pub rb: f64,
}

impl Capsule {
    pub fn new(a: Vec3, b: Vec3, ra: f64, rb: f64) -> Self {
        Capsule { a, b, ra, rb }
    }

    /// Closest axis point and the radius there.
    fn axis_point(&self, p: &Vec3) -> (Vec3, f64) {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.a + ab * t, self.ra + (self.rb - self.ra) * t)
    }

    /// Distance to the axis minus the interpolated radius at the closest axis point.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let (c, r) = self.axis_point(p);
        (p - c).norm() - r
    }

    /// Signed distance and the outward direction from the axis.
    pub fn distance_and_normal(&self, p: &Vec3) -> (f64, Vec3) {
        let (c, r) = self.axis_point(p);
        let d = p - c;
        let n = d.norm();
        let dir = if n > 1e-12 {
            d / n
        } else {
            // On the axis: any perpendicular works.
            let ab = self.b - self.a;
            let helper = if ab.x.abs() < 0.9 * ab.norm() { Vec3::x() } else { Vec3::y() };
            let perp = ab.cross(&helper);
            if perp.norm() > 0.0 {
                perp.normalize()
            } else {
                Vec3::y()
            }
        };
        (n - r, dir)
    }

    pub fn transformed(&self, t: &Isometry3<f64>) -> Capsule {
        Capsule {
            a: t.transform_point(&self.a.into()).coords,
            b: t.transform_point(&self.b.into()).coords,
            ra: self.ra,
            rb: self.rb,
        }
    }

    fn tessellate(&self, tess: &Tessellation, vertices: &mut Vec<Vec3>, faces: &mut Vec<[usize; 3]>) {
        let axis = self.b - self.a;
        let len = axis.norm();
        let frame = if len > 0.0 {
            Frame::along(self.a, axis)
        } else {
            Frame::along(self.a, Vec3::y())
        };
        let mut rings = Vec::new();
        let cap = tess.cap_rings.max(1);
        // Bottom hemisphere, pole excluded, equator excluded.
        for i in 1..cap {
            let phi = -std::f64::consts::FRAC_PI_2 + std::f64::consts::FRAC_PI_2 * i as f64 / cap as f64;
            rings.push((self.ra * phi.sin(), self.ra * phi.cos()));
        }
        let along = tess.along_rings.max(2);
        for i in 0..along {
            let t = i as f64 / (along - 1) as f64;
            rings.push((len * t, self.ra + (self.rb - self.ra) * t));
        }
        for i in 1..cap {
            let phi = std::f64::consts::FRAC_PI_2 * i as f64 / cap as f64;
            rings.push((len + self.rb * phi.sin(), self.rb * phi.cos()));
        }
        Revolution {
            rings: &rings,
            n_around: tess.around,
            start_pole: Some(-self.ra),
            end_pole: Some(len + self.rb),
        }
        .build(&frame, vertices, faces);
    }
}

/// Capsule tessellation resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tessellation {
    pub around: usize,
    /// Rings along the straight part, including both ends.
    pub along_rings: usize,
    /// Latitude steps per hemisphere.
    pub cap_rings: usize,
}

impl Default for Tessellation {
    fn default() -> Self {
        Tessellation {
            around: 12,
            along_rings: 5,
            cap_rings: 3,
        }
    }
}

impl Tessellation {
    pub fn vertices_per_capsule(&self) -> usize {
        self.around * (self.along_rings.max(2) + 2 * (self.cap_rings.max(1) - 1)) + 2
    }
}

/// Posed capsule body with its surface tessellation. Every capsule is
/// tessellated in full (parts buried in neighbors are kept), so the vertex
/// count does not depend on pose.
#[derive(Clone, Debug)]
pub struct BodyProxy {
    pub skeleton: PoseSkeleton,
    pub capsules: Vec<Capsule>,
    pub mesh: TriMesh,
}

impl BodyProxy {
    pub fn from_capsules(skeleton: PoseSkeleton, capsules: Vec<Capsule>, tess: &Tessellation) -> Result<Self> {
        if capsules.is_empty() {
            return Err(Error::InvalidMesh("body needs at least one capsule".into()));
        }
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for c in &capsules {
            c.tessellate(tess, &mut vertices, &mut faces);
        }
        let mesh = TriMesh::new(vertices, faces)?;
        Ok(BodyProxy {
            skeleton,
            capsules,
            mesh,
        })
    }

    /// Minimum signed distance over capsules.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.capsules.iter().map(|c| c.signed_distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Signed distance and outward direction of the closest capsule.
    pub fn closest(&self, p: &Vec3) -> (f64, Vec3) {
        let mut best = (f64::INFINITY, Vec3::y());
        for c in &self.capsules {
            let (d, n) = c.distance_and_normal(p);
            if d < best.0 {
                best = (d, n);
            }
        }
        best
    }
}

pub fn generate_body(shape: &BodyShape, pose: &BodyPose, tess: &Tessellation) -> Result<BodyProxy> {
    shape.validate()?;
    let skeleton = pose.skeleton(shape)?;
    let capsules = shape
        .rest_capsules(&skeleton.joints)
        .into_iter()
        .map(|(owner, c)| c.transformed(&skeleton.pose[owner]))
        .collect();
    BodyProxy::from_capsules(skeleton, capsules, tess)
}
