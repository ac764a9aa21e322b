//! Dual-quaternion skinning of a template garment onto a posed skeleton.

mod dual_quat;
mod rig;

use nalgebra::{Isometry3, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

pub use dual_quat::DualQuat;
pub use rig::{read_rig, write_rig, RigFile};

/// Blended rotations with a smaller real-part norm are treated as cancelled.
const MIN_BLEND_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` only for the root, which is joint 0.
    pub parent: Option<usize>,
    /// Joint frame in the rest pose.
    pub rest: Isometry3<f64>,
}

/// Joint tree plus the per-joint rigid transform mapping rest space to posed space.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSkeleton {
    pub joints: Vec<Joint>,
    pub pose: Vec<Isometry3<f64>>,
}

impl PoseSkeleton {
    pub fn new(joints: Vec<Joint>, pose: Vec<Isometry3<f64>>) -> Result<Self> {
        let s = PoseSkeleton { joints, pose };
        s.validate()?;
        Ok(s)
    }

    /// Rest pose: every transform is the identity.
    pub fn rest(joints: Vec<Joint>) -> Result<Self> {
        let pose = vec![Isometry3::identity(); joints.len()];
        Self::new(joints, pose)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if self.pose.len() != self.joints.len() {
            return Err(Error::InvalidSkeleton(format!(
                "{} joints but {} pose transforms",
                self.joints.len(),
                self.pose.len()
            )));
        }
        for (i, j) in self.joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::InvalidSkeleton("joint 0 must be the root".into())),
                (_, None) => return Err(Error::InvalidSkeleton(format!("joint {i} has no parent"))),
                (_, Some(p)) if p >= i => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )))
                }
                _ => {}
            }
        }
        for (i, t) in self.pose.iter().chain(self.joints.iter().map(|j| &j.rest)).enumerate() {
            let norm = t.rotation.quaternion().norm();
            if (norm - 1.0).abs() > 1e-9 || !t.translation.vector.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidSkeleton(format!("transform {i} is not a unit rigid motion")));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn rest_positions(&self) -> Vec<Vec3> {
        self.joints.iter().map(|j| j.rest.translation.vector).collect()
    }

    /// Posed joint positions.
    pub fn posed_positions(&self) -> Vec<Vec3> {
        self.joints
            .iter()
            .zip(&self.pose)
            .map(|(j, t)| t.transform_point(&j.rest.translation.vector.into()).coords)
            .collect()
    }

    /// Forward kinematics from local rotations about each joint's rest position,
    /// followed by a global translation of the root.
    pub fn from_local_rotations(
        joints: Vec<Joint>,
        local: &[UnitQuaternion<f64>],
        root_translation: Vec3,
    ) -> Result<Self> {
        if local.len() != joints.len() {
            return Err(Error::InvalidSkeleton(format!(
                "{} joints but {} local rotations",
                joints.len(),
                local.len()
            )));
        }
        let mut pose: Vec<Isometry3<f64>> = Vec::with_capacity(joints.len());
        for (i, j) in joints.iter().enumerate() {
            let c = j.rest.translation.vector;
            let about_joint = Translation3::from(c) * local[i] * Translation3::from(-c);
            let parent = match j.parent {
                Some(p) if p < i => pose[p],
                Some(p) => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )))
                }
                None => Isometry3::from_parts(Translation3::from(root_translation), UnitQuaternion::identity()),
            };
            pose.push(parent * about_joint);
        }
        Self::new(joints, pose)
    }

    /// Transforms that carry a template rigged on `template_rest` joint positions
    /// onto this posed skeleton: the template's joint `j` lands on this skeleton's
    /// posed joint `j`, rotating with it.
    pub fn retargeted(&self, template_rest: &[Vec3]) -> Result<PoseSkeleton> {
        if template_rest.len() != self.joints.len() {
            return Err(Error::InvalidSkeleton("template joint count differs".into()));
        }
        let joints = self
            .joints
            .iter()
            .zip(template_rest)
            .map(|(j, &m)| Joint {
                name: j.name.clone(),
                parent: j.parent,
                rest: Isometry3::from_parts(Translation3::from(m), UnitQuaternion::identity()),
            })
            .collect();
        let pose = self
            .joints
            .iter()
            .zip(&self.pose)
            .zip(template_rest)
            .map(|((j, t), m)| t * Translation3::from(j.rest.translation.vector - m))
            .collect();
        Self::new(joints, pose)
    }

    /// Applies `t` after every pose transform.
    pub fn transformed(&self, t: &Isometry3<f64>) -> PoseSkeleton {
        PoseSkeleton {
            joints: self.joints.clone(),
            pose: self.pose.iter().map(|p| t * p).collect(),
        }
    }

    /// Bone segments `(owner joint, start, end)` in rest space: the segment from a
    /// joint's parent to the joint moves with the parent.
    pub fn rest_segments(&self) -> Vec<(usize, Vec3, Vec3)> {
        let rest = self.rest_positions();
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.parent.map(|p| (p, rest[p], rest[i])))
            .collect()
    }
}

/// Sparse `N×J` skinning weights, one row per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinWeights {
    pub joint_count: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SkinWeights {
    pub const DEFAULT_MAX_INFLUENCES: usize = 4;

    pub fn new(joint_count: usize, rows: Vec<Vec<(usize, f64)>>, max_influences: usize) -> Result<Self> {
        let w = SkinWeights { joint_count, rows };
        w.validate(max_influences)?;
        Ok(w)
    }

    pub fn validate(&self, max_influences: usize) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.is_empty() || row.len() > max_influences {
                return Err(Error::InvalidWeights(format!(
                    "row {i} has {} influences (allowed 1..={max_influences})",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for &(j, w) in row {
                if j >= self.joint_count {
                    return Err(Error::InvalidWeights(format!("row {i} references joint {j}")));
                }
                if !(w >= 0.0) {
                    return Err(Error::InvalidWeights(format!("row {i} has negative weight {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidWeights(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.rows.len()
    }

    /// Single rigid influence for every vertex.
    pub fn rigid(vertex_count: usize, joint_count: usize, joint: usize) -> Self {
        SkinWeights {
            joint_count,
            rows: vec![vec![(joint, 1.0)]; vertex_count],
        }
    }
}

/// Blends `(transform, weight)` pairs, flipping quaternions whose real part
/// points away from the largest-weight influence.
pub(crate) fn blend(influences: &[(DualQuat, f64)]) -> Option<DualQuat> {
    let pivot = influences
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &(_, w))| match best {
            Some((_, bw)) if bw >= w => best,
            _ => Some((i, w)),
        })?
        .0;
    let pivot_real = influences[pivot].0.real;
    let mut acc = DualQuat::zero();
    for (dq, w) in influences {
        let sign = if dq.real.dot(&pivot_real) < 0.0 { -1.0 } else { 1.0 };
        acc.add_scaled(dq, sign * w);
    }
    acc.normalized(MIN_BLEND_NORM)
}

/// Dual-quaternion skinning of `template` by the pose transforms of `pose`.
pub fn dqs(template: &TriMesh, pose: &PoseSkeleton, weights: &SkinWeights) -> Result<TriMesh> {
    if weights.vertex_count() != template.vertex_count() {
        return Err(Error::InvalidWeights(format!(
            "{} weight rows for {} vertices",
            weights.vertex_count(),
            template.vertex_count()
        )));
    }
    if weights.joint_count != pose.joint_count() {
        return Err(Error::InvalidWeights(format!(
            "weights have {} joint columns, skeleton has {} joints",
            weights.joint_count,
            pose.joint_count()
        )));
    }
    let dqs: Vec<DualQuat> = pose.pose.iter().map(DualQuat::from_isometry).collect();
    let mut influences = Vec::with_capacity(SkinWeights::DEFAULT_MAX_INFLUENCES);
    let mut vertices = Vec::with_capacity(template.vertex_count());
    for (i, (v, row)) in template.vertices.iter().zip(&weights.rows).enumerate() {
        influences.clear();
        influences.extend(row.iter().map(|&(j, w)| (dqs[j], w)));
        let b = blend(&influences).ok_or(Error::DegenerateBlend { vertex: i })?;
        vertices.push(b.transform_point(v));
    }
    Ok(TriMesh {
        vertices,
        faces: template.faces.clone(),
    })
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Weights proportional to `exp(-d²/falloff²)`, where `d` is the distance from
/// the rest-pose vertex to the nearest bone segment owned by each joint. Rows
/// keep the `max_influences` largest weights and are renormalized.
pub fn distance_weights(
    mesh: &TriMesh,
    skeleton: &PoseSkeleton,
    max_influences: usize,
    falloff: f64,
) -> Result<SkinWeights> {
    if max_influences == 0 || !(falloff > 0.0) {
        return Err(Error::InvalidWeights("max_influences and falloff must be positive".into()));
    }
    let segments = skeleton.rest_segments();
    if segments.is_empty() {
        return Err(Error::InvalidSkeleton("skeleton has no bones".into()));
    }
    let j_count = skeleton.joint_count();
    let mut rows = Vec::with_capacity(mesh.vertex_count());
    for v in &mesh.vertices {
        let mut dist = vec![f64::INFINITY; j_count];
        for (owner, a, b) in &segments {
            dist[*owner] = dist[*owner].min(point_segment_distance(v, a, b));
        }
        let d_min = dist.iter().cloned().fold(f64::INFINITY, f64::min);
        // Shifting by the nearest bone keeps the largest weight at exactly 1 before renormalizing.
        let mut cand: Vec<(usize, f64)> = dist
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_finite())
            .map(|(j, &d)| (j, (-(d * d - d_min * d_min) / (falloff * falloff)).exp()))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cand.truncate(max_influences);
        let total: f64 = cand.iter().map(|c| c.1).sum();
        let mut row: Vec<(usize, f64)> = cand.into_iter().map(|(j, w)| (j, w / total)).collect();
        row.sort_by_key(|c| c.0);
        rows.push(row);
    }
    SkinWeights::new(j_count, rows, max_influences)
}

#[cfg(test)]
mod tests;
