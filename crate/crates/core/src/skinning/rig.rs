//! JSON rig file: joint tree, rest and pose transforms, sparse weight rows.
//!
//! ```json
//! {
//!   "joints": [
//!     {"name": "root", "parent": null,
//!      "rest": {"rotation": [1, 0, 0, 0], "translation": [0, 0, 0]}}
//!   ],
//!   "pose": [{"rotation": [1, 0, 0, 0], "translation": [0, 0.1, 0]}],
//!   "max_influences": 4,
//!   "weights": [[[0, 1.0]], [[0, 1.0]]]
//! }
//! ```
//!
//! Rotations are unit quaternions in `[w, x, y, z]` order, translations in
//! meters. Each weight row lists `[joint, weight]` pairs for one vertex.

use std::path::Path;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{Joint, PoseSkeleton, SkinWeights};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RigFile {
    pub skeleton: PoseSkeleton,
    pub weights: SkinWeights,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformDto {
    rotation: [f64; 4],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDto {
    #[serde(default)]
    name: String,
    parent: Option<usize>,
    rest: TransformDto,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigDto {
    joints: Vec<JointDto>,
    #[serde(default)]
    pose: Option<Vec<TransformDto>>,
    #[serde(default = "default_max_influences")]
    max_influences: usize,
    weights: Vec<Vec<(usize, f64)>>,
}

fn default_max_influences() -> usize {
    SkinWeights::DEFAULT_MAX_INFLUENCES
}

impl From<&Isometry3<f64>> for TransformDto {
    fn from(t: &Isometry3<f64>) -> Self {
        let q = t.rotation.quaternion();
        let v = t.translation.vector;
        TransformDto {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [v.x, v.y, v.z],
        }
    }
}

impl TransformDto {
    fn to_isometry(&self) -> Result<Isometry3<f64>> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSkeleton(format!(
                "rotation {:?} is not a unit quaternion",
                self.rotation
            )));
        }
        let [tx, ty, tz] = self.translation;
        Ok(Isometry3::from_parts(
            Translation3::new(tx, ty, tz),
            UnitQuaternion::new_unchecked(q),
        ))
    }
}

impl RigFile {
    pub fn to_json(&self) -> Result<String> {
        let dto = RigDto {
            joints: self
                .skeleton
                .joints
                .iter()
                .map(|j| JointDto {
                    name: j.name.clone(),
                    parent: j.parent,
                    rest: (&j.rest).into(),
                })
                .collect(),
            pose: Some(self.skeleton.pose.iter().map(TransformDto::from).collect()),
            max_influences: self.weights.rows.iter().map(Vec::len).max().unwrap_or(1),
            weights: self.weights.rows.clone(),
        };
        Ok(serde_json::to_string_pretty(&dto)?)
    }

    /// A missing `pose` means the rest pose.
    pub fn from_json(text: &str) -> Result<Self> {
        let dto: RigDto = serde_json::from_str(text)?;
        let joints = dto
            .joints
            .iter()
            .map(|j| {
                Ok(Joint {
                    name: j.name.clone(),
                    parent: j.parent,
                    rest: j.rest.to_isometry()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let skeleton = match dto.pose {
            Some(p) => {
                let pose = p.iter().map(TransformDto::to_isometry).collect::<Result<Vec<_>>>()?;
                PoseSkeleton::new(joints, pose)?
            }
            None => PoseSkeleton::rest(joints)?,
        };
        let weights = SkinWeights::new(skeleton.joint_count(), dto.weights, dto.max_influences)?;
        Ok(RigFile { skeleton, weights })
    }
}

pub fn read_rig(path: impl AsRef<Path>) -> Result<RigFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RigFile::from_json(&text)
}

pub fn write_rig(path: impl AsRef<Path>, rig: &RigFile) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, rig.to_json()?).map_err(|e| Error::io(path, e))
}
