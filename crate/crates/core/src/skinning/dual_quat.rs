use nalgebra::{Isometry3, Quaternion, UnitQuaternion};

use crate::mesh::Vec3;

/// Dual quaternion `real + ε·dual` encoding a rigid motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualQuat {
    pub real: Quaternion<f64>,
    pub dual: Quaternion<f64>,
}

impl DualQuat {
    pub fn zero() -> Self {
        DualQuat {
            real: Quaternion::new(0.0, 0.0, 0.0, 0.0),
            dual: Quaternion::new(0.0, 0.0, 0.0, 0.0),
        }
    }

    pub fn from_rigid(rotation: &UnitQuaternion<f64>, translation: &Vec3) -> Self {
        let real = *rotation.quaternion();
        let t = Quaternion::new(0.0, translation.x, translation.y, translation.z);
        DualQuat {
            real,
            dual: (t * real) * 0.5,
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::from_rigid(&iso.rotation, &iso.translation.vector)
    }

    /// `self += w · other`.
    pub fn add_scaled(&mut self, other: &DualQuat, w: f64) {
        self.real += other.real * w;
        self.dual += other.dual * w;
    }

    /// Divides both parts by the norm of the real part. `None` if it vanishes.
    pub fn normalized(&self, min_norm: f64) -> Option<DualQuat> {
        let n = self.real.norm();
        if n < min_norm {
            return None;
        }
        Some(DualQuat {
            real: self.real / n,
            dual: self.dual / n,
        })
    }

    pub fn translation(&self) -> Vec3 {
        let t = (self.dual * self.real.conjugate()) * 2.0;
        Vec3::new(t.i, t.j, t.k)
    }

    /// Applies a unit dual quaternion to a point.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        let w = self.real.w;
        let q = Vec3::new(self.real.i, self.real.j, self.real.k);
        let uv = q.cross(p);
        let uuv = q.cross(&uv);
        // v + 2w(q×v) + 2q×(q×v) is exact for the identity rotation (q = 0).
        p + (uv * w + uuv) * 2.0 + self.translation()
    }
}
