use crate::mesh::Vec3;

/// Surface of revolution in a local frame where `axis` is "up". Each ring is
/// `(axial offset, radius)`; optional poles close either end. Faces point away
/// from the axis when rings are ordered by increasing axial offset.
pub(crate) struct Revolution<'a> {
    pub rings: &'a [(f64, f64)],
    pub n_around: usize,
    pub start_pole: Option<f64>,
    pub end_pole: Option<f64>,
}

pub(crate) struct Frame {
    pub origin: Vec3,
    pub axis: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl Frame {
    pub fn world_y(origin: Vec3) -> Frame {
        // u × v = −axis, which makes `Revolution` faces point outward.
        Frame {
            origin,
            axis: Vec3::y(),
            u: Vec3::x(),
            v: Vec3::z(),
        }
    }

    /// Orthonormal frame around `axis` (need not be unit length).
    pub fn along(origin: Vec3, axis: Vec3) -> Frame {
        let a = axis.normalize();
        let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
        let u = a.cross(&helper).normalize();
        // Chosen so (u, a, v) has the same handedness as (x, y, z).
        let v = u.cross(&a);
        Frame { origin, axis: a, u, v }
    }

    fn point(&self, axial: f64, radius: f64, theta: f64) -> Vec3 {
        self.origin + self.axis * axial + self.u * (radius * theta.cos()) + self.v * (radius * theta.sin())
    }
}

impl Revolution<'_> {
    pub fn build(&self, frame: &Frame, vertices: &mut Vec<Vec3>, faces: &mut Vec<[usize; 3]>) {
        let n = self.n_around;
        let base = vertices.len();
        for &(axial, r) in self.rings {
            for k in 0..n {
                let theta = std::f64::consts::TAU * k as f64 / n as f64;
                vertices.push(frame.point(axial, r, theta));
            }
        }
        let idx = |ring: usize, k: usize| base + ring * n + (k % n);
        for i in 0..self.rings.len().saturating_sub(1) {
            for k in 0..n {
                let (a, b, c, d) = (idx(i, k), idx(i, k + 1), idx(i + 1, k), idx(i + 1, k + 1));
                faces.push([a, c, b]);
                faces.push([b, c, d]);
            }
        }
        if let Some(axial) = self.start_pole {
            let p = vertices.len();
            vertices.push(frame.origin + frame.axis * axial);
            for k in 0..n {
                faces.push([p, idx(0, k), idx(0, k + 1)]);
            }
        }
        if let Some(axial) = self.end_pole {
            let p = vertices.len();
            vertices.push(frame.origin + frame.axis * axial);
            let last = self.rings.len() - 1;
            for k in 0..n {
                faces.push([p, idx(last, k + 1), idx(last, k)]);
            }
        }
    }
}
