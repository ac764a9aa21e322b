use serde::{Deserialize, Serialize};

use super::body::{BodyShape, HEAD_TOP};
use super::revolve::{Frame, Revolution};
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::skinning::{distance_weights, PoseSkeleton, SkinWeights};

/// Garment template geometry, placed relative to the rest skeleton of the
/// default body shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GarmentSpec {
    /// Flat sheet in the xz plane, centered `clearance` above the head.
    Grid {
        nx: usize,
        nz: usize,
        width: f64,
        depth: f64,
        clearance: f64,
    },
    /// Open cylinder around the vertical axis; `top` is the height of its upper rim.
    Tube {
        n_around: usize,
        n_along: usize,
        radius: f64,
        length: f64,
        top: f64,
    },
    /// Flat annular yoke at height `top` joined to a hanging tube at its outer rim.
    Tshirt {
        n_around: usize,
        yoke_rings: usize,
        tube_rings: usize,
        inner_radius: f64,
        outer_radius: f64,
        length: f64,
        top: f64,
    },
}

impl Default for GarmentSpec {
    fn default() -> Self {
        GarmentSpec::Grid {
            nx: 20,
            nz: 20,
            width: 0.8,
            depth: 0.8,
            clearance: 0.03,
        }
    }
}

impl GarmentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            GarmentSpec::Grid { .. } => "grid",
            GarmentSpec::Tube { .. } => "tube",
            GarmentSpec::Tshirt { .. } => "tshirt",
        }
    }

    /// Short identifier naming the kind and resolution, e.g. `grid-20x20`.
    pub fn id(&self) -> String {
        match self {
            GarmentSpec::Grid { nx, nz, .. } => format!("grid-{nx}x{nz}"),
            GarmentSpec::Tube { n_around, n_along, .. } => format!("tube-{n_around}x{n_along}"),
            GarmentSpec::Tshirt {
                n_around,
                yoke_rings,
                tube_rings,
                ..
            } => format!("tshirt-{n_around}x{yoke_rings}x{tube_rings}"),
        }
    }

    pub fn mesh(&self, rest: &[Vec3]) -> Result<TriMesh> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("garment {name} must be positive, got {v}")))
            }
        };
        match *self {
            GarmentSpec::Grid {
                nx,
                nz,
                width,
                depth,
                clearance,
            } => {
                if nx < 2 || nz < 2 {
                    return Err(Error::Config("grid needs at least 2×2 vertices".into()));
                }
                positive("width", width)?;
                positive("depth", depth)?;
                let center = rest[HEAD_TOP] + Vec3::new(0.0, clearance, 0.0);
                Ok(grid_xz(nx, nz, width, depth, center))
            }
            GarmentSpec::Tube {
                n_around,
                n_along,
                radius,
                length,
                top,
            } => {
                if n_around < 3 || n_along < 2 {
                    return Err(Error::Config("tube needs n_around ≥ 3 and n_along ≥ 2".into()));
                }
                positive("radius", radius)?;
                positive("length", length)?;
                let rings: Vec<(f64, f64)> = (0..n_along)
                    .map(|i| (top - length + length * i as f64 / (n_along - 1) as f64, radius))
                    .collect();
                Ok(revolve(&rings, n_around))
            }
            GarmentSpec::Tshirt {
                n_around,
                yoke_rings,
                tube_rings,
                inner_radius,
                outer_radius,
                length,
                top,
            } => {
                if n_around < 3 || yoke_rings < 2 || tube_rings < 2 {
                    return Err(Error::Config("tshirt needs n_around ≥ 3 and at least 2 rings per part".into()));
                }
                positive("inner_radius", inner_radius)?;
                positive("length", length)?;
                if outer_radius <= inner_radius {
                    return Err(Error::Config("tshirt outer_radius must exceed inner_radius".into()));
                }
                // Bottom hem up to the shoulder rim, then inward across the yoke.
                let mut rings: Vec<(f64, f64)> = (0..tube_rings)
                    .map(|i| (top - length + length * i as f64 / (tube_rings - 1) as f64, outer_radius))
                    .collect();
                rings.extend((1..yoke_rings).map(|i| {
                    let r = outer_radius + (inner_radius - outer_radius) * i as f64 / (yoke_rings - 1) as f64;
                    (top, r)
                }));
                Ok(revolve(&rings, n_around))
            }
        }
    }
}

fn revolve(rings: &[(f64, f64)], n_around: usize) -> TriMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    Revolution {
        rings,
        n_around,
        start_pole: None,
        end_pole: None,
    }
    .build(&Frame::world_y(Vec3::zeros()), &mut vertices, &mut faces);
    TriMesh { vertices, faces }
}

/// `nx × nz` grid in the xz plane centered at `center`, faces oriented toward +y.
pub fn grid_xz(nx: usize, nz: usize, width: f64, depth: f64, center: Vec3) -> TriMesh {
    let mut vertices = Vec::with_capacity(nx * nz);
    for j in 0..nz {
        for i in 0..nx {
            let x = -0.5 * width + width * i as f64 / (nx - 1) as f64;
            let z = -0.5 * depth + depth * j as f64 / (nz - 1) as f64;
            vertices.push(center + Vec3::new(x, 0.0, z));
        }
    }
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (nz - 1));
    for j in 0..nz - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let (b, c, d) = (a + 1, a + nx, a + nx + 1);
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }
    TriMesh { vertices, faces }
}

/// Template mesh, its skinning weights and the rest joint positions it was rigged on.
#[derive(Clone, Debug)]
pub struct GarmentTemplate {
    pub spec: GarmentSpec,
    pub mesh: TriMesh,
    pub weights: SkinWeights,
    pub rest_joints: Vec<Vec3>,
}

pub fn generate_garment_template(spec: &GarmentSpec, weight_falloff: f64) -> Result<GarmentTemplate> {
    let skeleton = PoseSkeleton::rest(BodyShape::default().rest_skeleton())?;
    let rest_joints = skeleton.rest_positions();
    let mesh = spec.mesh(&rest_joints)?;
    mesh.validate()?;
    let weights = distance_weights(&mesh, &skeleton, SkinWeights::DEFAULT_MAX_INFLUENCES, weight_falloff)?;
    Ok(GarmentTemplate {
        spec: spec.clone(),
        mesh,
        weights,
        rest_joints,
    })
}
