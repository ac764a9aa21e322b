//! Triangle meshes and the geometric quantities derived from them.
//!
//! Faces are counter-clockwise when seen from outside, so the face normal
//! `cross(v1 - v0, v2 - v0)` points outward.

mod adjacency;
mod obj;
mod spatial;

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adjacency::{two_ring_pairs, AdjacencyTables};
pub use obj::{obj_from_str, obj_read, obj_to_string, obj_write};
pub use spatial::{brute_force_knn, SpatialIndex};

pub type Vec3 = Vector3<f64>;

/// Squared-norm threshold (m^4) under which a face cross product counts as degenerate.
pub const DEGENERATE_CROSS_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Unit face normals; degenerate faces get the zero vector and are flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceNormals {
    pub normals: Vec<Vec3>,
    pub degenerate: Vec<bool>,
}

impl TriMesh {
    /// Builds a mesh and checks the index and finiteness invariants.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references a vertex >= {n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex")));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same topology, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<TriMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::CountMismatch(self.vertices.len(), vertices.len()));
        }
        Ok(TriMesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn translated(&self, t: Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v + t).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn face_normals(&self) -> FaceNormals {
        let mut normals = Vec::with_capacity(self.faces.len());
        let mut degenerate = Vec::with_capacity(self.faces.len());
        for f in &self.faces {
            let c = self.face_cross(f);
            let norm = c.norm();
            if norm < DEGENERATE_CROSS_NORM {
                normals.push(Vec3::zeros());
                degenerate.push(true);
            } else {
                normals.push(c / norm);
                degenerate.push(false);
            }
        }
        FaceNormals {
            normals,
            degenerate,
        }
    }

    /// Area-weighted vertex normals. Isolated vertices get the zero vector.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        // The unnormalized cross product is already twice the area times the unit normal.
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let c = self.face_cross(f);
            for &i in f {
                acc[i] += c;
            }
        }
        acc.into_iter()
            .map(|n| {
                let norm = n.norm();
                if norm > 0.0 {
                    n / norm
                } else {
                    Vec3::zeros()
                }
            })
            .collect()
    }

    fn face_cross(&self, f: &[usize; 3]) -> Vec3 {
        let v0 = self.vertices[f[0]];
        (self.vertices[f[1]] - v0).cross(&(self.vertices[f[2]] - v0))
    }

    /// Unique undirected edges, sorted, each as `(low, high)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Mean length over unique undirected edges.
    pub fn avg_edge_length(&self) -> Result<f64> {
        let edges = self.edges();
        if edges.is_empty() {
            return Err(Error::NoEdges);
        }
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum();
        Ok(total / edges.len() as f64)
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for an empty mesh.
    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Appends another mesh, offsetting its face indices.
    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }
}
