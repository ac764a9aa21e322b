//! Evaluation measures: vertex distance, facet-normal angle, normalized L2 and
//! precision curves.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

fn check_counts(pred: &TriMesh, gt: &TriMesh) -> Result<()> {
    if pred.vertex_count() != gt.vertex_count() {
        return Err(Error::CountMismatch(pred.vertex_count(), gt.vertex_count()));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `‖G_i − P_i‖` per vertex.
pub fn vertex_distances(pred: &TriMesh, gt: &TriMesh) -> Result<Vec<f64>> {
    check_counts(pred, gt)?;
    Ok(pred.vertices.iter().zip(&gt.vertices).map(|(p, g)| (g - p).norm()).collect())
}

/// Mean vertex-to-vertex distance, meters.
pub fn e_dist(pred: &TriMesh, gt: &TriMesh) -> Result<f64> {
    Ok(mean(&vertex_distances(pred, gt)?))
}

/// Angle in degrees between corresponding facet normals, skipping faces that
/// are degenerate in either mesh.
pub fn normal_angles(pred: &TriMesh, gt: &TriMesh) -> Result<Vec<f64>> {
    check_counts(pred, gt)?;
    if pred.faces != gt.faces {
        return Err(Error::FaceMismatch);
    }
    let (a, b) = (pred.face_normals(), gt.face_normals());
    Ok(a.normals
        .iter()
        .zip(&b.normals)
        .zip(a.degenerate.iter().zip(&b.degenerate))
        .filter(|(_, (da, db))| !**da && !**db)
        .map(|((na, nb), _)| na.dot(nb).clamp(-1.0, 1.0).acos().to_degrees())
        .collect())
}

/// Mean facet-normal angular deviation, degrees.
pub fn e_norm(pred: &TriMesh, gt: &TriMesh) -> Result<f64> {
    Ok(mean(&normal_angles(pred, gt)?))
}

/// `100·‖vec(G) − vec(P)‖ / ‖vec(G)‖` after mapping both meshes per axis
/// through the ground truth's bounding box onto `[0, 1]`. Axes along which the
/// ground truth is flat are only shifted.
pub fn normalized_l2_percent(pred: &TriMesh, gt: &TriMesh) -> Result<f64> {
    check_counts(pred, gt)?;
    let (lo, hi) = gt.bounding_box().ok_or(Error::ZeroNorm)?;
    let ext = (hi - lo).map(|e| if e > 0.0 { e } else { 1.0 });
    let norm = |v: &Vec3| (v - lo).component_div(&ext);
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, g) in pred.vertices.iter().zip(&gt.vertices) {
        let (p, g) = (norm(p), norm(g));
        num += (g - p).norm_squared();
        den += g.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(100.0 * num.sqrt() / den.sqrt())
}

/// Fraction of `errors` strictly below each threshold. An empty error list
/// gives 1 everywhere.
pub fn precision_curve(errors: &[f64], thresholds: &[f64]) -> Vec<f64> {
    if errors.is_empty() {
        return vec![1.0; thresholds.len()];
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e < t) as f64 / n)
        .collect()
}

/// Distance thresholds 0 to 5 cm in 2.5 mm steps, meters.
pub fn default_distance_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.0025).collect()
}

/// Angle thresholds 0° to 45° in 1.5° steps.
pub fn default_angle_thresholds() -> Vec<f64> {
    (0..=30).map(|i| i as f64 * 1.5).collect()
}

/// `(threshold, fraction)` rows.
pub type Curve = Vec<(f64, f64)>;

pub fn curve(errors: &[f64], thresholds: &[f64]) -> Curve {
    thresholds.iter().copied().zip(precision_curve(errors, thresholds)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Meters.
    pub e_dist: f64,
    /// Degrees.
    pub e_norm: f64,
    pub normalized_l2_percent: f64,
    /// Fraction of vertices with distance error below each threshold (meters).
    pub precision_curve: Curve,
    /// Fraction of facets with angular error below each threshold (degrees).
    pub normal_precision_curve: Curve,
}

impl EvalReport {
    pub fn compute(pred: &TriMesh, gt: &TriMesh) -> Result<EvalReport> {
        let d = vertex_distances(pred, gt)?;
        let a = normal_angles(pred, gt)?;
        Ok(EvalReport {
            e_dist: mean(&d),
            e_norm: mean(&a),
            normalized_l2_percent: normalized_l2_percent(pred, gt)?,
            precision_curve: curve(&d, &default_distance_thresholds()),
            normal_precision_curve: curve(&a, &default_angle_thresholds()),
        })
    }
}

/// Writes `threshold,fraction` rows with a header line.
pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("threshold,fraction\n");
    for (t, f) in curve {
        out.push_str(&format!("{t},{f}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
