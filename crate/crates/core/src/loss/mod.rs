//! Training objective: data, interpenetration, facet-normal and bending terms.
//!
//! Every term is built on a [`Graph`] so it can be differentiated with respect
//! to the predicted vertices. The plain `*_loss` functions evaluate a term on
//! meshes directly.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{two_ring_pairs, SpatialIndex, TriMesh, Vec3, DEGENERATE_CROSS_NORM};
use crate::tensor::{Graph, Tensor, Var};

/// Normalization guard for predicted facet normals.
pub const NORMAL_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pen: f64,
    pub norm: f64,
    pub bend: f64,
    /// Gate radius for the interpenetration term, meters.
    pub d_tol: f64,
    /// Offset of each body vertex along its normal, as a fraction of the body's mean edge length.
    pub normal_extension_frac: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pen: 1.0,
            norm: 0.3,
            bend: 0.5,
            d_tol: 0.05,
            normal_extension_frac: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pen, self.norm, self.bend, self.d_tol, self.normal_extension_frac];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")))
        }
    }
}

/// Body data needed by the interpenetration term, computed once per body.
#[derive(Clone, Debug)]
pub struct BodyGeometry {
    pub normals: Vec<Vec3>,
    /// `B_i + ext · ē · N_i`.
    pub extended: Vec<Vec3>,
    pub index: SpatialIndex,
}

impl BodyGeometry {
    pub fn new(body: &TriMesh, normal_extension_frac: f64) -> Result<Self> {
        if body.vertices.is_empty() {
            return Err(Error::InvalidMesh("body has no vertices".into()));
        }
        let normals = body.vertex_normals();
        let offset = normal_extension_frac * body.avg_edge_length()?;
        let extended = body
            .vertices
            .iter()
            .zip(&normals)
            .map(|(b, n)| b + n * offset)
            .collect();
        Ok(BodyGeometry {
            normals,
            extended,
            index: SpatialIndex::new(&body.vertices),
        })
    }
}

/// Nearest body vertex for each predicted garment vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrespondenceSet {
    /// `body[j]` is paired with garment vertex `j`.
    pub body: Vec<usize>,
}

/// Ties go to the lower body index.
pub fn correspondences(body: &BodyGeometry, pred: &[Vec3]) -> CorrespondenceSet {
    CorrespondenceSet {
        body: pred.iter().map(|p| body.index.nearest(p)).collect(),
    }
}

/// Garment/body pairs whose gate `‖P_j − G_j‖ < d_tol` is open.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GatedPairs {
    pub garment: Vec<usize>,
    pub body: Vec<usize>,
}

pub fn gated_pairs(corr: &CorrespondenceSet, pred: &[Vec3], gt: &[Vec3], d_tol: f64) -> GatedPairs {
    let mut out = GatedPairs::default();
    for (j, (&i, (p, g))) in corr.body.iter().zip(pred.iter().zip(gt)).enumerate() {
        if (p - g).norm() < d_tol {
            out.garment.push(j);
            out.body.push(i);
        }
    }
    out
}

/// Ground-truth quantities reused by every step on the same sample.
#[derive(Clone, Debug)]
pub struct GarmentTarget {
    pub gt: TriMesh,
    pub gt_tensor: Tensor,
    pub gt_face_normals: Vec<Vec3>,
    pub gt_face_degenerate: Vec<bool>,
    pub pairs: Vec<(usize, usize)>,
    pub gt_pair_lengths: Tensor,
}

impl GarmentTarget {
    /// Two-ring pairs come from the ground-truth topology, which equals the template's.
    pub fn new(gt: TriMesh) -> Self {
        let pairs = two_ring_pairs(&gt);
        Self::with_pairs(gt, pairs)
    }

    pub fn with_pairs(gt: TriMesh, pairs: Vec<(usize, usize)>) -> Self {
        let fn_ = gt.face_normals();
        let lengths = pairs
            .iter()
            .map(|&(i, k)| (gt.vertices[i] - gt.vertices[k]).norm())
            .collect::<Vec<_>>();
        GarmentTarget {
            gt_tensor: Tensor::from_points(&gt.vertices),
            gt_face_normals: fn_.normals,
            gt_face_degenerate: fn_.degenerate,
            gt_pair_lengths: Tensor::from_vec(lengths.len(), 1, lengths).unwrap(),
            pairs,
            gt,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.gt.vertex_count()
    }
}

fn zero(g: &mut Graph) -> Var {
    g.input(Tensor::scalar(0.0))
}

fn check_rows(g: &Graph, pred: Var, n: usize, op: &'static str) -> Result<()> {
    let (r, c) = g.value(pred).shape();
    if r != n || c != 3 {
        return Err(Error::shape(op, format!("prediction is {r}x{c}, expected {n}x3")));
    }
    Ok(())
}

/// `(1/N) Σ ‖G_i − P_i‖²`.
pub fn vertex_term(g: &mut Graph, pred: Var, gt: &Tensor) -> Result<Var> {
    check_rows(g, pred, gt.rows(), "vertex_loss")?;
    if gt.rows() == 0 {
        return Ok(zero(g));
    }
    let target = g.input(gt.clone());
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / gt.rows() as f64))
}

/// `(1/N) Σ_gated ReLU(−N_Bᵢ · (P_j − B′_i))` over the given gated pairs.
/// `n` is the garment vertex count.
pub fn penetration_term(g: &mut Graph, pred: Var, n: usize, body: &BodyGeometry, pairs: &GatedPairs) -> Result<Var> {
    check_rows(g, pred, n, "penetration_loss")?;
    if pairs.garment.is_empty() {
        return Ok(zero(g));
    }
    let normals: Vec<Vec3> = pairs.body.iter().map(|&i| body.normals[i]).collect();
    let anchors: Vec<Vec3> = pairs.body.iter().map(|&i| body.extended[i]).collect();
    let p = g.gather_rows(pred, Arc::new(pairs.garment.clone()))?;
    let anchors = g.input(Tensor::from_points(&anchors));
    let normals = g.input(Tensor::from_points(&normals));
    let rel = g.sub(p, anchors)?;
    let s = g.row_dot(normals, rel)?;
    let neg = g.scale(s, -1.0);
    let r = g.relu(neg);
    let total = g.sum(r);
    Ok(g.scale(total, 1.0 / n as f64))
}

/// `(1/N_F) Σ (1 − F_Gᵀ F_P)²` over faces that are non-degenerate in both
/// the current prediction and the ground truth.
pub fn normal_term(g: &mut Graph, pred: Var, target: &GarmentTarget) -> Result<Var> {
    check_rows(g, pred, target.vertex_count(), "normal_loss")?;
    let pv = g.value(pred).to_points()?;
    let mut ia = Vec::new();
    let mut ib = Vec::new();
    let mut ic = Vec::new();
    let mut gt_n = Vec::new();
    for (f, face) in target.gt.faces.iter().enumerate() {
        if target.gt_face_degenerate[f] {
            continue;
        }
        let [a, b, c] = *face;
        if (pv[b] - pv[a]).cross(&(pv[c] - pv[a])).norm() < DEGENERATE_CROSS_NORM {
            continue;
        }
        ia.push(a);
        ib.push(b);
        ic.push(c);
        gt_n.push(target.gt_face_normals[f]);
    }
    if gt_n.is_empty() {
        return Ok(zero(g));
    }
    let count = gt_n.len() as f64;
    let pa = g.gather_rows(pred, Arc::new(ia))?;
    let pb = g.gather_rows(pred, Arc::new(ib))?;
    let pc = g.gather_rows(pred, Arc::new(ic))?;
    let e1 = g.sub(pb, pa)?;
    let e2 = g.sub(pc, pa)?;
    let c = g.cross(e1, e2)?;
    let n = g.row_normalize(c, NORMAL_EPS);
    let gt_n = g.input(Tensor::from_points(&gt_n));
    let dot = g.row_dot(gt_n, n)?;
    let neg = g.scale(dot, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let sq = g.square(one_minus);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / count))
}

/// `(1/|N₂|) Σ | ‖P_i − P_k‖ − ‖G_i − G_k‖ |` over the target's two-ring pairs.
pub fn bending_term(g: &mut Graph, pred: Var, target: &GarmentTarget) -> Result<Var> {
    check_rows(g, pred, target.vertex_count(), "bending_loss")?;
    if target.pairs.is_empty() {
        log::warn!("bending loss: garment has no two-ring pairs, term is zero");
        return Ok(zero(g));
    }
    let (is, ks): (Vec<usize>, Vec<usize>) = target.pairs.iter().copied().unzip();
    let pi = g.gather_rows(pred, Arc::new(is))?;
    let pk = g.gather_rows(pred, Arc::new(ks))?;
    let d = g.sub(pi, pk)?;
    let len = g.row_norm(d);
    let rest = g.input(target.gt_pair_lengths.clone());
    let diff = g.sub(len, rest)?;
    let a = g.abs(diff);
    Ok(g.mean(a))
}

/// Per-term values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vertex: f64,
    pub penetration: f64,
    pub normal: f64,
    pub bending: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.vertex, self.penetration, self.normal, self.bending, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Element-wise accumulation, used for averaging over samples.
    pub fn accumulate(&mut self, other: &LossBreakdown, w: f64) {
        self.vertex += w * other.vertex;
        self.penetration += w * other.penetration;
        self.normal += w * other.normal;
        self.bending += w * other.bending;
        self.total += w * other.total;
    }
}

/// Graph handles of each term and the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub vertex: Var,
    pub penetration: Var,
    pub normal: Var,
    pub bending: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let v = |x: Var| g.value(x).data()[0];
        LossBreakdown {
            vertex: v(self.vertex),
            penetration: v(self.penetration),
            normal: v(self.normal),
            bending: v(self.bending),
            total: v(self.total),
        }
    }
}

/// `L_vertex + λ_pen·L_pen + λ_norm·L_norm + λ_bend·L_bend` with the gate and
/// pairing fixed by the caller.
pub fn total_term(
    g: &mut Graph,
    pred: Var,
    target: &GarmentTarget,
    body: &BodyGeometry,
    pairs: &GatedPairs,
    w: &LossWeights,
) -> Result<LossVars> {
    let vertex = vertex_term(g, pred, &target.gt_tensor)?;
    let penetration = penetration_term(g, pred, target.vertex_count(), body, pairs)?;
    let normal = normal_term(g, pred, target)?;
    let bending = bending_term(g, pred, target)?;
    let a = g.scale(penetration, w.pen);
    let b = g.scale(normal, w.norm);
    let c = g.scale(bending, w.bend);
    let s = g.add(vertex, a)?;
    let s = g.add(s, b)?;
    let total = g.add(s, c)?;
    Ok(LossVars {
        vertex,
        penetration,
        normal,
        bending,
        total,
    })
}

/// Recomputes the pairing and gate from the current prediction, then builds
/// the total loss.
pub fn total_loss(
    g: &mut Graph,
    pred: Var,
    target: &GarmentTarget,
    body: &BodyGeometry,
    w: &LossWeights,
) -> Result<LossVars> {
    let pv = g.value(pred).to_points()?;
    let corr = correspondences(body, &pv);
    let pairs = gated_pairs(&corr, &pv, &target.gt.vertices, w.d_tol);
    total_term(g, pred, target, body, &pairs, w)
}

fn check_counts(pred: &TriMesh, gt: &TriMesh) -> Result<()> {
    if pred.vertex_count() != gt.vertex_count() {
        return Err(Error::CountMismatch(pred.vertex_count(), gt.vertex_count()));
    }
    Ok(())
}

fn check_faces(pred: &TriMesh, gt: &TriMesh) -> Result<()> {
    check_counts(pred, gt)?;
    if pred.faces != gt.faces {
        return Err(Error::FaceMismatch);
    }
    Ok(())
}

fn eval(pred: &TriMesh, build: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.input(Tensor::from_points(&pred.vertices));
    let out = build(&mut g, p)?;
    Ok(g.value(out).data()[0])
}

pub fn vertex_loss(pred: &TriMesh, gt: &TriMesh) -> Result<f64> {
    check_counts(pred, gt)?;
    let t = Tensor::from_points(&gt.vertices);
    eval(pred, |g, p| vertex_term(g, p, &t))
}

pub fn penetration_loss(body: &BodyGeometry, pred: &TriMesh, gt: &TriMesh, w: &LossWeights) -> Result<f64> {
    check_counts(pred, gt)?;
    let corr = correspondences(body, &pred.vertices);
    let pairs = gated_pairs(&corr, &pred.vertices, &gt.vertices, w.d_tol);
    eval(pred, |g, p| penetration_term(g, p, gt.vertex_count(), body, &pairs))
}

pub fn normal_loss(pred: &TriMesh, gt: &TriMesh) -> Result<f64> {
    check_faces(pred, gt)?;
    let target = GarmentTarget::with_pairs(gt.clone(), Vec::new());
    eval(pred, |g, p| normal_term(g, p, &target))
}

pub fn bending_loss(pred: &TriMesh, gt: &TriMesh, pairs: &[(usize, usize)]) -> Result<f64> {
    check_counts(pred, gt)?;
    if let Some(&(i, k)) = pairs.iter().find(|&&(i, k)| i.max(k) >= gt.vertex_count()) {
        return Err(Error::InvalidMesh(format!("pair ({i}, {k}) out of range")));
    }
    let target = GarmentTarget::with_pairs(gt.clone(), pairs.to_vec());
    eval(pred, |g, p| bending_term(g, p, &target))
}

/// Total loss and per-term breakdown on meshes.
pub fn loss_breakdown(pred: &TriMesh, target: &GarmentTarget, body: &BodyGeometry, w: &LossWeights) -> Result<LossBreakdown> {
    check_faces(pred, &target.gt)?;
    let mut g = Graph::new();
    let p = g.input(Tensor::from_points(&pred.vertices));
    let vars = total_loss(&mut g, p, target, body, w)?;
    Ok(vars.breakdown(&g))
}

#[cfg(test)]
mod tests;
