use std::sync::Arc;

use super::layers::{InitRule, ParamSource, LEAKY_GAIN};
use crate::error::{Error, Result};
use crate::mesh::{AdjacencyTables, TriMesh};
use crate::tensor::{Graph, Neighborhoods, Var};

/// Index tables for mesh convolution: one row per (vertex, neighbor) pair,
/// neighbors being the vertex itself plus its one-ring.
#[derive(Clone, Debug)]
pub struct ConvPlan {
    pub center: Arc<Vec<usize>>,
    pub neighbor: Arc<Vec<usize>>,
    /// Pair rows belonging to each vertex.
    pub groups: Arc<Neighborhoods>,
}

impl ConvPlan {
    pub fn from_one_ring(one_ring: &[Vec<usize>]) -> Self {
        let mut center = Vec::new();
        let mut neighbor = Vec::new();
        let mut groups = Vec::with_capacity(one_ring.len());
        for (i, ring) in one_ring.iter().enumerate() {
            let start = center.len();
            for j in std::iter::once(i).chain(ring.iter().copied()) {
                center.push(i);
                neighbor.push(j);
            }
            groups.push((start..center.len()).collect::<Vec<_>>());
        }
        ConvPlan {
            center: Arc::new(center),
            neighbor: Arc::new(neighbor),
            groups: Arc::new(Neighborhoods::new(&groups)),
        }
    }

    pub fn new(mesh: &TriMesh) -> Self {
        Self::from_one_ring(&AdjacencyTables::new(mesh).one_ring)
    }

    pub fn vertex_count(&self) -> usize {
        self.groups.len()
    }
}

/// Attention-weighted mesh convolution over `features ‖ positions`:
/// `y_i = b + mean_{j ∈ {i} ∪ ring(i)} Σ_m q_m(x_i, x_j) · W_m x_j` with
/// `q = softmax_m(U (x_j − x_i) + c)`.
#[allow(clippy::too_many_arguments)]
pub fn feastnet_conv(
    g: &mut Graph,
    p: &mut ParamSource,
    name: &str,
    features: Var,
    positions: Var,
    plan: &ConvPlan,
    heads: usize,
    out: usize,
) -> Result<Var> {
    let n = g.value(features).rows();
    if plan.vertex_count() != n || g.value(positions).rows() != n {
        return Err(Error::shape(
            "feastnet_conv",
            format!("{n} feature rows, {} positions, plan for {}", g.value(positions).rows(), plan.vertex_count()),
        ));
    }
    let x = g.concat_cols(&[features, positions])?;
    let d_in = g.value(x).cols();
    let u = p.get(g, &format!("{name}.u"), d_in, heads, InitRule::Uniform(1.0))?;
    let c = p.get(g, &format!("{name}.c"), 1, heads, InitRule::Zeros)?;
    let w = p.get(g, &format!("{name}.w"), d_in, heads * out, InitRule::Uniform(LEAKY_GAIN))?;
    let b = p.get(g, &format!("{name}.b"), 1, out, InitRule::Zeros)?;

    let xi = g.gather_rows(x, plan.center.clone())?;
    let xj = g.gather_rows(x, plan.neighbor.clone())?;
    let rel = g.sub(xj, xi)?;
    let logits = g.linear(rel, u, c)?;
    let q = g.softmax_rows(logits);
    // Per-vertex values are computed once and then gathered per pair.
    let v = g.matmul(x, w)?;
    let vj = g.gather_rows(v, plan.neighbor.clone())?;
    let mixed = g.head_mix(q, vj, heads)?;
    let pooled = g.gather_mean(mixed, plan.groups.clone())?;
    g.add_bias(pooled, b)
}
