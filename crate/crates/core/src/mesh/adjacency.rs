use std::collections::BTreeSet;

use super::TriMesh;

/// Edge-graph neighborhoods of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyTables {
    /// Sorted edge-connected neighbors of each vertex.
    pub one_ring: Vec<Vec<usize>>,
    /// Pairs `(i, k)` with `i < k` at edge-graph distance exactly two.
    pub two_ring_pairs: Vec<(usize, usize)>,
}

impl AdjacencyTables {
    pub fn new(mesh: &TriMesh) -> Self {
        let one_ring = one_ring(mesh);
        let two_ring_pairs = pairs_from_rings(&one_ring);
        AdjacencyTables {
            one_ring,
            two_ring_pairs,
        }
    }
}

pub(crate) fn one_ring(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let mut sets = vec![BTreeSet::new(); mesh.vertex_count()];
    for (a, b) in mesh.edges() {
        sets[a].insert(b);
        sets[b].insert(a);
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

fn pairs_from_rings(rings: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (i, ring) in rings.iter().enumerate() {
        for &j in ring {
            for &k in &rings[j] {
                if k > i && rings[i].binary_search(&k).is_err() {
                    out.insert((i, k));
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Vertex pairs whose shortest edge path has exactly two edges, as `(low, high)`.
pub fn two_ring_pairs(mesh: &TriMesh) -> Vec<(usize, usize)> {
    pairs_from_rings(&one_ring(mesh))
}
