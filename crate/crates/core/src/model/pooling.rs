use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mesh::{SpatialIndex, Vec3};
use crate::tensor::{Graph, Neighborhoods, Var};

/// Body downsampling and garment-to-seed neighborhoods, fixed for one
/// garment/body pair.
#[derive(Clone, Debug)]
pub struct LocalPoolingPlan {
    /// Body point chosen as each seed.
    pub seeds: Vec<usize>,
    pub seed_positions: Vec<Vec3>,
    /// Body points averaged into each seed.
    pub seed_groups: Arc<Neighborhoods>,
    /// Seeds max-pooled into each garment vertex.
    pub garment_groups: Arc<Neighborhoods>,
}

/// Seeds are every `downscale`-th entry of a seeded shuffle of the body points.
pub fn select_seeds(body_count: usize, downscale: usize, shuffle_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..body_count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    order.into_iter().step_by(downscale.max(1)).collect()
}

impl LocalPoolingPlan {
    pub fn new(
        garment: &[Vec3],
        body: &[Vec3],
        downscale: usize,
        pool_neighbors: usize,
        knn_k: usize,
        shuffle_seed: u64,
    ) -> Result<Self> {
        let seeds = select_seeds(body.len(), downscale, shuffle_seed);
        Self::with_seeds(garment, body, seeds, pool_neighbors, knn_k)
    }

    pub fn with_seeds(
        garment: &[Vec3],
        body: &[Vec3],
        seeds: Vec<usize>,
        pool_neighbors: usize,
        knn_k: usize,
    ) -> Result<Self> {
        let body_index = SpatialIndex::new(body);
        let k_pool = pool_neighbors.min(body.len());
        let mut groups = Vec::with_capacity(seeds.len());
        let mut seed_positions = Vec::with_capacity(seeds.len());
        for &s in &seeds {
            let nn = body_index.knn(&body[s], k_pool)?;
            let mean = nn.iter().fold(Vec3::zeros(), |acc, &i| acc + body[i]) / nn.len() as f64;
            seed_positions.push(mean);
            groups.push(nn);
        }
        let seed_index = SpatialIndex::new(&seed_positions);
        let k = knn_k.min(seeds.len());
        let garment_groups = garment
            .iter()
            .map(|v| seed_index.knn(v, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(LocalPoolingPlan {
            seeds,
            seed_positions,
            seed_groups: Arc::new(Neighborhoods::new(&groups)),
            garment_groups: Arc::new(Neighborhoods::new(&garment_groups)),
        })
    }
}

/// Averages point-wise body features into seeds, then max-pools the nearest
/// seeds' features into every garment vertex.
pub fn local_body_pooling(g: &mut Graph, plan: &LocalPoolingPlan, body_pointwise: Var) -> Result<Var> {
    let seeds = g.gather_mean(body_pointwise, plan.seed_groups.clone())?;
    g.gather_max(seeds, &plan.garment_groups)
}
