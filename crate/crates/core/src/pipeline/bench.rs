//! Wall-clock comparison of network inference against the cloth simulator on
//! identical scenes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::PoseRanges;
use crate::error::{Error, Result};
use crate::model::{predict, Model};
use crate::sim::{drape, generate_body, generate_garment_template, BodyShape, GarmentSpec, SimConfig, Tessellation};
use crate::skinning::dqs;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub scenes: usize,
    pub repetitions: usize,
    pub garment: GarmentSpec,
    pub weight_falloff: f64,
    pub pose: PoseRanges,
    pub tessellation: Tessellation,
    pub sim: SimConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 0,
            scenes: 3,
            repetitions: 3,
            garment: GarmentSpec::Grid {
                nx: 45,
                nz: 45,
                width: 0.8,
                depth: 0.8,
                clearance: 0.03,
            },
            weight_falloff: 0.08,
            pose: PoseRanges::default(),
            tessellation: Tessellation::default(),
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub vertex_count: usize,
    pub scenes: usize,
    pub repetitions: usize,
    /// Median over all scenes and repetitions, seconds.
    pub predict_median_s: f64,
    pub drape_median_s: f64,
    /// `drape_median_s / predict_median_s`.
    pub speedup: f64,
    pub predict_times_s: Vec<f64>,
    pub drape_times_s: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Times `predict` (skinning plus network) and `drape` (from the same skinned
/// garment) on `cfg.scenes` random bodies, `cfg.repetitions` times each.
pub fn bench(model: &Model, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.scenes == 0 || cfg.repetitions == 0 {
        return Err(Error::Config("bench needs at least one scene and one repetition".into()));
    }
    cfg.sim.validate()?;
    let template = generate_garment_template(&cfg.garment, cfg.weight_falloff)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut predict_times = Vec::new();
    let mut drape_times = Vec::new();
    for _ in 0..cfg.scenes {
        let mut v = [0.0; 6];
        for (x, (_, lo, hi)) in v.iter_mut().zip(BodyShape::RANGES) {
            *x = rng.gen_range(lo..hi);
        }
        let pose = cfg.pose.sample(&mut rng);
        let body = generate_body(&BodyShape::from_vec(v), &pose, &cfg.tessellation)?;
        let skeleton = body.skeleton.retargeted(&template.rest_joints)?;
        let skinned = dqs(&template.mesh, &skeleton, &template.weights)?;
        let condition = (model.config.condition_dim > 0).then(|| vec![1.0; model.config.condition_dim]);
        // Warm-up run of each, untimed.
        predict(&template.mesh, &body.mesh, &skeleton, &template.weights, model, condition.clone())?;
        for _ in 0..cfg.repetitions {
            let t = Instant::now();
            let out = predict(&template.mesh, &body.mesh, &skeleton, &template.weights, model, condition.clone())?;
            predict_times.push(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
            let t = Instant::now();
            let out = drape(&skinned, &template.mesh, &body, &cfg.sim)?;
            drape_times.push(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
    }
    let p = median(&predict_times);
    let d = median(&drape_times);
    Ok(BenchReport {
        vertex_count: template.mesh.vertex_count(),
        scenes: cfg.scenes,
        repetitions: cfg.repetitions,
        predict_median_s: p,
        drape_median_s: d,
        speedup: d / p,
        predict_times_s: predict_times,
        drape_times_s: drape_times,
    })
}
