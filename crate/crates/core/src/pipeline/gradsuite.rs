//! Registry of finite-difference gradient checks over every differentiable
//! building block: tape primitives, the mesh convolution, the spatial
//! transformer and each loss term.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{
    bending_term, correspondences, gated_pairs, normal_term, penetration_term, total_loss, vertex_term, BodyGeometry,
    GarmentTarget, GatedPairs, LossWeights,
};
use crate::mesh::{TriMesh, Vec3};
use crate::model::{feastnet_conv, stn, ConvPlan, ModelConfig, ParamSource, Variant};
use crate::sim::grid_xz;
use crate::tensor::{grad_check, Graph, Neighborhoods, ParamStore, Tensor, Var};

/// Central-difference step used by the suite.
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Projects any output onto a scalar with fixed random weights.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(x).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = g.input(rand_tensor(&mut rng, r, c));
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

type OpBuild = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Send + Sync>;

fn op_case(shapes: &[(usize, usize)], build: &OpBuild, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        store.insert(format!("x{i}"), rand_tensor(&mut rng, r, c));
    }
    let report = grad_check(
        &store,
        |g, s| {
            let vars: Vec<Var> = (0..shapes.len()).map(|i| g.param(s, &format!("x{i}"))).collect::<Result<_>>()?;
            let out = build(g, &vars)?;
            weighted_sum(g, out, seed)
        },
        GRAD_STEP,
    )?;
    Ok(report.max_rel_err())
}

fn op_table() -> Vec<(&'static str, Vec<(usize, usize)>, OpBuild)> {
    let idx = Arc::new(vec![3, 0, 0, 2, 4]);
    let lists = Arc::new(Neighborhoods::new(&[vec![0, 1, 2], vec![4], vec![], vec![1, 3, 4, 0]]));
    let lists2 = lists.clone();
    vec![
        ("matmul", vec![(4, 3), (3, 5)], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("add_bias", vec![(4, 3), (1, 3)], Box::new(|g, v| g.add_bias(v[0], v[1]))),
        ("linear", vec![(5, 3), (3, 4), (1, 4)], Box::new(|g, v| g.linear(v[0], v[1], v[2]))),
        ("add", vec![(3, 4), (3, 4)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![(3, 4), (3, 4)], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![(3, 4), (3, 4)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![(3, 4)], Box::new(|g, v| Ok(g.scale(v[0], -2.5)))),
        ("add_scalar", vec![(3, 4)], Box::new(|g, v| Ok(g.add_scalar(v[0], 0.7)))),
        ("leaky_relu", vec![(6, 5)], Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.1)))),
        ("relu", vec![(6, 5)], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("abs", vec![(3, 4)], Box::new(|g, v| Ok(g.abs(v[0])))),
        ("square", vec![(3, 4)], Box::new(|g, v| Ok(g.square(v[0])))),
        ("concat_cols", vec![(4, 2), (4, 3)], Box::new(|g, v| g.concat_cols(&[v[0], v[1]]))),
        ("row_max_pool", vec![(7, 4)], Box::new(|g, v| g.row_max_pool(v[0]))),
        ("row_avg_pool", vec![(7, 4)], Box::new(|g, v| g.row_avg_pool(v[0]))),
        ("repeat_rows", vec![(1, 4)], Box::new(|g, v| g.repeat_rows(v[0], 5))),
        ("softmax_rows", vec![(4, 6)], Box::new(|g, v| Ok(g.softmax_rows(v[0])))),
        ("reshape", vec![(1, 9)], Box::new(|g, v| g.reshape(v[0], 3, 3))),
        ("gather_rows", vec![(5, 3)], Box::new(move |g, v| g.gather_rows(v[0], idx.clone()))),
        ("gather_mean", vec![(5, 3)], Box::new(move |g, v| g.gather_mean(v[0], lists.clone()))),
        ("gather_max", vec![(5, 3)], Box::new(move |g, v| g.gather_max(v[0], &lists2))),
        ("head_mix", vec![(6, 3), (6, 12)], Box::new(|g, v| g.head_mix(v[0], v[1], 3))),
        ("sum", vec![(3, 3)], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("mean", vec![(3, 3)], Box::new(|g, v| Ok(g.mean(v[0])))),
        ("row_norm", vec![(5, 3)], Box::new(|g, v| Ok(g.row_norm(v[0])))),
        ("row_dot", vec![(5, 3), (5, 3)], Box::new(|g, v| g.row_dot(v[0], v[1]))),
        ("cross", vec![(5, 3), (5, 3)], Box::new(|g, v| g.cross(v[0], v[1]))),
        ("row_normalize", vec![(5, 3)], Box::new(|g, v| Ok(g.row_normalize(v[0], 1e-12)))),
    ]
}

/// Declares a sub-network's parameters, then randomizes all of them so
/// zero-initialized layers are exercised too.
fn init_store(seed: u64, build: impl Fn(&mut Graph, &mut ParamSource) -> Result<Var>) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    {
        let mut g = Graph::new();
        build(&mut g, &mut ParamSource::Init { store: &mut store, rng: &mut rng })?;
    }
    store.randomize(0.5, &mut rng);
    Ok(store)
}

fn conv_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = grid_xz(4, 3, 0.9, 0.6, Vec3::zeros());
    for v in &mut mesh.vertices {
        v.y = rng.gen_range(-0.1..0.1);
    }
    let plan = ConvPlan::new(&mesh);
    let feats = rand_tensor(&mut rng, mesh.vertex_count(), 3);
    let pos = Tensor::from_points(&mesh.vertices);
    let mut store = init_store(seed, |g, p| {
        let f = g.input(feats.clone());
        let x = g.input(pos.clone());
        feastnet_conv(g, p, "c", f, x, &plan, 3, 2)
    })?;
    store.insert("f", feats.clone());
    let report = grad_check(
        &store,
        |g, s| {
            let f = g.param(s, "f")?;
            let x = g.input(pos.clone());
            let y = feastnet_conv(g, &mut ParamSource::Use(s), "c", f, x, &plan, 3, 2)?;
            weighted_sum(g, y, seed)
        },
        GRAD_STEP,
    )?;
    Ok(report.max_rel_err())
}

fn stn_case(seed: u64) -> Result<f64> {
    let cfg = ModelConfig::tiny(Variant::Global);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, 5, 3);
    let mut store = init_store(seed, |g, p| {
        let xv = g.input(x.clone());
        stn(g, p, "s", xv, &cfg)
    })?;
    store.insert("x", x);
    let report = grad_check(
        &store,
        |g, s| {
            let xv = g.param(s, "x")?;
            let y = stn(g, &mut ParamSource::Use(s), "s", xv, &cfg)?;
            weighted_sum(g, y, seed)
        },
        GRAD_STEP,
    )?;
    Ok(report.max_rel_err())
}

struct LossScene {
    store: ParamStore,
    target: GarmentTarget,
    body: BodyGeometry,
    pairs: GatedPairs,
}

/// 12-vertex garment over a bumpy 30-vertex body sheet (normals +y), with
/// most vertices inside the penetration gate.
fn loss_scene(seed: u64) -> Result<LossScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut body = grid_xz(6, 5, 0.5, 0.4, Vec3::new(0.25, 0.0, 0.2));
    for v in &mut body.vertices {
        v.y = rng.gen_range(-0.02..0.02);
    }
    let geo = BodyGeometry::new(&body, 0.2)?;
    let mut gt: TriMesh = grid_xz(4, 3, 0.36, 0.24, Vec3::new(0.25, 0.0, 0.2));
    for v in &mut gt.vertices {
        v.y = rng.gen_range(-0.03..0.05);
    }
    let pred: Vec<Vec3> = gt
        .vertices
        .iter()
        .map(|v| v + Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.03..0.03), rng.gen_range(-0.02..0.02)))
        .collect();
    let corr = correspondences(&geo, &pred);
    let pairs = gated_pairs(&corr, &pred, &gt.vertices, LossWeights::default().d_tol);
    let mut store = ParamStore::new();
    store.insert("pred", Tensor::from_points(&pred));
    Ok(LossScene {
        store,
        target: GarmentTarget::new(gt),
        body: geo,
        pairs,
    })
}

fn loss_case(term: &str, seed: u64) -> Result<f64> {
    let s = loss_scene(seed)?;
    let n = s.target.vertex_count();
    let w = LossWeights::default();
    let report = grad_check(
        &s.store,
        |g, st| {
            let p = g.param(st, "pred")?;
            match term {
                "loss.vertex" => vertex_term(g, p, &s.target.gt_tensor),
                "loss.penetration" => penetration_term(g, p, n, &s.body, &s.pairs),
                "loss.normal" => normal_term(g, p, &s.target),
                "loss.bending" => bending_term(g, p, &s.target),
                _ => Ok(total_loss(g, p, &s.target, &s.body, &w)?.total),
            }
        },
        GRAD_STEP,
    )?;
    Ok(report.max_rel_err())
}

/// Names of every registered check, in run order.
pub fn suite_names() -> Vec<String> {
    let mut names: Vec<String> = op_table().into_iter().map(|(n, _, _)| n.to_string()).collect();
    names.extend(
        ["feastnet_conv", "stn", "loss.vertex", "loss.penetration", "loss.normal", "loss.bending", "loss.total"]
            .map(String::from),
    );
    names
}

/// Runs every registered check on `instances` random instances each.
pub fn gradient_suite(instances: usize, seed: u64, tolerance: f64) -> Result<Vec<SuiteRow>> {
    let row = |name: &str, errs: Vec<f64>| {
        let max = errs.iter().copied().fold(0.0, f64::max);
        SuiteRow {
            name: name.to_string(),
            instances: errs.len(),
            max_rel_err: max,
            pass: errs.iter().all(|e| *e < tolerance),
        }
    };
    let seeds = |offset: u64| (0..instances as u64).map(move |i| seed.wrapping_mul(1_000_003).wrapping_add(offset * 1000 + i));
    let mut rows = Vec::new();
    for (k, (name, shapes, build)) in op_table().into_iter().enumerate() {
        let errs = seeds(k as u64).map(|s| op_case(&shapes, &build, s)).collect::<Result<_>>()?;
        rows.push(row(name, errs));
    }
    rows.push(row("feastnet_conv", seeds(100).map(conv_case).collect::<Result<_>>()?));
    rows.push(row("stn", seeds(101).map(stn_case).collect::<Result<_>>()?));
    for (k, term) in ["loss.vertex", "loss.penetration", "loss.normal", "loss.bending", "loss.total"]
        .into_iter()
        .enumerate()
    {
        let errs = seeds(200 + k as u64).map(|s| loss_case(term, s)).collect::<Result<_>>()?;
        rows.push(row(term, errs));
    }
    Ok(rows)
}
