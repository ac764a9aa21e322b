use nalgebra::{Isometry3, Rotation3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::brute_force_knn;
use crate::mesh::test_meshes::grid;
use crate::tensor::{grad_check, ParamStore};

fn mesh(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> TriMesh {
    TriMesh::new(vertices, faces).unwrap()
}

fn unit_triangle() -> TriMesh {
    mesh(
        vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
        vec![[0, 1, 2]],
    )
}

fn points(vs: &[[f64; 3]]) -> TriMesh {
    mesh(vs.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect(), vec![])
}

#[test]
fn vertex_loss_examples() {
    let gt = points(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
    assert_eq!(vertex_loss(&gt, &gt).unwrap(), 0.0);
    let one = points(&[[0.0; 3]]);
    assert_eq!(vertex_loss(&points(&[[1.0, 0.0, 0.0]]), &one).unwrap(), 1.0);
    let pred = points(&[[1.0, 0.0, 0.0], [1.0, 3.0, 1.0]]);
    assert_eq!(vertex_loss(&pred, &gt).unwrap(), 2.5);
    assert!(matches!(vertex_loss(&one, &gt), Err(Error::CountMismatch(1, 2))));
}

#[test]
fn correspondence_examples() {
    let body = grid(4, 4, 0.5);
    let geo = BodyGeometry::new(&body, 0.2).unwrap();
    let c = correspondences(&geo, &[body.vertices[7], body.vertices[2]]);
    assert_eq!(c.body, vec![7, 2]);
    // Midpoint between vertices 0 and 1 ties; the lower index wins.
    let c = correspondences(&geo, &[Vec3::new(0.25, 0.0, 0.3)]);
    assert_eq!(c.body, vec![0]);
}

#[test]
fn correspondences_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mut body = grid(6, 5, 0.1);
        for v in &mut body.vertices {
            v.z = rng.gen_range(-0.05..0.05);
        }
        let geo = BodyGeometry::new(&body, 0.2).unwrap();
        let pred: Vec<Vec3> = (0..40)
            .map(|_| Vec3::new(rng.gen_range(-0.2..0.7), rng.gen_range(-0.2..0.6), rng.gen_range(-0.3..0.3)))
            .collect();
        let c = correspondences(&geo, &pred);
        for (p, &i) in pred.iter().zip(&c.body) {
            assert_eq!(brute_force_knn(&body.vertices, p, 1)[0], i);
        }
    }
}

/// Flat unit triangle body: every vertex normal is +z and B'_0 = (0, 0, 0.2ē).
fn flat_body() -> (TriMesh, BodyGeometry, f64) {
    let body = unit_triangle();
    let e = (2.0 + 2f64.sqrt()) / 3.0;
    let geo = BodyGeometry::new(&body, 0.2).unwrap();
    (body, geo, 0.2 * e)
}

#[test]
fn penetration_examples() {
    let (_, geo, lift) = flat_body();
    assert!((geo.extended[0].z - lift).abs() < 1e-15);
    let w = LossWeights::default();
    let far = [Vec3::new(-3.0, -3.0, 5.0), Vec3::new(-3.0, -2.0, 5.0), Vec3::new(-2.0, -3.0, 5.0)];
    let with = |p0: Vec3| points(&[[p0.x, p0.y, p0.z], [far[0].x, far[0].y, far[0].z], [far[1].x, far[1].y, far[1].z], [far[2].x, far[2].y, far[2].z]]);

    // On the extended tangent plane.
    let on = with(Vec3::new(0.0, 0.0, lift));
    assert_eq!(penetration_loss(&geo, &on, &on, &w).unwrap(), 0.0);

    // 0.1 below B' along the normal, gate open.
    let below = with(Vec3::new(0.0, 0.0, lift - 0.1));
    let l = penetration_loss(&geo, &below, &below, &w).unwrap();
    assert!((l - 0.1 / 4.0).abs() < 1e-12, "{l}");

    // Deep inside but the ground truth is farther than d_tol.
    let deep = with(Vec3::new(0.0, 0.0, -0.5));
    let gt = with(Vec3::new(w.d_tol, 0.0, -0.5));
    assert_eq!(penetration_loss(&geo, &deep, &gt, &w).unwrap(), 0.0);
}

#[test]
fn normal_loss_examples() {
    let gt = unit_triangle();
    assert_eq!(normal_loss(&gt, &gt).unwrap(), 0.0);
    let flipped = mesh(
        vec![Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 0.0, 0.0)],
        vec![[0, 1, 2]],
    );
    assert!((normal_loss(&flipped, &gt).unwrap() - 4.0).abs() < 1e-12);
    let ortho = mesh(
        vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)],
        vec![[0, 1, 2]],
    );
    assert!((normal_loss(&ortho, &gt).unwrap() - 1.0).abs() < 1e-12);
    // A collapsed predicted face is skipped entirely.
    let collapsed = mesh(vec![Vec3::zeros(); 3], vec![[0, 1, 2]]);
    assert_eq!(normal_loss(&collapsed, &gt).unwrap(), 0.0);
}

#[test]
fn bending_loss_examples() {
    let gt = points(&[[0.0; 3], [2.0, 0.0, 0.0]]);
    let pred = points(&[[0.0; 3], [0.0, 3.0, 0.0]]);
    assert_eq!(bending_loss(&gt, &gt, &[(0, 1)]).unwrap(), 0.0);
    assert_eq!(bending_loss(&pred, &gt, &[(0, 1)]).unwrap(), 1.0);
    let moved = pred.translated(Vec3::new(0.3, -2.0, 7.0));
    assert!((bending_loss(&moved, &gt, &[(0, 1)]).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(bending_loss(&pred, &gt, &[]).unwrap(), 0.0);
    assert!(bending_loss(&pred, &gt, &[(0, 2)]).is_err());
}

/// Garment sheet hovering well above a flat body.
fn exterior_scene() -> (TriMesh, GarmentTarget, BodyGeometry) {
    let body = grid(6, 5, 0.2);
    let geo = BodyGeometry::new(&body, 0.2).unwrap();
    let gt = grid(4, 3, 0.15).translated(Vec3::new(0.1, 0.1, 0.5));
    (body, GarmentTarget::new(gt), geo)
}

#[test]
fn total_loss_examples() {
    let (_, target, geo) = exterior_scene();
    let w = LossWeights::default();
    let b = loss_breakdown(&target.gt, &target, &geo, &w).unwrap();
    assert_eq!(b, LossBreakdown::default());

    let shifted = target.gt.translated(Vec3::new(0.01, 0.0, 0.02));
    let b = loss_breakdown(&shifted, &target, &geo, &w).unwrap();
    assert!(b.vertex > 0.0);
    assert_eq!((b.penetration, b.normal), (0.0, 0.0));
    assert!(b.bending < 1e-15);
    assert!((b.total - b.vertex).abs() < 1e-15);
}

/// 12-vertex garment straddling a bumpy 30-vertex body, ground truth within
/// the gate for most vertices so every term is active.
fn grad_scene(seed: u64) -> (ParamStore, GarmentTarget, BodyGeometry, GatedPairs) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut body = grid(6, 5, 0.1);
    for v in &mut body.vertices {
        v.z = rng.gen_range(-0.02..0.02);
    }
    let geo = BodyGeometry::new(&body, 0.2).unwrap();
    let mut gt = grid(4, 3, 0.12).translated(Vec3::new(0.07, 0.08, 0.0));
    for v in &mut gt.vertices {
        v.z = rng.gen_range(-0.03..0.05);
    }
    let pred: Vec<Vec3> = gt
        .vertices
        .iter()
        .map(|v| v + Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.03..0.03)))
        .collect();
    let corr = correspondences(&geo, &pred);
    let pairs = gated_pairs(&corr, &pred, &gt.vertices, 0.05);
    let mut store = ParamStore::new();
    store.insert("pred", Tensor::from_points(&pred));
    (store, GarmentTarget::new(gt), geo, pairs)
}

#[test]
fn every_term_matches_finite_differences() {
    let w = LossWeights::default();
    let mut active_pen = 0;
    for seed in 0..10 {
        let (store, target, geo, pairs) = grad_scene(seed);
        let n = target.vertex_count();
        type Build<'a> = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var> + 'a>;
        let builds: Vec<(&str, Build)> = vec![
            ("vertex", Box::new(|g, s| { let p = g.param(s, "pred")?; vertex_term(g, p, &target.gt_tensor) })),
            ("penetration", Box::new(|g, s| { let p = g.param(s, "pred")?; penetration_term(g, p, n, &geo, &pairs) })),
            ("normal", Box::new(|g, s| { let p = g.param(s, "pred")?; normal_term(g, p, &target) })),
            ("bending", Box::new(|g, s| { let p = g.param(s, "pred")?; bending_term(g, p, &target) })),
            ("total", Box::new(|g, s| { let p = g.param(s, "pred")?; Ok(total_term(g, p, &target, &geo, &pairs, &w)?.total) })),
        ];
        for (name, build) in &builds {
            let report = grad_check(&store, build, 1e-6).unwrap();
            assert!(report.passes(1e-4), "{name} seed {seed}: {:?}", report.entries);
        }
        let mut g = Graph::new();
        let p = g.param(&store, "pred").unwrap();
        let pen = penetration_term(&mut g, p, n, &geo, &pairs).unwrap();
        if g.value(pen).data()[0] > 0.0 {
            active_pen += 1;
        }
    }
    assert!(active_pen >= 5, "penetration active in only {active_pen} scenes");
}

fn arb_rigid() -> impl Strategy<Value = Isometry3<f64>> {
    (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-2.0f64..2.0))
        .prop_map(|(r, t)| Isometry3::new(Vec3::new(t[0], t[1], t[2]), Vec3::new(r[0], r[1], r[2])))
}

fn moved(m: &TriMesh, t: &Isometry3<f64>) -> TriMesh {
    m.with_vertices(m.vertices.iter().map(|v| t.transform_point(&(*v).into()).coords).collect())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn terms_nonnegative_and_invariant(seed in 0u64..10_000, t in arb_rigid()) {
        let (store, target, geo, _) = grad_scene(seed);
        let pred = target.gt.with_vertices(store.get("pred").unwrap().to_points().unwrap()).unwrap();
        let w = LossWeights::default();
        let b = loss_breakdown(&pred, &target, &geo, &w).unwrap();
        prop_assert!(b.vertex >= 0.0 && b.penetration >= 0.0 && b.normal >= 0.0 && b.bending >= 0.0);

        let (p2, g2) = (moved(&pred, &t), moved(&target.gt, &t));
        let v1 = vertex_loss(&pred, &target.gt).unwrap();
        let v2 = vertex_loss(&p2, &g2).unwrap();
        prop_assert!((v1 - v2).abs() <= 1e-12 * (1.0 + v1));
        let b1 = bending_loss(&pred, &target.gt, &target.pairs).unwrap();
        let b2 = bending_loss(&p2, &g2, &target.pairs).unwrap();
        prop_assert!((b1 - b2).abs() <= 1e-12 * (1.0 + b1));
        let rot = Isometry3::from_parts(Vec3::zeros().into(), t.rotation);
        let n1 = normal_loss(&pred, &target.gt).unwrap();
        let n2 = normal_loss(&moved(&pred, &rot), &moved(&target.gt, &rot)).unwrap();
        prop_assert!((n1 - n2).abs() <= 1e-10);
    }

    #[test]
    fn penetration_monotone_along_inward_normal(seed in 0u64..10_000, steps in prop::collection::vec(0.0f64..0.02, 1..8)) {
        let (store, target, geo, pairs) = grad_scene(seed);
        prop_assume!(!pairs.garment.is_empty());
        let n = target.vertex_count();
        let mut pts = store.get("pred").unwrap().to_points().unwrap();
        let (j, i) = (pairs.garment[0], pairs.body[0]);
        let eval = |pts: &[Vec3]| {
            let mut g = Graph::new();
            let p = g.input(Tensor::from_points(pts));
            let v = penetration_term(&mut g, p, n, &geo, &pairs).unwrap();
            g.value(v).data()[0]
        };
        let mut last = eval(&pts);
        for s in steps {
            pts[j] -= geo.normals[i] * s;
            let now = eval(&pts);
            prop_assert!(now >= last);
            last = now;
        }
    }
}

#[test]
fn rotation_invariance_of_normal_term_example() {
    let gt = grid(3, 3, 0.5);
    let mut pred = gt.clone();
    pred.vertices[4].z = 0.2;
    let r = Rotation3::from_euler_angles(0.3, 0.2, 0.1);
    let rot = |m: &TriMesh| m.with_vertices(m.vertices.iter().map(|v| r * v).collect()).unwrap();
    let a = normal_loss(&pred, &gt).unwrap();
    let b = normal_loss(&rot(&pred), &rot(&gt)).unwrap();
    assert!(a > 0.0 && (a - b).abs() < 1e-12);
}
