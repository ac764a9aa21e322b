use std::f64::consts::FRAC_PI_2;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;

use super::*;
use crate::mesh::test_meshes::grid;

fn chain(n: usize, step: Vec3) -> Vec<Joint> {
    (0..n)
        .map(|i| Joint {
            name: format!("j{i}"),
            parent: if i == 0 { None } else { Some(i - 1) },
            rest: Isometry3::from_parts(Translation3::from(step * i as f64), UnitQuaternion::identity()),
        })
        .collect()
}

fn iso(axis_angle: Vec3, t: Vec3) -> Isometry3<f64> {
    Isometry3::new(t, axis_angle)
}

#[test]
fn identity_pose_is_exact() {
    let mesh = grid(5, 4, 0.13);
    let skel = PoseSkeleton::rest(chain(3, Vec3::new(0.2, 0.0, 0.0))).unwrap();
    let w = distance_weights(&mesh, &skel, 4, 0.1).unwrap();
    let out = dqs(&mesh, &skel, &w).unwrap();
    assert_eq!(out.vertices, mesh.vertices);
    assert_eq!(out.faces, mesh.faces);
}

#[test]
fn single_joint_rigid() {
    let mesh = grid(4, 4, 0.3);
    let rot = UnitQuaternion::from_euler_angles(0.4, 1.2, -0.7);
    let t = Vec3::new(0.3, -1.0, 2.5);
    let skel = PoseSkeleton::new(chain(1, Vec3::zeros()), vec![Isometry3::from_parts(t.into(), rot)]).unwrap();
    let w = SkinWeights::rigid(mesh.vertex_count(), 1, 0);
    let out = dqs(&mesh, &skel, &w).unwrap();
    for (a, b) in out.vertices.iter().zip(&mesh.vertices) {
        assert!((a - (rot * b + t)).norm() < 1e-9);
    }
}

#[test]
fn same_axis_half_blend_is_45_degrees() {
    let v = Vec3::new(1.0, 0.0, 0.5);
    let mesh = TriMesh {
        vertices: vec![v],
        faces: vec![],
    };
    let skel = PoseSkeleton::new(
        chain(2, Vec3::zeros()),
        vec![Isometry3::identity(), iso(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros())],
    )
    .unwrap();
    let w = SkinWeights::new(2, vec![vec![(0, 0.5), (1, 0.5)]], 4).unwrap();
    let out = dqs(&mesh, &skel, &w).unwrap();
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let expected = Vec3::new(c * v.x - c * v.y, c * v.x + c * v.y, v.z);
    assert!((out.vertices[0] - expected).norm() < 1e-6);
}

#[test]
fn sign_flip_uses_pivot() {
    // q and -q are the same rotation; without the flip they would cancel.
    let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.8);
    let a = DualQuat::from_rigid(&rot, &Vec3::zeros());
    let mut b = a;
    b.real = -b.real;
    b.dual = -b.dual;
    let blended = blend(&[(a, 0.5), (b, 0.5)]).unwrap();
    let p = Vec3::new(0.1, 0.2, 0.3);
    assert!((blended.transform_point(&p) - rot * p).norm() < 1e-12);
}

#[test]
fn vanishing_blend_is_reported() {
    let a = DualQuat::from_rigid(&UnitQuaternion::identity(), &Vec3::zeros());
    assert!(blend(&[(a, 0.0)]).is_none());
    assert!(blend(&[]).is_none());
}

#[test]
fn weight_and_skeleton_validation() {
    assert!(SkinWeights::new(2, vec![vec![(0, 0.4), (1, 0.4)]], 4).is_err());
    assert!(SkinWeights::new(2, vec![vec![(2, 1.0)]], 4).is_err());
    assert!(SkinWeights::new(2, vec![vec![(0, 1.5), (1, -0.5)]], 4).is_err());
    assert!(SkinWeights::new(5, vec![(0..5).map(|j| (j, 0.2)).collect()], 4).is_err());
    let mut joints = chain(3, Vec3::x());
    joints[1].parent = Some(2);
    assert!(PoseSkeleton::rest(joints).is_err());
    let mut joints = chain(2, Vec3::x());
    joints[0].parent = Some(0);
    assert!(PoseSkeleton::rest(joints).is_err());
}

#[test]
fn dqs_rejects_mismatched_weights() {
    let mesh = grid(2, 2, 1.0);
    let skel = PoseSkeleton::rest(chain(2, Vec3::x())).unwrap();
    assert!(dqs(&mesh, &skel, &SkinWeights::rigid(3, 2, 0)).is_err());
    assert!(dqs(&mesh, &skel, &SkinWeights::rigid(4, 3, 0)).is_err());
}

#[test]
fn weight_on_bone_axis_is_one() {
    // Bones 0->1 along +x, 1->2 far away along +y.
    let mut joints = chain(3, Vec3::zeros());
    joints[1].rest = Isometry3::translation(1.0, 0.0, 0.0);
    joints[2].rest = Isometry3::translation(1.0, 5.0, 0.0);
    let skel = PoseSkeleton::rest(joints).unwrap();
    let mesh = TriMesh {
        vertices: vec![Vec3::new(0.3, 0.0, 0.0)],
        faces: vec![],
    };
    let w = distance_weights(&mesh, &skel, 4, 0.1).unwrap();
    let top = w.rows[0].iter().find(|c| c.0 == 0).unwrap().1;
    assert!(top > 1.0 - 1e-9);
}

#[test]
fn equidistant_vertex_gets_half_weights() {
    // Joints 1 and 2 own mirror-image bones; the root's bones are farther away.
    let pair = PoseSkeleton::rest(vec![
        Joint { name: "r".into(), parent: None, rest: Isometry3::translation(0.0, -10.0, 0.0) },
        Joint { name: "a".into(), parent: Some(0), rest: Isometry3::translation(1.0, 0.0, 0.0) },
        Joint { name: "b".into(), parent: Some(0), rest: Isometry3::translation(-1.0, 0.0, 0.0) },
        Joint { name: "a2".into(), parent: Some(1), rest: Isometry3::translation(1.0, 1.0, 0.0) },
        Joint { name: "b2".into(), parent: Some(2), rest: Isometry3::translation(-1.0, 1.0, 0.0) },
    ])
    .unwrap();
    let v = TriMesh { vertices: vec![Vec3::new(0.0, 0.5, 0.0)], faces: vec![] };
    let w = distance_weights(&v, &pair, 2, 0.5).unwrap();
    assert_eq!(w.rows[0].len(), 2);
    assert_eq!((w.rows[0][0].0, w.rows[0][1].0), (1, 2));
    assert!((w.rows[0][0].1 - 0.5).abs() < 1e-12 && (w.rows[0][1].1 - 0.5).abs() < 1e-12);
}

#[test]
fn retarget_moves_template_joints_onto_posed_body() {
    let body = PoseSkeleton::from_local_rotations(
        chain(3, Vec3::new(0.0, 0.3, 0.0)),
        &[
            UnitQuaternion::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.6),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -0.4),
        ],
        Vec3::new(0.1, 0.0, 0.0),
    )
    .unwrap();
    let template_rest = vec![Vec3::new(0.0, 0.0, 0.1), Vec3::new(0.0, 0.35, 0.1), Vec3::new(0.0, 0.7, 0.1)];
    let r = body.retargeted(&template_rest).unwrap();
    for (a, b) in r.posed_positions().iter().zip(body.posed_positions()) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn rig_round_trip() {
    let skel = PoseSkeleton::from_local_rotations(
        chain(3, Vec3::new(0.0, 0.3, 0.0)),
        &[UnitQuaternion::identity(), UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3), UnitQuaternion::identity()],
        Vec3::zeros(),
    )
    .unwrap();
    let mesh = grid(3, 3, 0.2);
    let weights = distance_weights(&mesh, &skel, 4, 0.2).unwrap();
    let rig = RigFile { skeleton: skel, weights };
    let back = RigFile::from_json(&rig.to_json().unwrap()).unwrap();
    assert_eq!(back.weights, rig.weights);
    for (a, b) in back.skeleton.pose.iter().zip(&rig.skeleton.pose) {
        assert!((a.to_homogeneous() - b.to_homogeneous()).abs().max() < 1e-15);
    }
    let bad = r#"{"joints":[{"parent":null,"rest":{"rotation":[2,0,0,0],"translation":[0,0,0]}}],"weights":[]}"#;
    assert!(RigFile::from_json(bad).is_err());
    let rest_only = r#"{"joints":[{"parent":null,"rest":{"rotation":[1,0,0,0],"translation":[0,0,0]}}],"weights":[[[0,1.0]]]}"#;
    let r = RigFile::from_json(rest_only).unwrap();
    assert_eq!(r.skeleton.pose, vec![Isometry3::identity()]);
}

fn arb_vec(scale: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-scale..scale).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
}

fn arb_iso() -> impl Strategy<Value = Isometry3<f64>> {
    (arb_vec(3.0), arb_vec(2.0)).prop_map(|(r, t)| iso(r, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dqs_commutes_with_rigid_motion(
        poses in prop::collection::vec(arb_iso(), 3),
        global in arb_iso(),
        seed in 0u64..1000,
    ) {
        let mesh = grid(4, 3, 0.25);
        let skel = PoseSkeleton::new(chain(3, Vec3::new(0.3, 0.0, 0.0)), poses).unwrap();
        let w = distance_weights(&mesh, &skel, 3, 0.05 + (seed % 7) as f64 * 0.05).unwrap();
        let lhs = dqs(&mesh, &skel.transformed(&global), &w).unwrap();
        let rhs = dqs(&mesh, &skel, &w).unwrap();
        for (a, b) in lhs.vertices.iter().zip(&rhs.vertices) {
            prop_assert!((a - global.transform_point(&(*b).into()).coords).norm() < 1e-6);
        }
        // Identity pose moved by T lands on T applied to the template.
        let moved = PoseSkeleton::rest(skel.joints.clone()).unwrap().transformed(&global);
        let out = dqs(&mesh, &moved, &w).unwrap();
        for (a, b) in out.vertices.iter().zip(&mesh.vertices) {
            prop_assert!((a - global.transform_point(&(*b).into()).coords).norm() < 1e-6);
        }
    }

    #[test]
    fn distance_weight_rows_sum_to_one(
        pts in prop::collection::vec(arb_vec(2.0), 1..60),
        k in 1usize..5,
        falloff in 0.02f64..1.0,
    ) {
        let mesh = TriMesh { vertices: pts, faces: vec![] };
        let skel = PoseSkeleton::rest(chain(5, Vec3::new(0.2, 0.1, 0.0))).unwrap();
        let w = distance_weights(&mesh, &skel, k, falloff).unwrap();
        for row in &w.rows {
            prop_assert!(row.len() <= k);
            let s: f64 = row.iter().map(|c| c.1).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
