#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use seqgrasp_core::energy::SceneObject;
use seqgrasp_core::geometry::TriMesh;
use seqgrasp_core::hand::{builtin, GraspConfig, HandSpec};
use seqgrasp_core::nalgebra::{Rotation3, Unit, Vector3};
use seqgrasp_core::rotation::matrix_to_rot6d;

pub fn toy_hand() -> Arc<HandSpec> {
    Arc::new(builtin::toy_gripper())
}

pub fn reference_hand() -> Arc<HandSpec> {
    Arc::new(builtin::reference_hand())
}

pub fn sphere(id: &str, radius: f64, resolution: usize) -> SceneObject {
    SceneObject::build(id, TriMesh::icosphere(radius, 3), resolution, 1).unwrap()
}

pub fn cube(id: &str, half: f64, resolution: usize) -> SceneObject {
    SceneObject::build(id, TriMesh::cuboid(Vector3::new(half, half, half)), resolution, 2).unwrap()
}

/// Four small objects sized for the reference hand.
pub fn small_objects() -> Vec<SceneObject> {
    vec![
        SceneObject::build("ball", TriMesh::icosphere(0.022, 3), 64, 1).unwrap(),
        SceneObject::build("cube", TriMesh::cuboid(Vector3::new(0.018, 0.018, 0.018)), 64, 2).unwrap(),
        SceneObject::build("marble", TriMesh::icosphere(0.018, 3), 64, 3).unwrap(),
        SceneObject::build("block", TriMesh::cuboid(Vector3::new(0.015, 0.02, 0.015)), 64, 4).unwrap(),
    ]
}

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(random_unit(rng)), rng.random_range(0.0..std::f64::consts::PI))
}

/// A grasp with the palm `distance` from the origin, facing it up to a tilt,
/// and joints drawn slightly beyond their limits.
pub fn random_grasp<R: Rng + ?Sized>(spec: &HandSpec, distance: f64, rng: &mut R) -> GraspConfig {
    let dir = random_unit(rng);
    let p = dir * distance;
    let facing = Rotation3::rotation_between(&spec.approach_axis, &(-dir)).unwrap_or_else(Rotation3::identity);
    let tilt = Rotation3::from_axis_angle(&Unit::new_normalize(random_unit(rng)), rng.random_range(0.0..0.4));
    let roll = Rotation3::from_axis_angle(&Unit::new_normalize(-dir), rng.random_range(0.0..std::f64::consts::TAU));
    let r = roll * tilt * facing;
    let mut r6 = matrix_to_rot6d(r.matrix());
    // non-orthonormal 6D input exercises the Gram-Schmidt Jacobian
    r6.iter_mut().for_each(|x| *x *= rng.random_range(0.8..1.3));
    let joints = spec
        .joints
        .iter()
        .map(|j| rng.random_range(j.lower - 0.1..j.upper + 0.1))
        .collect();
    GraspConfig::new(p, r6, joints)
}

use seqgrasp_core::energy::{evaluate, EnergyWeights, SceneState};
use seqgrasp_core::hand::OppositionSpace;

/// Largest deviation between the analytic gradient and central differences,
/// relative to the largest analytic component, over components whose
/// stencil stays on the same smooth piece. Returns `(error, compared)`.
pub fn gradient_error(
    scene: &SceneState,
    os: &OppositionSpace,
    pair: (usize, usize),
    g: &GraspConfig,
    w: &EnergyWeights,
    step: f64,
) -> (f64, usize) {
    let center = evaluate(scene, os, pair, g, true).unwrap();
    let analytic = center.gradient(w);
    let x = g.to_vec();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut compared = 0;
    for i in 0..x.len() {
        let shifted = |d: f64| {
            let mut y = x.clone();
            y[i] += d;
            evaluate(scene, os, pair, &GraspConfig::from_slice(&y).unwrap(), false).unwrap()
        };
        let (hi, lo) = (shifted(step), shifted(-step));
        if hi.signature != center.signature || lo.signature != center.signature {
            continue;
        }
        let fd = (hi.total(w) - lo.total(w)) / (2.0 * step);
        worst = worst.max((fd - analytic[i]).abs());
        scale = scale.max(analytic[i].abs());
        compared += 1;
    }
    (worst / scale.max(1e-9), compared)
}
