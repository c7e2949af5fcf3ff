//! Simulation-free grasp validation: closing emulation until contact, a
//! penetration cap, and quasi-static resistance to inertial loads along the
//! six axis directions with friction-cone contacts.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::energy::{SceneObject, SceneState};
use crate::error::{Error, Result};
use crate::hand::{GraspConfig, HandSpec, Kinematics, OppositionSpace, Pose, Side};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationParams {
    /// Distance (m) under which a hand point counts as touching.
    pub contact_tolerance: f64,
    /// Largest allowed penetration depth (m).
    pub max_penetration: f64,
    pub friction: f64,
    pub cone_edges: usize,
    /// Magnitude of the test accelerations (m/s²).
    pub acceleration: f64,
    /// kg/m³
    pub density: f64,
    /// Closing increment per joint (degrees).
    pub closing_step_deg: f64,
    pub closing_increments: usize,
    /// Relative residual below which a load counts as balanced.
    pub residual_tolerance: f64,
}

impl Default for ValidationParams {
    fn default() -> Self {
        Self {
            contact_tolerance: 0.002,
            max_penetration: 0.010,
            friction: 2.0,
            cone_edges: 8,
            acceleration: 9.8,
            density: 500.0,
            closing_step_deg: 0.5,
            closing_increments: 200,
            residual_tolerance: 1e-6,
        }
    }
}

impl ValidationParams {
    pub fn check(&self) -> Result<()> {
        let positive = [
            self.contact_tolerance,
            self.max_penetration,
            self.acceleration,
            self.density,
            self.closing_step_deg,
            self.residual_tolerance,
        ];
        if positive.iter().any(|x| !(*x > 0.0)) || !(self.friction >= 0.0) || self.cone_edges < 3 {
            return Err(Error::InvalidParameter(format!("invalid validation parameters: {self:?}")));
        }
        Ok(())
    }
}

/// The six test load directions: `+x, -x, +y, -y, +z, -z`.
pub fn load_directions() -> [Vector3<f64>; 6] {
    [
        Vector3::x(),
        -Vector3::x(),
        Vector3::y(),
        -Vector3::y(),
        Vector3::z(),
        -Vector3::z(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectVerdict {
    pub contact_ok: bool,
    pub contact_count: usize,
    pub penetration_depth: f64,
    pub penetration_ok: bool,
    pub wrench_ok: [bool; 6],
}

impl ObjectVerdict {
    pub fn success(&self) -> bool {
        self.contact_ok && self.penetration_ok && self.wrench_ok.iter().all(|&b| b)
    }

    /// Name of the first failed criterion.
    pub fn failure(&self) -> Option<&'static str> {
        if !self.contact_ok {
            Some("contact")
        } else if !self.penetration_ok {
            Some("penetration")
        } else if !self.wrench_ok.iter().all(|&b| b) {
            Some("wrench")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub objects: Vec<ObjectVerdict>,
    pub success: bool,
    pub max_penetration: f64,
}

impl ValidationReport {
    pub fn from_verdicts(objects: Vec<ObjectVerdict>) -> Self {
        Self {
            success: !objects.is_empty() && objects.iter().all(|o| o.success()),
            max_penetration: objects.iter().map(|o| o.penetration_depth).fold(0.0, f64::max),
            objects,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContactCheck {
    pub ok: bool,
    /// Candidates of the opposition space within tolerance after closing.
    pub count: usize,
    /// Configuration after closing emulation.
    pub closed: GraspConfig,
}

fn candidate_distances(scene: &SceneState, os: &OppositionSpace, kin: &Kinematics) -> Vec<f64> {
    os.contacts
        .iter()
        .map(|c| scene.target.bvh.signed_distance(&kin.links[c.link].apply(&c.point)))
        .collect()
}

/// Close the opposition space's joints toward the target in fixed
/// increments until each side touches or runs out of travel, then report
/// whether both sides are within tolerance.
pub fn check_contact(
    g: &GraspConfig,
    scene: &SceneState,
    os: &OppositionSpace,
    mask: &[bool],
    params: &ValidationParams,
) -> Result<ContactCheck> {
    let spec = &*scene.hand;
    let tol = params.contact_tolerance;
    let step = params.closing_step_deg.to_radians();
    let mut cfg = g.clone();
    let side_joints = |side: Side| -> Vec<usize> {
        let mut js: Vec<usize> = os
            .contacts
            .iter()
            .filter(|c| c.side == side)
            .flat_map(|c| spec.link_ancestors(c.link).iter().copied())
            .filter(|&k| mask[k])
            .collect();
        js.sort_unstable();
        js.dedup();
        js
    };
    let joints = [side_joints(Side::A), side_joints(Side::B)];
    let sides = [Side::A, Side::B];
    for _ in 0..params.closing_increments {
        let kin = spec.forward_kinematics(&cfg)?;
        let d = candidate_distances(scene, os, &kin);
        let mut moved = false;
        for (si, side) in sides.iter().enumerate() {
            let (best, dmin) = os
                .contacts
                .iter()
                .enumerate()
                .filter(|(_, c)| c.side == *side)
                .map(|(i, _)| (i, d[i]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("both sides populated");
            if dmin <= tol {
                continue;
            }
            let c = &os.contacts[best];
            let x = kin.links[c.link].apply(&c.point);
            let grad = scene.target.sdf.query(&x).gradient;
            for &k in &joints[si] {
                if !spec.link_ancestors(c.link).contains(&k) {
                    continue;
                }
                let rate = kin.joint_axes[k].cross(&(x - kin.joint_origins[k])).dot(&grad);
                if rate == 0.0 {
                    continue;
                }
                let j = &spec.joints[k];
                let next = (cfg.joints[k] - step * rate.signum()).clamp(j.lower, j.upper);
                if next != cfg.joints[k] {
                    cfg.joints[k] = next;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    let kin = spec.forward_kinematics(&cfg)?;
    let d = candidate_distances(scene, os, &kin);
    let touching = |side: Side| {
        os.contacts
            .iter()
            .zip(&d)
            .filter(|(c, &di)| c.side == side && di <= tol)
            .count()
    };
    let (a, b) = (touching(Side::A), touching(Side::B));
    Ok(ContactCheck {
        ok: a > 0 && b > 0,
        count: a + b,
        closed: cfg,
    })
}

/// Largest penetration depth of hand points into any object and of object
/// surfaces into each other.
pub fn penetration_depth(g: &GraspConfig, scene: &SceneState) -> Result<f64> {
    let spec = &*scene.hand;
    let kin = spec.forward_kinematics(g)?;
    let mut frames = vec![Pose::identity()];
    let mut objects: Vec<&SceneObject> = vec![&scene.target];
    for h in &scene.held {
        frames.push(kin.base.compose(&h.attach));
        objects.push(&h.object);
    }
    let inverse: Vec<Pose> = frames.iter().map(|f| f.inverse()).collect();
    let mut depth: f64 = 0.0;
    for x in spec.hand_surface_points(&kin) {
        for (o, inv) in objects.iter().zip(&inverse) {
            depth = depth.max(-o.bvh.signed_distance(&inv.apply(&x)));
        }
    }
    for (i, a) in objects.iter().enumerate() {
        for (j, b) in objects.iter().enumerate() {
            if i == j || (i > 0 && j > 0) {
                continue;
            }
            let to_b = inverse[j].compose(&frames[i]);
            for y in a.surface.iter() {
                depth = depth.max(-b.bvh.signed_distance(&to_b.apply(y)));
            }
        }
    }
    Ok(depth.max(0.0))
}

pub fn check_penetration(g: &GraspConfig, scene: &SceneState, cap: f64) -> Result<(f64, bool)> {
    let d = penetration_depth(g, scene)?;
    Ok((d, d < cap))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub point: Vector3<f64>,
    /// Unit normal pointing into the object.
    pub normal: Vector3<f64>,
    /// Unit vector orthogonal to the normal fixing the cone edge azimuths.
    pub tangent: Vector3<f64>,
}

impl Contact {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        let n = normal.normalize();
        let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        Self {
            point,
            normal: n,
            tangent: n.cross(&helper).normalize(),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            point: pose.apply(&self.point),
            normal: pose.apply_vector(&self.normal),
            tangent: pose.apply_vector(&self.tangent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub mass: f64,
    pub centroid: Vector3<f64>,
    /// Length used to scale torques to force units.
    pub length_scale: f64,
}

impl MassProperties {
    pub fn of(object: &SceneObject, density: f64) -> Result<Self> {
        if !(object.volume > 0.0) {
            return Err(Error::Mesh(format!("object {} has no volume", object.id)));
        }
        Ok(Self {
            mass: density * object.volume,
            centroid: Vector3::zeros(),
            length_scale: object.radius(),
        })
    }
}

/// Nonnegative least squares `min ‖Ax − b‖, x ≥ 0` (Lawson–Hanson).
/// Returns the solution and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let (m, n) = a.shape();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return (x, b.norm());
    }
    let tol = 10.0 * f64::EPSILON * a.norm() * (m.max(n) as f64);
    let mut passive = vec![false; n];
    let mut w = a.transpose() * (b - a * &x);
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let cand = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = cand else { break };
        if w[j] <= tol {
            break;
        }
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let s_p = solve_subset(a, b, &idx);
            if idx.iter().zip(s_p.iter()).all(|(_, &v)| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = s_p[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if s_p[k] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - s_p[k]));
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (s_p[k] - x[i]);
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
        w = a.transpose() * (b - a * &x);
    }
    let r = (a * &x - b).norm();
    (x, r)
}

fn solve_subset(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(idx);
    sub.svd(true, true)
        .solve(b, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(idx.len()))
}

/// Unit edges of the polyhedral friction cone of `contact`.
pub fn friction_cone_edges(contact: &Contact, mu: f64, edges: usize) -> Vec<Vector3<f64>> {
    let n = contact.normal;
    let t1 = contact.tangent;
    let t2 = n.cross(&t1);
    (0..edges)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / edges as f64;
            (n + (t1 * phi.cos() + t2 * phi.sin()) * mu).normalize()
        })
        .collect()
}

fn wrench_matrix(contacts: &[Contact], mass: &MassProperties, params: &ValidationParams) -> DMatrix<f64> {
    let scale = if mass.length_scale > 0.0 { mass.length_scale } else { 1.0 };
    let mut cols = Vec::new();
    for c in contacts {
        let r = c.point - mass.centroid;
        for e in friction_cone_edges(c, params.friction, params.cone_edges) {
            let t = r.cross(&e) / scale;
            cols.push([e.x, e.y, e.z, t.x, t.y, t.z]);
        }
    }
    DMatrix::from_fn(6, cols.len(), |i, j| cols[j][i])
}

fn balances(a: &DMatrix<f64>, load: &Vector3<f64>, mass: &MassProperties, params: &ValidationParams) -> bool {
    let f = load.normalize() * (mass.mass * params.acceleration);
    let b = DVector::from_vec(vec![f.x, f.y, f.z, 0.0, 0.0, 0.0]);
    let (_, r) = nnls(a, &b);
    r <= params.residual_tolerance * b.norm()
}

/// Whether nonnegative combinations of friction-cone edge wrenches can
/// balance an inertial load of `m·a` along `load`.
pub fn resists_load(contacts: &[Contact], mass: &MassProperties, params: &ValidationParams, load: &Vector3<f64>) -> bool {
    balances(&wrench_matrix(contacts, mass, params), load, mass, params)
}

/// [`resists_load`] for each of the six axis directions.
pub fn check_wrench_resistance(contacts: &[Contact], mass: &MassProperties, params: &ValidationParams) -> [bool; 6] {
    let a = wrench_matrix(contacts, mass, params);
    load_directions().map(|d| balances(&a, &d, mass, params))
}

/// Hand points and candidates of `os` within tolerance of the target, with
/// the target's inward normal at each.
pub fn touching_contacts(g: &GraspConfig, scene: &SceneState, os: &OppositionSpace, tol: f64) -> Result<Vec<Contact>> {
    let spec = &*scene.hand;
    let kin = spec.forward_kinematics(g)?;
    let mut pts = spec.hand_surface_points(&kin);
    pts.extend(spec.contact_candidates(os, &kin).into_iter().map(|c| c.point));
    Ok(pts
        .into_iter()
        .filter(|x| scene.target.bvh.signed_distance(x) <= tol)
        .filter_map(|x| {
            let grad = scene.target.sdf.query(&x).gradient;
            let n = grad.norm();
            (n > 0.0).then(|| Contact::new(x, -grad / n))
        })
        .collect())
}

/// Validate one grasp of the target with `os`, held objects in place.
pub fn validate_grasp(
    g: &GraspConfig,
    scene: &SceneState,
    os: &OppositionSpace,
    mask: &[bool],
    params: &ValidationParams,
) -> Result<ObjectVerdict> {
    params.check()?;
    let contact = check_contact(g, scene, os, mask, params)?;
    let (depth, pen_ok) = check_penetration(&contact.closed, scene, params.max_penetration)?;
    let mass = MassProperties::of(&scene.target, params.density)?;
    let contacts = touching_contacts(&contact.closed, scene, os, params.contact_tolerance)?;
    let wrench_ok = if contact.ok {
        check_wrench_resistance(&contacts, &mass, params)
    } else {
        [false; 6]
    };
    Ok(ObjectVerdict {
        contact_ok: contact.ok,
        contact_count: contact.count,
        penetration_depth: depth,
        penetration_ok: pen_ok,
        wrench_ok,
    })
}

/// One grasp of a sequence as needed for replay.
#[derive(Debug, Clone)]
pub struct SequenceGrasp<'a> {
    pub os: &'a OppositionSpace,
    pub mask: &'a [bool],
    pub g: &'a GraspConfig,
}

/// Validate every grasp in order; earlier objects are held at the pose
/// their grasp fixed them in.
pub fn validate_sequence(
    hand: &std::sync::Arc<HandSpec>,
    grasps: &[SequenceGrasp<'_>],
    objects: &[SceneObject],
    params: &ValidationParams,
) -> Result<ValidationReport> {
    if grasps.is_empty() {
        return Err(Error::InvalidParameter("cannot validate an empty sequence".into()));
    }
    if objects.len() < grasps.len() {
        return Err(Error::InvalidParameter(format!(
            "{} grasps but only {} objects",
            grasps.len(),
            objects.len()
        )));
    }
    let mut verdicts = Vec::with_capacity(grasps.len());
    let mut held: Vec<(SceneObject, Pose)> = Vec::new();
    for (n, step) in grasps.iter().enumerate() {
        let mut scene = SceneState::new(hand.clone(), objects[n].clone());
        for (o, base) in &held {
            scene.attach(o.clone(), &Pose::identity(), base);
        }
        verdicts.push(validate_grasp(step.g, &scene, step.os, step.mask, params)?);
        let kin = hand.forward_kinematics(step.g)?;
        held.push((objects[n].clone(), kin.base));
    }
    Ok(ValidationReport::from_verdicts(verdicts))
}
