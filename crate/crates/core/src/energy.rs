//! Grasp energy: force-closure residual, contact distance, hand–object
//! penetration, self-penetration, joint-limit violation and object–object
//! penetration, with analytic gradients with respect to the grasp vector.

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fps_sample, MeshBvh, SdfGrid, TriMesh};
use crate::hand::{GraspConfig, HandSpec, Kinematics, OppositionSpace, Pose};

pub const TERM_COUNT: usize = 6;
pub const TERM_NAMES: [&str; TERM_COUNT] = ["fc", "dis", "hop", "hsp", "joint", "oop"];

pub const FC: usize = 0;
pub const DIS: usize = 1;
pub const HOP: usize = 2;
pub const HSP: usize = 3;
pub const JOINT: usize = 4;
pub const OOP: usize = 5;

/// Term weights ordered `(fc, dis, hop, hsp, joint, oop)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights(pub [f64; TERM_COUNT]);

impl EnergyWeights {
    pub fn new(w: [f64; TERM_COUNT]) -> Result<Self> {
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidParameter(format!("energy weights must be finite and nonnegative: {w:?}")));
        }
        Ok(Self(w))
    }

    /// Dataset weighting with the given penetration weight.
    pub fn dataset(w_hop: f64) -> Self {
        Self([50.0, 50.0, w_hop, 5.0, 1.0, 5.0])
    }

    pub fn zero() -> Self {
        Self([0.0; TERM_COUNT])
    }

    pub fn dot(&self, terms: &[f64; TERM_COUNT]) -> f64 {
        self.0.iter().zip(terms).map(|(w, t)| w * t).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPair {
    pub x1: Vector3<f64>,
    pub x2: Vector3<f64>,
    pub c1: Vector3<f64>,
    pub c2: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub terms: [f64; TERM_COUNT],
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(terms: [f64; TERM_COUNT], w: &EnergyWeights) -> Self {
        Self { terms, total: w.dot(&terms) }
    }

    pub fn fc(&self) -> f64 {
        self.terms[FC]
    }
    pub fn dis(&self) -> f64 {
        self.terms[DIS]
    }
    pub fn hop(&self) -> f64 {
        self.terms[HOP]
    }
    pub fn hsp(&self) -> f64 {
        self.terms[HSP]
    }
    pub fn joint(&self) -> f64 {
        self.terms[JOINT]
    }
    pub fn oop(&self) -> f64 {
        self.terms[OOP]
    }
}

pub const OBJECT_SURFACE_SAMPLES: usize = 256;

/// An object with everything the energy and validator need. The object
/// frame has its origin at the volume centroid.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub id: String,
    pub mesh: Arc<TriMesh>,
    pub sdf: Arc<SdfGrid>,
    /// Exact distance queries for validation.
    pub bvh: Arc<MeshBvh>,
    /// Surface samples in the object frame, used for object–object penetration.
    pub surface: Arc<Vec<Vector3<f64>>>,
    pub volume: f64,
    /// Volume centroid; torques in the force-closure term are taken about it.
    pub centroid: Vector3<f64>,
}

impl SceneObject {
    /// Wrap a centered mesh and its grid; surface samples are drawn from `seed`.
    pub fn new(id: impl Into<String>, mesh: TriMesh, sdf: SdfGrid, seed: u64) -> Self {
        let mut rng = crate::seed::rng(crate::seed::stream(seed, crate::seed::Stream::Surface));
        let surface = fps_sample(&mesh, OBJECT_SURFACE_SAMPLES, &mut rng)
            .map(|c| c.points)
            .unwrap_or_default();
        Self {
            id: id.into(),
            volume: mesh.volume(),
            centroid: mesh.centroid(),
            bvh: Arc::new(MeshBvh::new(&mesh)),
            mesh: Arc::new(mesh),
            sdf: Arc::new(sdf),
            surface: Arc::new(surface),
        }
    }

    /// Build the grid at `resolution` and wrap.
    pub fn build(id: impl Into<String>, mesh: TriMesh, resolution: usize, seed: u64) -> Result<Self> {
        let sdf = SdfGrid::build(&mesh, resolution)?;
        Ok(Self::new(id, mesh, sdf, seed))
    }

    /// Largest distance from the centroid to a vertex.
    pub fn radius(&self) -> f64 {
        self.mesh.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// A previously grasped object, fixed in the hand base frame.
#[derive(Debug, Clone)]
pub struct HeldObject {
    pub object: SceneObject,
    /// Object frame to hand base frame.
    pub attach: Pose,
}

/// Target at the world origin (identity pose) plus the objects already held.
#[derive(Debug, Clone)]
pub struct SceneState {
    pub hand: Arc<HandSpec>,
    pub target: SceneObject,
    pub held: Vec<HeldObject>,
}

impl SceneState {
    pub fn new(hand: Arc<HandSpec>, target: SceneObject) -> Self {
        Self {
            hand,
            target,
            held: Vec::new(),
        }
    }

    /// Attach `object` to the hand at base pose `base`, given its current world pose.
    pub fn attach(&mut self, object: SceneObject, world: &Pose, base: &Pose) {
        self.held.push(HeldObject {
            object,
            attach: base.inverse().compose(world),
        });
    }
}

pub fn skew(x: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x, -x.y, x.x, 0.0)
}

/// `[[I, I], [[x1]x, [x2]x]]`.
pub fn grasp_matrix(x1: &Vector3<f64>, x2: &Vector3<f64>) -> Matrix6<f64> {
    let mut g = Matrix6::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(x1));
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&skew(x2));
    g
}

/// `‖G c‖²`: squared net force plus squared net torque about the origin of
/// the contact coordinates.
pub fn e_fc(pair: &ContactPair) -> f64 {
    let f = pair.c1 + pair.c2;
    let tau = pair.x1.cross(&pair.c1) + pair.x2.cross(&pair.c2);
    f.norm_squared() + tau.norm_squared()
}

/// [`e_fc`] through the explicit grasp matrix.
pub fn e_fc_matrix(pair: &ContactPair) -> f64 {
    let c = Vector6::new(pair.c1.x, pair.c1.y, pair.c1.z, pair.c2.x, pair.c2.y, pair.c2.z);
    (grasp_matrix(&pair.x1, &pair.x2) * c).norm_squared()
}

/// Sum of positive contact distances.
pub fn e_dis(contacts: &[Vector3<f64>], sdf: &SdfGrid) -> f64 {
    contacts.iter().map(|x| sdf.value(x).max(0.0)).sum()
}

/// Sum of penetration depths of `points`.
pub fn e_hop(points: &[Vector3<f64>], sdf: &SdfGrid) -> f64 {
    points.iter().map(|x| (-sdf.value(x)).max(0.0)).sum()
}

/// Summed overlap of collision-sphere pairs.
pub fn e_hsp(spec: &HandSpec, kin: &Kinematics) -> f64 {
    let centers = sphere_centers(spec, kin);
    spec.collision_pairs()
        .iter()
        .map(|&(a, b)| sphere_overlap(spec, &centers, a, b))
        .sum()
}

fn sphere_centers(spec: &HandSpec, kin: &Kinematics) -> Vec<Vector3<f64>> {
    spec.collision_spheres()
        .iter()
        .map(|(l, s)| kin.links[*l].apply(&s.center))
        .collect()
}

fn sphere_overlap(spec: &HandSpec, centers: &[Vector3<f64>], a: usize, b: usize) -> f64 {
    let s = spec.collision_spheres();
    (s[a].1.radius + s[b].1.radius - (centers[a] - centers[b]).norm()).max(0.0)
}

/// L1 norm of joint-limit violations.
pub fn e_joint(theta: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    theta
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(t, (lo, hi))| (t - hi).max(0.0) + (lo - t).max(0.0))
        .sum()
}

/// Penetration depth of held-object surface points into the target.
pub fn e_oop(scene: &SceneState, kin: &Kinematics) -> f64 {
    scene
        .held
        .iter()
        .flat_map(|h| {
            let pose = kin.base.compose(&h.attach);
            h.object.surface.iter().map(move |y| pose.apply(y))
        })
        .map(|x| (-scene.target.sdf.value(&x)).max(0.0))
        .sum()
}

/// The contact pair for candidate indices `(a, b)` of `os` at `kin`.
pub fn contact_pair(os: &OppositionSpace, pair: (usize, usize), kin: &Kinematics) -> ContactPair {
    let (ca, cb) = (&os.contacts[pair.0], &os.contacts[pair.1]);
    let (la, lb) = (&kin.links[ca.link], &kin.links[cb.link]);
    ContactPair {
        x1: la.apply(&ca.point),
        x2: lb.apply(&cb.point),
        c1: la.apply_vector(&ca.normal),
        c2: lb.apply_vector(&cb.normal),
    }
}

/// Per-term values and, optionally, per-term gradients at one grasp.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub terms: [f64; TERM_COUNT],
    pub gradients: Option<[Vec<f64>; TERM_COUNT]>,
    /// Identifies the smooth piece of the energy the state lies on: the SDF
    /// cells queried and which hinge terms were active.
    pub signature: Vec<u64>,
}

impl Evaluation {
    pub fn breakdown(&self, w: &EnergyWeights) -> EnergyBreakdown {
        EnergyBreakdown::new(self.terms, w)
    }

    pub fn total(&self, w: &EnergyWeights) -> f64 {
        w.dot(&self.terms)
    }

    /// Weighted gradient; panics if the evaluation carried no gradients.
    pub fn gradient(&self, w: &EnergyWeights) -> Vec<f64> {
        let grads = self.gradients.as_ref().expect("evaluation without gradients");
        let mut out = vec![0.0; grads[0].len()];
        for (wt, g) in w.0.iter().zip(grads) {
            if *wt != 0.0 {
                for (o, x) in out.iter_mut().zip(g) {
                    *o += wt * x;
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.terms.iter().all(|t| t.is_finite())
    }
}

fn sdf_sig(sig: &mut Vec<u64>, key: crate::geometry::CellKey, active: bool) {
    let k = key.cell[0] as u64 | (key.cell[1] as u64) << 16 | (key.cell[2] as u64) << 32;
    sig.push(k | (key.clamped as u64) << 48 | (active as u64) << 56);
}

/// Evaluate every term at `g` with contacts `pair` of `os`.
pub fn evaluate(
    scene: &SceneState,
    os: &OppositionSpace,
    pair: (usize, usize),
    g: &GraspConfig,
    with_gradient: bool,
) -> Result<Evaluation> {
    let spec = &*scene.hand;
    let kin = spec.forward_kinematics(g)?;
    let dim = g.dim();
    let mut grads: [Vec<f64>; TERM_COUNT] = std::array::from_fn(|_| if with_gradient { vec![0.0; dim] } else { Vec::new() });
    let mut terms = [0.0; TERM_COUNT];
    let mut sig = Vec::new();

    // force closure
    let cp = contact_pair(os, pair, &kin);
    let about = scene.target.centroid;
    let rel = ContactPair {
        x1: cp.x1 - about,
        x2: cp.x2 - about,
        ..cp
    };
    terms[FC] = e_fc(&rel);
    let links = (os.contacts[pair.0].link, os.contacts[pair.1].link);
    if with_gradient {
        let f = rel.c1 + rel.c2;
        let tau = rel.x1.cross(&rel.c1) + rel.x2.cross(&rel.c2);
        let gr = &mut grads[FC];
        kin.accumulate_point(spec, links.0, &cp.x1, &(rel.c1.cross(&tau) * 2.0), gr);
        kin.accumulate_point(spec, links.1, &cp.x2, &(rel.c2.cross(&tau) * 2.0), gr);
        kin.accumulate_direction(spec, links.0, &rel.c1, &((f + tau.cross(&rel.x1)) * 2.0), gr);
        kin.accumulate_direction(spec, links.1, &rel.c2, &((f + tau.cross(&rel.x2)) * 2.0), gr);
    }

    // contact distance
    for (x, l) in [(cp.x1, links.0), (cp.x2, links.1)] {
        let s = scene.target.sdf.query(&x);
        let active = s.value > 0.0;
        sdf_sig(&mut sig, s.key, active);
        if active {
            terms[DIS] += s.value;
            if with_gradient {
                kin.accumulate_point(spec, l, &x, &s.gradient, &mut grads[DIS]);
            }
        }
    }

    // hand into target and into held objects
    let held_frames: Vec<Pose> = scene
        .held
        .iter()
        .map(|h| kin.base.compose(&h.attach))
        .collect();
    for (l, local) in spec.surface_samples() {
        let x = kin.links[*l].apply(local);
        let s = scene.target.sdf.query(&x);
        let active = s.value < 0.0;
        sdf_sig(&mut sig, s.key, active);
        if active {
            terms[HOP] -= s.value;
            if with_gradient {
                kin.accumulate_point(spec, *l, &x, &(-s.gradient), &mut grads[HOP]);
            }
        }
        for (h, frame) in scene.held.iter().zip(&held_frames) {
            let y = frame.inverse().apply(&x);
            let s = h.object.sdf.query(&y);
            let active = s.value < 0.0;
            sdf_sig(&mut sig, s.key, active);
            if active {
                terms[HOP] -= s.value;
                if with_gradient {
                    // held objects move with the base, so only joints matter
                    let de_dx = frame.apply_vector(&(-s.gradient));
                    kin.accumulate_joints(spec, *l, &x, &de_dx, &mut grads[HOP]);
                }
            }
        }
    }

    // self-penetration
    let centers = sphere_centers(spec, &kin);
    let spheres = spec.collision_spheres();
    for &(a, b) in spec.collision_pairs() {
        let o = sphere_overlap(spec, &centers, a, b);
        sig.push((o > 0.0) as u64);
        if o > 0.0 {
            terms[HSP] += o;
            if with_gradient {
                let d = centers[a] - centers[b];
                let u = d / d.norm();
                kin.accumulate_point(spec, spheres[a].0, &centers[a], &(-u), &mut grads[HSP]);
                kin.accumulate_point(spec, spheres[b].0, &centers[b], &u, &mut grads[HSP]);
            }
        }
    }

    // joint limits
    for (k, j) in spec.joints.iter().enumerate() {
        let t = g.joints[k];
        let state = if t > j.upper {
            terms[JOINT] += t - j.upper;
            if with_gradient {
                grads[JOINT][9 + k] += 1.0;
            }
            1
        } else if t < j.lower {
            terms[JOINT] += j.lower - t;
            if with_gradient {
                grads[JOINT][9 + k] -= 1.0;
            }
            2
        } else {
            0
        };
        sig.push(state);
    }

    // held objects into target
    for (h, frame) in scene.held.iter().zip(&held_frames) {
        for y in h.object.surface.iter() {
            let b = h.attach.apply(y);
            let x = frame.apply(y);
            let s = scene.target.sdf.query(&x);
            let active = s.value < 0.0;
            sdf_sig(&mut sig, s.key, active);
            if active {
                terms[OOP] -= s.value;
                if with_gradient {
                    kin.accumulate_base_point(&b, &(-s.gradient), &mut grads[OOP]);
                }
            }
        }
    }

    Ok(Evaluation {
        terms,
        gradients: with_gradient.then_some(grads),
        signature: sig,
    })
}

pub fn total_energy(
    scene: &SceneState,
    os: &OppositionSpace,
    pair: (usize, usize),
    g: &GraspConfig,
    w: &EnergyWeights,
) -> Result<EnergyBreakdown> {
    Ok(evaluate(scene, os, pair, g, false)?.breakdown(w))
}

pub fn energy_gradient(
    scene: &SceneState,
    os: &OppositionSpace,
    pair: (usize, usize),
    g: &GraspConfig,
    w: &EnergyWeights,
) -> Result<Vec<f64>> {
    Ok(evaluate(scene, os, pair, g, true)?.gradient(w))
}
