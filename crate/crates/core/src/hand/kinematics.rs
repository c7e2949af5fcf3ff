use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::{HandSpec, OppositionSpace, Side};
use crate::error::{Error, Result};
use crate::rotation::{rot6d_with_jacobian, IDENTITY_6D};

/// Rigid transform with an explicit rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.rotation * other.rotation, self.rotation * other.translation + self.translation)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }
}

/// Grasp vector `g = [p, r, θ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspConfig {
    pub position: Vector3<f64>,
    pub rotation: [f64; 6],
    pub joints: Vec<f64>,
}

impl GraspConfig {
    pub fn new(position: Vector3<f64>, rotation: [f64; 6], joints: Vec<f64>) -> Self {
        Self {
            position,
            rotation,
            joints,
        }
    }

    pub fn identity(dof: usize) -> Self {
        Self::new(Vector3::zeros(), IDENTITY_6D, vec![0.0; dof])
    }

    pub fn dim(&self) -> usize {
        9 + self.joints.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend(self.position.iter());
        v.extend(self.rotation.iter());
        v.extend(self.joints.iter());
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < 9 {
            return Err(Error::InvalidParameter(format!("grasp vector too short: {}", v.len())));
        }
        Ok(Self::new(
            Vector3::new(v[0], v[1], v[2]),
            [v[3], v[4], v[5], v[6], v[7], v[8]],
            v[9..].to_vec(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldContact {
    pub link: usize,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub side: Side,
}

/// Forward kinematics result: every link pose in the world frame plus the
/// quantities needed to differentiate world points with respect to `g`.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub base: Pose,
    /// `∂R/∂r_i` for the base rotation.
    pub rotation_jacobian: [Matrix3<f64>; 6],
    pub links: Vec<Pose>,
    /// World-frame unit axis of every joint.
    pub joint_axes: Vec<Vector3<f64>>,
    /// World-frame position of every joint origin.
    pub joint_origins: Vec<Vector3<f64>>,
}

impl HandSpec {
    pub fn forward_kinematics(&self, g: &GraspConfig) -> Result<Kinematics> {
        if g.joints.len() != self.dof() {
            return Err(Error::InvalidParameter(format!(
                "expected {} joint angles, found {}",
                self.dof(),
                g.joints.len()
            )));
        }
        let (rot, rotation_jacobian) = rot6d_with_jacobian(&g.rotation)?;
        let base = Pose::new(rot, g.position);
        let mut links = vec![Pose::identity(); self.links.len()];
        links[self.base_link] = base;
        let mut joint_axes = vec![Vector3::zeros(); self.dof()];
        let mut joint_origins = vec![Vector3::zeros(); self.dof()];
        for &ji in self.joint_order() {
            let j = &self.joints[ji];
            let frame = links[j.parent].compose(&j.origin);
            let spin = Rotation3::from_axis_angle(&Unit::new_unchecked(j.axis), g.joints[ji]).into_inner();
            joint_axes[ji] = frame.rotation * j.axis;
            joint_origins[ji] = frame.translation;
            links[j.child] = Pose::new(frame.rotation * spin, frame.translation);
        }
        Ok(Kinematics {
            base,
            rotation_jacobian,
            links,
            joint_axes,
            joint_origins,
        })
    }

    /// Hand surface point cloud `H_g` in the world frame, in link order.
    pub fn hand_surface_points(&self, kin: &Kinematics) -> Vec<Vector3<f64>> {
        self.surface_samples()
            .iter()
            .map(|(l, p)| kin.links[*l].apply(p))
            .collect()
    }

    pub fn contact_candidates(&self, os: &OppositionSpace, kin: &Kinematics) -> Vec<WorldContact> {
        os.contacts
            .iter()
            .map(|c| WorldContact {
                link: c.link,
                point: kin.links[c.link].apply(&c.point),
                normal: kin.links[c.link].apply_vector(&c.normal),
                side: c.side,
            })
            .collect()
    }
}

impl Kinematics {
    /// Accumulate `dE/dg` for a world point rigidly attached to `link`,
    /// given `dE/dx`.
    pub fn accumulate_point(&self, spec: &HandSpec, link: usize, x: &Vector3<f64>, de_dx: &Vector3<f64>, grad: &mut [f64]) {
        grad[0] += de_dx.x;
        grad[1] += de_dx.y;
        grad[2] += de_dx.z;
        let local = self.base.rotation.transpose() * (x - self.base.translation);
        for (i, d) in self.rotation_jacobian.iter().enumerate() {
            grad[3 + i] += de_dx.dot(&(d * local));
        }
        self.accumulate_joints(spec, link, x, de_dx, grad);
    }

    /// Joint-angle part of [`Kinematics::accumulate_point`] only: the
    /// derivative of a link point as seen from the base frame.
    pub fn accumulate_joints(&self, spec: &HandSpec, link: usize, x: &Vector3<f64>, de_dx: &Vector3<f64>, grad: &mut [f64]) {
        for &k in spec.link_ancestors(link) {
            let w = self.joint_axes[k].cross(&(x - self.joint_origins[k]));
            grad[9 + k] += de_dx.dot(&w);
        }
    }

    /// Accumulate `dE/dg` for a world direction attached to `link`.
    pub fn accumulate_direction(&self, spec: &HandSpec, link: usize, v: &Vector3<f64>, de_dv: &Vector3<f64>, grad: &mut [f64]) {
        let local = self.base.rotation.transpose() * v;
        for (i, d) in self.rotation_jacobian.iter().enumerate() {
            grad[3 + i] += de_dv.dot(&(d * local));
        }
        for &k in spec.link_ancestors(link) {
            grad[9 + k] += de_dv.dot(&self.joint_axes[k].cross(v));
        }
    }

    /// Accumulate `dE/dg` for a point fixed in the base frame (held objects).
    pub fn accumulate_base_point(&self, local: &Vector3<f64>, de_dx: &Vector3<f64>, grad: &mut [f64]) {
        grad[0] += de_dx.x;
        grad[1] += de_dx.y;
        grad[2] += de_dx.z;
        for (i, d) in self.rotation_jacobian.iter().enumerate() {
            grad[3 + i] += de_dx.dot(&(d * local));
        }
    }

    pub fn link_pose(&self, spec: &HandSpec, name: &str) -> Option<Pose> {
        spec.link_index(name).map(|i| self.links[i])
    }
}
