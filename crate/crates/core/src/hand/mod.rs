//! Declarative articulated-hand descriptions.
//!
//! A hand file is TOML with top-level `name`, `base_link`, `approach_axis`,
//! `rest_pose`, optional `collision_ignore`, and the array tables `joints`,
//! `links` and `opposition_spaces`. Joint order in the file defines the
//! joint-angle vector order. Angles are radians, lengths meters.

mod kinematics;
mod opposition;

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};

pub use kinematics::{GraspConfig, Kinematics, Pose, WorldContact};
pub use opposition::{AvailableOs, ConsumedOs, OsState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, serde::Serialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    /// Joint frame relative to the parent link frame.
    pub origin: Pose,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub points: Vec<Vector3<f64>>,
    pub spheres: Vec<Sphere>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactCandidate {
    pub link: usize,
    pub point: Vector3<f64>,
    /// Outward hand-surface normal; the direction the hand pushes on an object.
    pub normal: Vector3<f64>,
    pub side: Side,
}

#[derive(Debug, Clone)]
pub struct OppositionSpace {
    pub id: usize,
    pub label: String,
    pub mask: Vec<bool>,
    pub contacts: Vec<ContactCandidate>,
}

impl OppositionSpace {
    pub fn side_indices(&self, side: Side) -> Vec<usize> {
        self.contacts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.side == side)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Validated hand description plus derived lookup tables.
#[derive(Debug, Clone)]
pub struct HandSpec {
    pub name: String,
    pub base_link: usize,
    pub approach_axis: Vector3<f64>,
    pub joints: Vec<Joint>,
    pub links: Vec<Link>,
    pub rest_pose: Vec<f64>,
    pub os_catalog: Vec<OppositionSpace>,
    /// Joints in parent-before-child order.
    joint_order: Vec<usize>,
    /// For every link, the joints between it and the base.
    link_ancestors: Vec<Vec<usize>>,
    /// Flattened surface points as (link, point in link frame).
    surface: Vec<(usize, Vector3<f64>)>,
    /// Flattened collision spheres as (link, sphere).
    spheres: Vec<(usize, Sphere)>,
    /// Sphere index pairs checked for self-penetration.
    sphere_pairs: Vec<(usize, usize)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHand {
    name: String,
    base_link: String,
    #[serde(default = "default_approach")]
    approach_axis: [f64; 3],
    rest_pose: Vec<f64>,
    #[serde(default)]
    collision_ignore: Vec<[String; 2]>,
    joints: Vec<RawJoint>,
    links: Vec<RawLink>,
    opposition_spaces: Vec<RawOs>,
}

fn default_approach() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    name: String,
    parent: String,
    child: String,
    axis: [f64; 3],
    #[serde(default)]
    origin: RawOrigin,
    lower: f64,
    upper: f64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOrigin {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    name: String,
    #[serde(default)]
    points: Vec<[f64; 3]>,
    #[serde(default)]
    spheres: Vec<RawSphere>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSphere {
    center: [f64; 3],
    radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOs {
    label: String,
    #[serde(default)]
    joint_mask: Option<Vec<u8>>,
    /// Alternative to `joint_mask`: joint names.
    #[serde(default)]
    joints: Option<Vec<String>>,
    contacts: Vec<RawContact>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContact {
    link: String,
    point: [f64; 3],
    normal: [f64; 3],
    side: Side,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn unit(a: [f64; 3], field: &str) -> Result<Vector3<f64>> {
    let v = v3(a);
    let n = v.norm();
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::spec(field, "vector must be finite and nonzero"));
    }
    Ok(v / n)
}

pub fn load_hand_spec(path: impl AsRef<Path>) -> Result<HandSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    HandSpec::from_toml(&text)
}

impl HandSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawHand = toml::from_str(text).map_err(|e| Error::HandSpecParse(e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawHand) -> Result<Self> {
        let mut link_index = HashMap::new();
        let mut links = Vec::with_capacity(raw.links.len());
        for (i, l) in raw.links.into_iter().enumerate() {
            if link_index.insert(l.name.clone(), i).is_some() {
                return Err(Error::spec(format!("links[{i}].name"), format!("duplicate link `{}`", l.name)));
            }
            let mut spheres = Vec::with_capacity(l.spheres.len());
            for (j, s) in l.spheres.iter().enumerate() {
                if !(s.radius > 0.0) {
                    return Err(Error::spec(format!("links[{i}].spheres[{j}].radius"), "must be positive"));
                }
                spheres.push(Sphere {
                    center: v3(s.center),
                    radius: s.radius,
                });
            }
            links.push(Link {
                name: l.name,
                points: l.points.into_iter().map(v3).collect(),
                spheres,
            });
        }
        let find_link = |name: &str, field: String| {
            link_index
                .get(name)
                .copied()
                .ok_or_else(|| Error::spec(field, format!("unknown link `{name}`")))
        };
        let base_link = find_link(&raw.base_link, "base_link".into())?;

        let mut joint_index = HashMap::new();
        let mut joints = Vec::with_capacity(raw.joints.len());
        for (k, j) in raw.joints.into_iter().enumerate() {
            if joint_index.insert(j.name.clone(), k).is_some() {
                return Err(Error::spec(format!("joints[{k}].name"), format!("duplicate joint `{}`", j.name)));
            }
            let parent = find_link(&j.parent, format!("joints[{k}].parent"))?;
            let child = find_link(&j.child, format!("joints[{k}].child"))?;
            if !(j.lower < j.upper) {
                return Err(Error::spec(format!("joints[{k}]"), "lower limit must be below upper limit"));
            }
            let rot = Rotation3::from_euler_angles(j.origin.rpy[0], j.origin.rpy[1], j.origin.rpy[2]);
            joints.push(Joint {
                name: j.name,
                parent,
                child,
                axis: unit(j.axis, &format!("joints[{k}].axis"))?,
                origin: Pose::new(rot.into_inner(), v3(j.origin.xyz)),
                lower: j.lower,
                upper: j.upper,
            });
        }
        let k = joints.len();

        // Tree check: every non-base link has exactly one parent joint and is
        // reachable from the base.
        let mut parent_joint: Vec<Option<usize>> = vec![None; links.len()];
        for (ji, j) in joints.iter().enumerate() {
            if j.child == base_link {
                return Err(Error::spec(format!("joints[{ji}].child"), "kinematic cycle: base link cannot be a child"));
            }
            if parent_joint[j.child].replace(ji).is_some() {
                return Err(Error::spec(
                    format!("joints[{ji}].child"),
                    format!("kinematic cycle: link `{}` has two parent joints", links[j.child].name),
                ));
            }
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
        for (ji, j) in joints.iter().enumerate() {
            children[j.parent].push(ji);
        }
        let mut joint_order = Vec::with_capacity(k);
        let mut link_ancestors: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
        let mut seen = vec![false; links.len()];
        seen[base_link] = true;
        let mut queue = VecDeque::from([base_link]);
        while let Some(l) = queue.pop_front() {
            for &ji in &children[l] {
                let c = joints[ji].child;
                if seen[c] {
                    return Err(Error::spec("joints", "kinematic cycle detected"));
                }
                seen[c] = true;
                let mut anc = link_ancestors[l].clone();
                anc.push(ji);
                link_ancestors[c] = anc;
                joint_order.push(ji);
                queue.push_back(c);
            }
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return Err(Error::spec(
                "joints",
                format!("link `{}` is not connected to the base (kinematic cycle or detached subtree)", links[l].name),
            ));
        }

        if raw.rest_pose.len() != k {
            return Err(Error::spec("rest_pose", format!("expected {k} entries, found {}", raw.rest_pose.len())));
        }
        for (i, (q, j)) in raw.rest_pose.iter().zip(&joints).enumerate() {
            if !(*q >= j.lower && *q <= j.upper) {
                return Err(Error::spec(format!("rest_pose[{i}]"), "outside joint limits"));
            }
        }

        let mut os_catalog = Vec::with_capacity(raw.opposition_spaces.len());
        for (oi, os) in raw.opposition_spaces.into_iter().enumerate() {
            let mask = match (os.joint_mask, os.joints) {
                (Some(bits), None) => {
                    if bits.len() != k {
                        return Err(Error::spec(
                            format!("opposition_spaces[{oi}].joint_mask"),
                            format!("expected {k} bits, found {}", bits.len()),
                        ));
                    }
                    bits.iter()
                        .map(|&b| match b {
                            0 => Ok(false),
                            1 => Ok(true),
                            _ => Err(Error::spec(format!("opposition_spaces[{oi}].joint_mask"), "bits must be 0 or 1")),
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                (None, Some(names)) => {
                    let mut m = vec![false; k];
                    for n in &names {
                        let ji = joint_index.get(n).ok_or_else(|| {
                            Error::spec(format!("opposition_spaces[{oi}].joints"), format!("unknown joint `{n}`"))
                        })?;
                        m[*ji] = true;
                    }
                    m
                }
                _ => {
                    return Err(Error::spec(
                        format!("opposition_spaces[{oi}]"),
                        "exactly one of `joint_mask` or `joints` is required",
                    ))
                }
            };
            if !mask.iter().any(|&b| b) {
                return Err(Error::spec(format!("opposition_spaces[{oi}].joint_mask"), "must involve at least one joint"));
            }
            let mut contacts = Vec::with_capacity(os.contacts.len());
            for (ci, c) in os.contacts.into_iter().enumerate() {
                contacts.push(ContactCandidate {
                    link: find_link(&c.link, format!("opposition_spaces[{oi}].contacts[{ci}].link"))?,
                    point: v3(c.point),
                    normal: unit(c.normal, &format!("opposition_spaces[{oi}].contacts[{ci}].normal"))?,
                    side: c.side,
                });
            }
            for side in [Side::A, Side::B] {
                if !contacts.iter().any(|c| c.side == side) {
                    return Err(Error::spec(
                        format!("opposition_spaces[{oi}].contacts"),
                        format!("no contact candidates on side {side:?}"),
                    ));
                }
            }
            os_catalog.push(OppositionSpace {
                id: oi,
                label: os.label,
                mask,
                contacts,
            });
        }
        if os_catalog.is_empty() {
            return Err(Error::spec("opposition_spaces", "catalog is empty"));
        }

        let mut ignore = HashSet::new();
        for (i, [a, b]) in raw.collision_ignore.iter().enumerate() {
            let a = find_link(a, format!("collision_ignore[{i}]"))?;
            let b = find_link(b, format!("collision_ignore[{i}]"))?;
            ignore.insert((a.min(b), a.max(b)));
        }
        for j in &joints {
            ignore.insert((j.parent.min(j.child), j.parent.max(j.child)));
        }

        let surface = links
            .iter()
            .enumerate()
            .flat_map(|(li, l)| l.points.iter().map(move |p| (li, *p)))
            .collect();
        let spheres: Vec<(usize, Sphere)> = links
            .iter()
            .enumerate()
            .flat_map(|(li, l)| l.spheres.iter().map(move |s| (li, *s)))
            .collect();
        let mut sphere_pairs = Vec::new();
        for a in 0..spheres.len() {
            for b in a + 1..spheres.len() {
                let (la, lb) = (spheres[a].0, spheres[b].0);
                if la == lb || ignore.contains(&(la.min(lb), la.max(lb))) {
                    continue;
                }
                sphere_pairs.push((a, b));
            }
        }

        Ok(HandSpec {
            name: raw.name,
            base_link,
            approach_axis: unit(raw.approach_axis, "approach_axis")?,
            joints,
            links,
            rest_pose: raw.rest_pose,
            os_catalog,
            joint_order,
            link_ancestors,
            surface,
            spheres,
            sphere_pairs,
        })
    }

    /// Number of joints, K.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Length of the grasp vector, 9 + K.
    pub fn grasp_dim(&self) -> usize {
        9 + self.joints.len()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn os_by_label(&self, label: &str) -> Option<&OppositionSpace> {
        self.os_catalog.iter().find(|o| o.label == label)
    }

    pub fn joint_order(&self) -> &[usize] {
        &self.joint_order
    }

    pub fn link_ancestors(&self, link: usize) -> &[usize] {
        &self.link_ancestors[link]
    }

    pub fn surface_samples(&self) -> &[(usize, Vector3<f64>)] {
        &self.surface
    }

    pub fn collision_spheres(&self) -> &[(usize, Sphere)] {
        &self.spheres
    }

    pub fn collision_pairs(&self) -> &[(usize, usize)] {
        &self.sphere_pairs
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.upper).collect()
    }

    pub fn rest_config(&self) -> GraspConfig {
        GraspConfig::new(Vector3::zeros(), crate::rotation::IDENTITY_6D, self.rest_pose.clone())
    }
}

/// Rotation taking `from` onto `to` (both unit).
pub(crate) fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    match Rotation3::rotation_between(from, to) {
        Some(r) => r.into_inner(),
        None => {
            // antiparallel: rotate by pi about any axis orthogonal to `from`
            let helper = if from.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let axis = nalgebra::Unit::new_normalize(from.cross(&helper));
            Rotation3::from_axis_angle(&axis, std::f64::consts::PI).into_inner()
        }
    }
}

/// Hand descriptions shipped with the crate.
pub mod builtin {
    use super::HandSpec;

    /// Two fingers, four joints, one pinch opposition space.
    pub const TOY_GRIPPER_TOML: &str = include_str!("../../assets/hands/toy_gripper.toml");
    /// Four fingers, sixteen joints, seven opposition spaces.
    pub const REFERENCE_HAND_TOML: &str = include_str!("../../assets/hands/allegro_like.toml");

    pub fn toy_gripper() -> HandSpec {
        HandSpec::from_toml(TOY_GRIPPER_TOML).expect("shipped toy gripper is valid")
    }

    pub fn reference_hand() -> HandSpec {
        HandSpec::from_toml(REFERENCE_HAND_TOML).expect("shipped reference hand is valid")
    }
}
