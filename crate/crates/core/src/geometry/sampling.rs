//! Farthest-point sampling, basis-point-set encoding and penetration queries.

use nalgebra::Vector3;
use rand::Rng;

use super::distance::MeshBvh;
use super::mesh::TriMesh;
use crate::error::{Error, Result};
use crate::seed;

pub const BPS_SIZE: usize = 512;
pub const BPS_RADIUS: f64 = 0.15;
pub const BPS_SEED: u64 = 0x5EED_0B95;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("point cloud must be nonempty".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpsFeature {
    pub values: Vec<f64>,
}

/// Farthest-point subset of `candidates`, starting from `first`.
pub fn farthest_point_indices(candidates: &[Vector3<f64>], n: usize, first: usize) -> Vec<usize> {
    let n = n.min(candidates.len());
    if n == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(n);
    let mut dist = vec![f64::INFINITY; candidates.len()];
    let mut cur = first;
    for _ in 0..n {
        chosen.push(cur);
        let c = candidates[cur];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in candidates.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        cur = best.1;
    }
    chosen
}

/// `n` surface points chosen by farthest-point sampling from a dense uniform
/// pre-sample of the surface.
pub fn fps_sample<R: Rng + ?Sized>(mesh: &TriMesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidParameter("fps sample count must be >= 1".into()));
    }
    let dense = mesh.sample_surface((16 * n).max(4096), rng);
    let first = rng.random_range(0..dense.len());
    let idx = farthest_point_indices(&dense, n, first);
    PointCloud::new(idx.into_iter().map(|i| dense[i]).collect())
}

/// Fixed basis: `size` points uniform in a ball of `radius`, from `seed`.
pub fn bps_basis(size: usize, radius: f64, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let p = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if p.norm_squared() <= 1.0 {
            out.push(p * radius);
        }
    }
    out
}

pub fn default_bps_basis() -> Vec<Vector3<f64>> {
    bps_basis(BPS_SIZE, BPS_RADIUS, BPS_SEED)
}

/// Distance from every basis point to its nearest cloud point.
pub fn bps_encode(cloud: &PointCloud, basis: &[Vector3<f64>]) -> BpsFeature {
    let mut sorted = cloud.points.clone();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let values = basis
        .iter()
        .map(|b| {
            let start = sorted.partition_point(|p| p.x < b.x);
            let mut best = f64::INFINITY;
            for p in sorted[start..].iter() {
                let dx = p.x - b.x;
                if dx * dx > best {
                    break;
                }
                best = best.min((p - b).norm_squared());
            }
            for p in sorted[..start].iter().rev() {
                let dx = b.x - p.x;
                if dx * dx > best {
                    break;
                }
                best = best.min((p - b).norm_squared());
            }
            best.sqrt()
        })
        .collect();
    BpsFeature { values }
}

pub fn bps_encode_brute(cloud: &PointCloud, basis: &[Vector3<f64>]) -> BpsFeature {
    BpsFeature {
        values: basis
            .iter()
            .map(|b| {
                cloud
                    .points
                    .iter()
                    .map(|p| (p - b).norm_squared())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect(),
    }
}

/// Points strictly inside `mesh`, as `(index, depth)`.
pub fn penetration_set(points: &[Vector3<f64>], mesh: &TriMesh) -> Vec<(usize, f64)> {
    let bvh = MeshBvh::new(mesh);
    points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d = bvh.signed_distance(p);
            (d < 0.0).then_some((i, -d))
        })
        .collect()
}
