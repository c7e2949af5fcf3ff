//! Convex hulls and initialization samples on their inflated surface.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use super::mesh::{sample_triangle, TriMesh};
use crate::error::{Error, Result};

/// Convex hull with outward-oriented faces and per-vertex normals.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vector3<f64>>,
    pub centroid: Vector3<f64>,
    areas: Vec<f64>,
}

impl ConvexHull {
    pub fn new(points: &[Vector3<f64>]) -> Result<Self> {
        let faces = quickhull(points)?;
        let mut remap = HashMap::new();
        let mut vertices = Vec::new();
        let faces: Vec<[usize; 3]> = faces
            .iter()
            .map(|f| {
                f.map(|i| {
                    *remap.entry(i).or_insert_with(|| {
                        vertices.push(points[i]);
                        vertices.len() - 1
                    })
                })
            })
            .collect();
        let mut vertex_normals = vec![Vector3::zeros(); vertices.len()];
        let mut areas = Vec::with_capacity(faces.len());
        let mut centroid = Vector3::zeros();
        let mut total = 0.0;
        for f in &faces {
            let [a, b, c] = f.map(|i| vertices[i]);
            let cr = (b - a).cross(&(c - a));
            let area = cr.norm() / 2.0;
            areas.push(area);
            centroid += (a + b + c) / 3.0 * area;
            total += area;
            let n = cr.normalize();
            let pts = [a, b, c];
            for k in 0..3 {
                let e1 = (pts[(k + 1) % 3] - pts[k]).normalize();
                let e2 = (pts[(k + 2) % 3] - pts[k]).normalize();
                vertex_normals[f[k]] += n * e1.dot(&e2).clamp(-1.0, 1.0).acos();
            }
        }
        for n in &mut vertex_normals {
            *n = n.normalize();
        }
        Ok(Self {
            vertices,
            faces,
            vertex_normals,
            centroid: centroid / total,
            areas,
        })
    }

    pub fn area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Uniform-by-area point on the hull pushed out by `offset` along the
    /// interpolated vertex normal, plus the unit direction back to the hull
    /// centroid.
    pub fn sample_expanded<R: Rng + ?Sized>(&self, offset: f64, rng: &mut R) -> (Vector3<f64>, Vector3<f64>) {
        let dist = WeightedIndex::new(&self.areas).expect("hull has positive area");
        let f = self.faces[dist.sample(rng)];
        let [a, b, c] = f.map(|i| self.vertices[i]);
        let q = sample_triangle(&a, &b, &c, rng);
        let w = barycentric(&q, &a, &b, &c);
        let n = (self.vertex_normals[f[0]] * w[0] + self.vertex_normals[f[1]] * w[1] + self.vertex_normals[f[2]] * w[2])
            .normalize();
        let p = q + n * offset;
        (p, (self.centroid - p).normalize())
    }
}

fn barycentric(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> [f64; 3] {
    let (v0, v1, v2) = (b - a, c - a, p - a);
    let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
    let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
    let den = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    [1.0 - v - w, v, w]
}

/// Sample a point on the convex hull of `mesh` inflated by `offset`.
pub fn expanded_hull_sample<R: Rng + ?Sized>(mesh: &TriMesh, offset: f64, rng: &mut R) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if !(offset > 0.0) {
        return Err(Error::InvalidParameter(format!("hull offset must be positive, got {offset}")));
    }
    Ok(ConvexHull::new(&mesh.vertices)?.sample_expanded(offset, rng))
}

/// Incremental hull; returns outward-oriented faces indexing `points`.
fn quickhull(points: &[Vector3<f64>]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 4 {
        return Err(Error::Hull(format!("need at least 4 points, got {}", points.len())));
    }
    let (lo, hi) = points
        .iter()
        .fold((points[0], points[0]), |(l, h), p| (l.inf(p), h.sup(p)));
    let scale = (hi - lo).norm();
    if !(scale > 0.0) {
        return Err(Error::Hull("all points coincide".into()));
    }
    let eps = 1e-10 * scale;

    // initial tetrahedron from extreme points
    let i0 = (0..points.len()).min_by(|&a, &b| points[a].x.total_cmp(&points[b].x)).unwrap();
    let i1 = (0..points.len())
        .max_by(|&a, &b| (points[a] - points[i0]).norm().total_cmp(&(points[b] - points[i0]).norm()))
        .unwrap();
    let line = (points[i1] - points[i0]).normalize();
    let i2 = (0..points.len())
        .max_by(|&a, &b| {
            let da = (points[a] - points[i0]).cross(&line).norm();
            let db = (points[b] - points[i0]).cross(&line).norm();
            da.total_cmp(&db)
        })
        .unwrap();
    if (points[i2] - points[i0]).cross(&line).norm() <= eps {
        return Err(Error::Hull("points are collinear".into()));
    }
    let plane_n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0])).normalize();
    let i3 = (0..points.len())
        .max_by(|&a, &b| {
            let da = (points[a] - points[i0]).dot(&plane_n).abs();
            let db = (points[b] - points[i0]).dot(&plane_n).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    if (points[i3] - points[i0]).dot(&plane_n).abs() <= eps {
        return Err(Error::Hull("points are coplanar".into()));
    }

    struct Face {
        v: [usize; 3],
        n: Vector3<f64>,
        d: f64,
        alive: bool,
    }
    let make = |v: [usize; 3]| {
        let n = (points[v[1]] - points[v[0]]).cross(&(points[v[2]] - points[v[0]])).normalize();
        Face {
            v,
            n,
            d: n.dot(&points[v[0]]),
            alive: true,
        }
    };
    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let mut faces: Vec<Face> = Vec::new();
    for v in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let mut f = make(v);
        if f.n.dot(&interior) - f.d > 0.0 {
            f = make([v[0], v[2], v[1]]);
        }
        faces.push(f);
    }

    for (pi, p) in points.iter().enumerate() {
        if [i0, i1, i2, i3].contains(&pi) {
            continue;
        }
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&f| faces[f].alive && faces[f].n.dot(p) - faces[f].d > eps)
            .collect();
        if visible.is_empty() {
            continue;
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for &f in &visible {
            faces[f].alive = false;
            let v = faces[f].v;
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                *edges.entry((a, b)).or_default() += 1;
            }
        }
        let mut horizon: Vec<(usize, usize)> = edges
            .keys()
            .filter(|&&(a, b)| !edges.contains_key(&(b, a)))
            .copied()
            .collect();
        horizon.sort_unstable();
        for (a, b) in horizon {
            faces.push(make([a, b, pi]));
        }
    }
    Ok(faces.into_iter().filter(|f| f.alive).map(|f| f.v).collect())
}
