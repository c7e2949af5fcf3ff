//! Exact point–mesh distance with a bounding-volume hierarchy, plus inside
//! tests: angle-weighted pseudonormals at the closest feature for watertight
//! meshes and the generalized winding number otherwise.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::mesh::TriMesh;

/// Which part of a triangle the closest point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Vertex(usize),
    /// Edge between local corners `(i, j)` with `i < j`.
    Edge(usize, usize),
    Face,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> (Vector3<f64>, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0, 1));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

#[derive(Debug, Clone, Copy)]
pub struct ClosestPoint {
    pub distance: f64,
    pub point: Vector3<f64>,
    pub triangle: usize,
    pub feature: Feature,
}

#[derive(Debug, Clone)]
struct Node {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    /// Leaf: `start..start+count` into `order`; interior: children at `left`, `left+1`... encoded below.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

const LEAF_SIZE: usize = 4;

/// Axis-aligned bounding-box tree over a mesh's triangles, with the
/// per-feature normals needed for sign queries.
#[derive(Debug, Clone)]
pub struct MeshBvh {
    mesh: TriMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
    face_normals: Vec<Vector3<f64>>,
    vertex_normals: Vec<Vector3<f64>>,
    edge_normals: HashMap<(usize, usize), Vector3<f64>>,
}

impl MeshBvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let n = mesh.triangles.len();
        let mut order: Vec<usize> = (0..n).collect();
        let bounds: Vec<(Vector3<f64>, Vector3<f64>)> = (0..n)
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
            })
            .collect();
        let centers: Vec<Vector3<f64>> = bounds.iter().map(|(l, h)| (l + h) / 2.0).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        build(&mut nodes, &mut order, 0, n, &bounds, &centers);

        let mut face_normals = Vec::with_capacity(n);
        let mut vertex_normals = vec![Vector3::zeros(); mesh.vertices.len()];
        let mut edge_normals: HashMap<(usize, usize), Vector3<f64>> = HashMap::new();
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let [a, b, c] = mesh.triangle(ti);
            let nrm = (b - a).cross(&(c - a)).normalize();
            face_normals.push(nrm);
            let pts = [a, b, c];
            for k in 0..3 {
                let p = pts[k];
                let e1 = (pts[(k + 1) % 3] - p).normalize();
                let e2 = (pts[(k + 2) % 3] - p).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex_normals[t[k]] += nrm * angle;
                let (u, v) = (t[k], t[(k + 1) % 3]);
                *edge_normals.entry((u.min(v), u.max(v))).or_insert_with(Vector3::zeros) += nrm;
            }
        }
        Self {
            mesh: mesh.clone(),
            nodes,
            order,
            face_normals,
            vertex_normals,
            edge_normals,
        }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn closest_point(&self, p: &Vector3<f64>) -> ClosestPoint {
        let mut best = ClosestPoint {
            distance: f64::INFINITY,
            point: Vector3::zeros(),
            triangle: usize::MAX,
            feature: Feature::Face,
        };
        let mut best_d2 = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_distance_sq(p, &node.lo, &node.hi) >= best_d2 {
                continue;
            }
            if node.count > 0 {
                for &ti in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.triangle(ti);
                    let (q, f) = closest_point_on_triangle(p, &a, &b, &c);
                    let d2 = (p - q).norm_squared();
                    if d2 < best_d2 || (d2 == best_d2 && ti < best.triangle) {
                        best_d2 = d2;
                        best = ClosestPoint {
                            distance: 0.0,
                            point: q,
                            triangle: ti,
                            feature: f,
                        };
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = box_distance_sq(p, &self.nodes[l].lo, &self.nodes[l].hi);
                let dr = box_distance_sq(p, &self.nodes[r].lo, &self.nodes[r].hi);
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best.distance = best_d2.sqrt();
        best
    }

    /// Unsigned distance and closest point.
    pub fn distance(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let c = self.closest_point(p);
        (c.distance, c.point)
    }

    fn feature_normal(&self, c: &ClosestPoint) -> Vector3<f64> {
        let t = self.mesh.triangles[c.triangle];
        match c.feature {
            Feature::Face => self.face_normals[c.triangle],
            Feature::Vertex(k) => self.vertex_normals[t[k]],
            Feature::Edge(i, j) => {
                let (u, v) = (t[i], t[j]);
                self.edge_normals[&(u.min(v), u.max(v))]
            }
        }
    }

    /// True when `p` is strictly inside the mesh.
    pub fn is_inside(&self, p: &Vector3<f64>) -> bool {
        if self.mesh.watertight {
            let c = self.closest_point(p);
            if c.distance == 0.0 {
                return false;
            }
            (p - c.point).dot(&self.feature_normal(&c)) < 0.0
        } else {
            winding_number(&self.mesh, p) > 0.5
        }
    }

    /// Signed distance, negative inside.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        let c = self.closest_point(p);
        let inside = if self.mesh.watertight {
            c.distance > 0.0 && (p - c.point).dot(&self.feature_normal(&c)) < 0.0
        } else {
            winding_number(&self.mesh, p) > 0.5
        };
        if inside {
            -c.distance
        } else {
            c.distance
        }
    }
}

fn build(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    count: usize,
    bounds: &[(Vector3<f64>, Vector3<f64>)],
    centers: &[Vector3<f64>],
) -> usize {
    let slice = &mut order[start..start + count];
    let (mut lo, mut hi) = bounds[slice[0]];
    for &t in slice.iter() {
        lo = lo.inf(&bounds[t].0);
        hi = hi.sup(&bounds[t].1);
    }
    let idx = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        start,
        count,
        left: 0,
        right: 0,
    });
    if count <= LEAF_SIZE {
        return idx;
    }
    let (mut clo, mut chi) = (centers[slice[0]], centers[slice[0]]);
    for &t in slice.iter() {
        clo = clo.inf(&centers[t]);
        chi = chi.sup(&centers[t]);
    }
    let axis = (chi - clo).imax();
    let mid = count / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| centers[a][axis].total_cmp(&centers[b][axis]).then(a.cmp(&b)));
    let left = build(nodes, order, start, mid, bounds, centers);
    let right = build(nodes, order, start + mid, count - mid, bounds, centers);
    let node = &mut nodes[idx];
    node.count = 0;
    node.left = left;
    node.right = right;
    idx
}

fn box_distance_sq(p: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    let mut d = 0.0;
    for i in 0..3 {
        let v = if p[i] < lo[i] {
            lo[i] - p[i]
        } else if p[i] > hi[i] {
            p[i] - hi[i]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

/// Brute-force distance over all triangles; reference for the tree.
pub fn point_mesh_distance_brute(p: &Vector3<f64>, mesh: &TriMesh) -> (f64, Vector3<f64>) {
    let mut best = (f64::INFINITY, Vector3::zeros());
    for i in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(i);
        let (q, _) = closest_point_on_triangle(p, &a, &b, &c);
        let d2 = (p - q).norm_squared();
        if d2 < best.0 {
            best = (d2, q);
        }
    }
    (best.0.sqrt(), best.1)
}

/// Exact unsigned point–mesh distance and closest point.
pub fn point_mesh_distance(p: &Vector3<f64>, mesh: &TriMesh) -> (f64, Vector3<f64>) {
    MeshBvh::new(mesh).distance(p)
}

/// Generalized winding number (van Oosterom–Strackee solid angles).
pub fn winding_number(mesh: &TriMesh, p: &Vector3<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(i);
        let (a, b, c) = (a - p, b - p, c - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}
