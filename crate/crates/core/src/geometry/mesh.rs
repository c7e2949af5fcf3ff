//! Triangle meshes: loading (ASCII OBJ, binary STL), cleanup, scaling,
//! mass properties and a few primitives used by tests and examples.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Every edge is shared by exactly two consistently oriented triangles.
    pub watertight: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeshLoadReport {
    pub dropped_degenerate: usize,
    pub dropped_unused_vertices: usize,
}

impl TriMesh {
    /// Build a cleaned mesh: out-of-range indices are an error, zero-area
    /// triangles are dropped and unreferenced vertices compacted away.
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<(Self, MeshLoadReport)> {
        let mut report = MeshLoadReport::default();
        if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::Mesh("non-finite vertex coordinate".into()));
        }
        let scale = bbox_of(&vertices).map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0);
        let area_eps = 1e-14 * scale * scale;
        let mut kept = Vec::with_capacity(triangles.len());
        for t in triangles {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::Mesh(format!("triangle index out of range: {t:?}")));
            }
            let [a, b, c] = t.map(|i| vertices[i]);
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || (b - a).cross(&(c - a)).norm() <= area_eps {
                report.dropped_degenerate += 1;
                continue;
            }
            kept.push(t);
        }
        if kept.is_empty() {
            return Err(Error::Mesh("mesh has no non-degenerate triangles".into()));
        }
        let mut remap = vec![usize::MAX; vertices.len()];
        let mut compact = Vec::new();
        for t in &mut kept {
            for i in t.iter_mut() {
                if remap[*i] == usize::MAX {
                    remap[*i] = compact.len();
                    compact.push(vertices[*i]);
                }
                *i = remap[*i];
            }
        }
        report.dropped_unused_vertices = vertices.len() - compact.len();
        if report.dropped_degenerate > 0 {
            log::warn!("dropped {} zero-area triangles", report.dropped_degenerate);
        }
        let watertight = is_watertight(&kept);
        Ok((
            TriMesh {
                vertices: compact,
                triangles: kept,
                watertight,
            },
            report,
        ))
    }

    pub fn triangle(&self, i: usize) -> [Vector3<f64>; 3] {
        self.triangles[i].map(|v| self.vertices[v])
    }

    pub fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        bbox_of(&self.vertices).expect("mesh is nonempty")
    }

    pub fn max_extent(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).max()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .fold(0.0, f64::max)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| triangle_area(&self.triangle(i))).sum()
    }

    /// Enclosed volume from signed tetrahedra (meaningful for closed meshes).
    pub fn volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Volume centroid for closed meshes, area-weighted surface centroid otherwise.
    pub fn centroid(&self) -> Vector3<f64> {
        let vol = self.volume();
        if self.watertight && vol.abs() > 1e-15 * self.max_extent().powi(3) {
            let mut acc = Vector3::zeros();
            for i in 0..self.triangles.len() {
                let [a, b, c] = self.triangle(i);
                acc += (a + b + c) * (a.dot(&b.cross(&c)) / 6.0) / 4.0;
            }
            acc / vol
        } else {
            let mut acc = Vector3::zeros();
            let mut total = 0.0;
            for i in 0..self.triangles.len() {
                let t = self.triangle(i);
                let w = triangle_area(&t);
                acc += (t[0] + t[1] + t[2]) * (w / 3.0);
                total += w;
            }
            acc / total
        }
    }

    pub fn translated(&self, t: &Vector3<f64>) -> TriMesh {
        let mut m = self.clone();
        m.vertices.iter_mut().for_each(|v| *v += t);
        m
    }

    pub fn scaled(&self, s: f64) -> TriMesh {
        let mut m = self.clone();
        m.vertices.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// Translate so the centroid sits at the origin.
    pub fn recentered(&self) -> TriMesh {
        self.translated(&-self.centroid())
    }

    /// Area-weighted uniform surface samples.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
        let areas: Vec<f64> = (0..self.triangles.len()).map(|i| triangle_area(&self.triangle(i))).collect();
        let dist = WeightedIndex::new(&areas).expect("mesh has positive area");
        (0..n)
            .map(|_| {
                let [a, b, c] = self.triangle(dist.sample(rng));
                sample_triangle(&a, &b, &c, rng)
            })
            .collect()
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_stl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(84 + 50 * self.triangles.len());
        buf.extend_from_slice(&[0u8; 80]);
        buf.extend_from_slice(&(self.triangles.len() as u32).to_le_bytes());
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(i);
            let n = (b - a).cross(&(c - a)).normalize();
            for v in [n, a, b, c] {
                for x in v.iter() {
                    buf.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
            buf.extend_from_slice(&[0u8; 2]);
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Closed axis-aligned box centered at the origin.
    pub fn cuboid(half: Vector3<f64>) -> TriMesh {
        let v: Vec<Vector3<f64>> = (0..8)
            .map(|i| {
                Vector3::new(
                    if i & 1 == 0 { -half.x } else { half.x },
                    if i & 2 == 0 { -half.y } else { half.y },
                    if i & 4 == 0 { -half.z } else { half.z },
                )
            })
            .collect();
        let t = vec![
            [0, 2, 1],
            [1, 2, 3],
            [4, 5, 6],
            [5, 7, 6],
            [0, 1, 4],
            [1, 5, 4],
            [2, 6, 3],
            [3, 6, 7],
            [0, 4, 2],
            [2, 4, 6],
            [1, 3, 5],
            [3, 7, 5],
        ];
        TriMesh::new(v, t).expect("valid box").0
    }

    /// Icosphere centered at the origin.
    pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vector3<f64>> = [
            (-1.0, p, 0.0),
            (1.0, p, 0.0),
            (-1.0, -p, 0.0),
            (1.0, -p, 0.0),
            (0.0, -1.0, p),
            (0.0, 1.0, p),
            (0.0, -1.0, -p),
            (0.0, 1.0, -p),
            (p, 0.0, -1.0),
            (p, 0.0, 1.0),
            (-p, 0.0, -1.0),
            (-p, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
        .collect();
        let mut tris: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(tris.len() * 4);
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                    verts.len() - 1
                })
            };
            for [a, b, c] in tris {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            tris = next;
        }
        verts.iter_mut().for_each(|v| *v *= radius);
        TriMesh::new(verts, tris).expect("valid icosphere").0
    }

    /// Closed cylinder along z, centered at the origin.
    pub fn cylinder(radius: f64, half_height: f64, segments: usize) -> TriMesh {
        let mut v = vec![Vector3::new(0.0, 0.0, -half_height), Vector3::new(0.0, 0.0, half_height)];
        for i in 0..segments {
            let a = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
            v.push(Vector3::new(radius * a.cos(), radius * a.sin(), -half_height));
            v.push(Vector3::new(radius * a.cos(), radius * a.sin(), half_height));
        }
        let mut t = Vec::new();
        for i in 0..segments {
            let j = (i + 1) % segments;
            let (b0, t0, b1, t1) = (2 + 2 * i, 3 + 2 * i, 2 + 2 * j, 3 + 2 * j);
            t.push([0, b1, b0]);
            t.push([1, t0, t1]);
            t.push([b0, b1, t0]);
            t.push([t0, b1, t1]);
        }
        TriMesh::new(v, t).expect("valid cylinder").0
    }
}

pub fn triangle_area(t: &[Vector3<f64>; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

pub(crate) fn sample_triangle<R: Rng + ?Sized>(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, rng: &mut R) -> Vector3<f64> {
    let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    a + (b - a) * u + (c - a) * v
}

fn bbox_of(v: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let first = *v.first()?;
    Some(v.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

fn is_watertight(tris: &[[usize; 3]]) -> bool {
    let mut directed: HashMap<(usize, usize), u32> = HashMap::with_capacity(tris.len() * 3);
    for t in tris {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *directed.entry((a, b)).or_default() += 1;
        }
    }
    directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
}

/// Uniform rescale so the longest bounding-box edge lands on a value drawn
/// uniformly from `[lo, hi]`; the result is centered on its centroid.
/// Returns the mesh and the applied scale factor.
pub fn scale_to_bbox<R: Rng + ?Sized>(mesh: &TriMesh, lo: f64, hi: f64, rng: &mut R) -> Result<(TriMesh, f64)> {
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidParameter(format!("invalid bbox range [{lo}, {hi}]")));
    }
    let extent = mesh.max_extent();
    if !(extent > 0.0) {
        return Err(Error::Mesh("zero-extent mesh cannot be scaled".into()));
    }
    let target = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let s = target / extent;
    Ok((mesh.recentered().scaled(s), s))
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    load_mesh_with_report(path).map(|(m, _)| m)
}

pub fn load_mesh_with_report(path: impl AsRef<Path>) -> Result<(TriMesh, MeshLoadReport)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let (v, t) = match ext.as_str() {
        "obj" => parse_obj(&bytes)?,
        "stl" => parse_binary_stl(&bytes)?,
        _ => return Err(Error::Mesh(format!("unsupported mesh format: {}", path.display()))),
    };
    TriMesh::new(v, t).map_err(|e| match e {
        Error::Mesh(m) => Error::Mesh(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn is_mesh_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("obj") | Some("stl")
    )
}

type RawMesh = (Vec<Vector3<f64>>, Vec<[usize; 3]>);

fn parse_obj(bytes: &[u8]) -> Result<RawMesh> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Mesh("OBJ is not valid UTF-8".into()))?;
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let xs: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Mesh(format!("line {}: bad vertex", ln + 1)))?;
                if xs.len() != 3 {
                    return Err(Error::Mesh(format!("line {}: vertex needs 3 coordinates", ln + 1)));
                }
                verts.push(Vector3::new(xs[0], xs[1], xs[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| Error::Mesh(format!("line {}: bad face index", ln + 1)))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        verts.len() as i64 + i
                    } else {
                        return Err(Error::Mesh(format!("line {}: face index 0", ln + 1)));
                    };
                    if resolved < 0 {
                        return Err(Error::Mesh(format!("line {}: face index out of range", ln + 1)));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::Mesh(format!("line {}: face needs 3 vertices", ln + 1)));
                }
                for k in 1..idx.len() - 1 {
                    tris.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            Some(tag) if tag.starts_with('#') => {}
            Some("vn" | "vt" | "vp" | "o" | "g" | "s" | "usemtl" | "mtllib" | "l") | None => {}
            Some(other) => {
                return Err(Error::Mesh(format!("line {}: unexpected OBJ statement `{other}`", ln + 1)));
            }
        }
    }
    if tris.is_empty() {
        return Err(Error::Mesh("OBJ contains no faces".into()));
    }
    Ok((verts, tris))
}

fn parse_binary_stl(bytes: &[u8]) -> Result<RawMesh> {
    if bytes.len() < 84 {
        return Err(Error::Mesh("STL shorter than its header".into()));
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 84 + 50 * n {
        return Err(Error::Mesh(format!(
            "binary STL size mismatch: header declares {n} triangles, file has {} bytes",
            bytes.len()
        )));
    }
    let mut weld: HashMap<[u32; 3], usize> = HashMap::new();
    let mut verts = Vec::new();
    let mut tris = Vec::with_capacity(n);
    for i in 0..n {
        let rec = &bytes[84 + 50 * i..84 + 50 * (i + 1)];
        let mut tri = [0usize; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let off = 12 + 12 * k;
            let bits: [u32; 3] =
                std::array::from_fn(|c| u32::from_le_bytes(rec[off + 4 * c..off + 4 * c + 4].try_into().expect("4 bytes")));
            *slot = *weld.entry(bits).or_insert_with(|| {
                verts.push(Vector3::from_fn(|c, _| f32::from_bits(bits[c]) as f64));
                verts.len() - 1
            });
        }
        tris.push(tri);
    }
    Ok((verts, tris))
}
