//! Signed distance grids with trilinear interpolation and an on-disk cache.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::distance::MeshBvh;
use super::mesh::TriMesh;
use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: usize = 64;
const CACHE_MAGIC: &[u8; 4] = b"SDFC";
const CACHE_VERSION: u32 = 1;

/// Axis-aligned grid of signed distances, negative inside. Node `(i, j, k)`
/// sits at `origin + h * (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub origin: Vector3<f64>,
    pub h: f64,
    pub dims: [usize; 3],
    pub values: Vec<f32>,
    /// SHA-256 of the source mesh geometry.
    pub mesh_hash: [u8; 32],
}

/// Which interpolation cell a query used; equal signatures mean the same
/// smooth piece of the interpolant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub cell: [u32; 3],
    /// Bit `a` set when axis `a` was clamped below, bit `a + 3` above.
    pub clamped: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub value: f64,
    pub gradient: Vector3<f64>,
    pub key: CellKey,
}

pub fn mesh_hash(mesh: &TriMesh) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((mesh.vertices.len() as u64).to_le_bytes());
    for v in &mesh.vertices {
        for x in v.iter() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    h.update((mesh.triangles.len() as u64).to_le_bytes());
    for t in &mesh.triangles {
        for &i in t {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Grid layout for `mesh` at `resolution` cells along its longest axis. The
/// margin around the bounding box is at least a quarter of the extent and at
/// least two cells.
fn layout(mesh: &TriMesh, resolution: usize) -> Result<(Vector3<f64>, f64, [usize; 3])> {
    if resolution < 8 {
        return Err(Error::InvalidParameter(format!("sdf resolution must be >= 8, got {resolution}")));
    }
    let (lo, hi) = mesh.bbox();
    let extent = mesh.max_extent();
    if !(extent > 0.0) {
        return Err(Error::Mesh("zero-extent mesh".into()));
    }
    let alpha = f64::max(0.25, 2.0 / (resolution as f64 - 4.0));
    let h = extent * (1.0 + 2.0 * alpha) / resolution as f64;
    let center = (lo + hi) / 2.0;
    let mut dims = [0usize; 3];
    let mut origin = Vector3::zeros();
    for a in 0..3 {
        let span = (hi[a] - lo[a]) + 2.0 * alpha * extent;
        let cells = ((span / h) - 1e-9).ceil().max(1.0) as usize;
        dims[a] = cells + 1;
        origin[a] = center[a] - h * cells as f64 / 2.0;
    }
    Ok((origin, h, dims))
}

impl SdfGrid {
    /// Sample the signed distance of `mesh` on a grid. Watertight meshes are
    /// signed by pseudonormals; open meshes by winding number (with a warning).
    pub fn build(mesh: &TriMesh, resolution: usize) -> Result<Self> {
        let (origin, h, dims) = layout(mesh, resolution)?;
        if !mesh.watertight {
            log::warn!("mesh is not watertight; signing distances by winding number");
        }
        let bvh = MeshBvh::new(mesh);
        let [nx, ny, nz] = dims;
        let values: Vec<f32> = (0..nx * ny * nz)
            .into_par_iter()
            .map(|idx| {
                let i = idx / (ny * nz);
                let j = (idx / nz) % ny;
                let k = idx % nz;
                let p = origin + Vector3::new(i as f64, j as f64, k as f64) * h;
                bvh.signed_distance(&p) as f32
            })
            .collect();
        Ok(Self {
            origin,
            h,
            dims,
            values,
            mesh_hash: mesh_hash(mesh),
        })
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.dims[1] + j) * self.dims[2] + k] as f64
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.h
    }

    pub fn upper_corner(&self) -> Vector3<f64> {
        self.node_position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    /// Value and gradient of the trilinear interpolant. Outside the grid the
    /// query is clamped to the box and the distance to the box is added.
    pub fn query(&self, x: &Vector3<f64>) -> SdfSample {
        let mut q = *x;
        let mut clamped = 0u8;
        let hi = self.upper_corner();
        for a in 0..3 {
            if x[a] < self.origin[a] {
                q[a] = self.origin[a];
                clamped |= 1 << a;
            } else if x[a] > hi[a] {
                q[a] = hi[a];
                clamped |= 1 << (a + 3);
            }
        }
        let mut cell = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let u = (q[a] - self.origin[a]) / self.h;
            let c = (u.floor().max(0.0) as usize).min(self.dims[a] - 2);
            cell[a] = c;
            t[a] = u - c as f64;
        }
        let [i, j, k] = cell;
        let c = |di: usize, dj: usize, dk: usize| self.node(i + di, j + dj, k + dk);
        let (c000, c100, c010, c110) = (c(0, 0, 0), c(1, 0, 0), c(0, 1, 0), c(1, 1, 0));
        let (c001, c101, c011, c111) = (c(0, 0, 1), c(1, 0, 1), c(0, 1, 1), c(1, 1, 1));
        let [tx, ty, tz] = t;
        let c00 = c000 + (c100 - c000) * tx;
        let c10 = c010 + (c110 - c010) * tx;
        let c01 = c001 + (c101 - c001) * tx;
        let c11 = c011 + (c111 - c011) * tx;
        let c0 = c00 + (c10 - c00) * ty;
        let c1 = c01 + (c11 - c01) * ty;
        let mut value = c0 + (c1 - c0) * tz;

        let dx0 = (c100 - c000) + ((c110 - c010) - (c100 - c000)) * ty;
        let dx1 = (c101 - c001) + ((c111 - c011) - (c101 - c001)) * ty;
        let gx = dx0 + (dx1 - dx0) * tz;
        let gy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * tz;
        let gz = c1 - c0;
        let mut gradient = Vector3::new(gx, gy, gz) / self.h;

        if clamped != 0 {
            let off = x - q;
            let d = off.norm();
            value += d;
            for a in 0..3 {
                if clamped & (1 << a | 1 << (a + 3)) != 0 {
                    gradient[a] = 0.0;
                }
            }
            if d > 0.0 {
                gradient += off / d;
            }
        }
        SdfSample {
            value,
            gradient,
            key: CellKey {
                cell: cell.map(|c| c as u32),
                clamped,
            },
        }
    }

    pub fn value(&self, x: &Vector3<f64>) -> f64 {
        self.query(x).value
    }

    /// Grid of the same shape scaled by `s`: `sdf_s(x) = s * sdf(x / s)`.
    pub fn scaled(&self, s: f64) -> SdfGrid {
        SdfGrid {
            origin: self.origin * s,
            h: self.h * s,
            dims: self.dims,
            values: self.values.iter().map(|&v| (v as f64 * s) as f32).collect(),
            mesh_hash: self.mesh_hash,
        }
    }

    pub fn write_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut buf = Vec::with_capacity(64 + self.values.len() * 4);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        for d in self.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in self.origin.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&self.h.to_le_bytes());
        buf.extend_from_slice(&self.mesh_hash);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&buf).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn read_cache(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::SdfCache(format!("{}: {m}", path.display()));
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
            if *d < 2 {
                return Err(bad("grid dimension below 2"));
            }
        }
        let mut origin = Vector3::zeros();
        for a in 0..3 {
            origin[a] = r.f64().ok_or_else(|| bad("truncated header"))?;
        }
        let h = r.f64().ok_or_else(|| bad("truncated header"))?;
        if !(h > 0.0) {
            return Err(bad("non-positive cell size"));
        }
        let mut mesh_hash = [0u8; 32];
        mesh_hash.copy_from_slice(r.take(32).ok_or_else(|| bad("truncated header"))?);
        let n = dims.iter().product::<usize>();
        let body = r.take(n * 4).ok_or_else(|| bad("truncated values"))?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            origin,
            h,
            dims,
            values,
            mesh_hash,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Load the cached grid for `mesh` if it exists and matches the mesh hash and
/// resolution; otherwise build and write it. Returns the grid and whether it
/// was rebuilt.
pub fn load_or_build(mesh: &TriMesh, resolution: usize, cache: impl AsRef<Path>) -> Result<(SdfGrid, bool)> {
    let cache = cache.as_ref();
    let hash = mesh_hash(mesh);
    if cache.exists() {
        match SdfGrid::read_cache(cache) {
            Ok(g) if g.mesh_hash == hash && layout(mesh, resolution).map(|l| l.2).ok() == Some(g.dims) => {
                return Ok((g, false))
            }
            Ok(_) => log::info!("{}: stale cache, rebuilding", cache.display()),
            Err(e) => log::warn!("{e}; rebuilding"),
        }
    }
    let g = SdfGrid::build(mesh, resolution)?;
    g.write_cache(cache)?;
    Ok((g, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_grid(res: usize) -> (TriMesh, SdfGrid) {
        let m = TriMesh::icosphere(1.0, 3);
        let g = SdfGrid::build(&m, res).unwrap();
        (m, g)
    }

    #[test]
    fn sphere_center_is_minus_radius() {
        let (_, g) = sphere_grid(32);
        assert!((g.value(&Vector3::zeros()) + 1.0).abs() < g.h, "{}", g.value(&Vector3::zeros()));
    }

    #[test]
    fn margin_covers_two_cells() {
        for res in [8, 12, 32, 64] {
            let m = TriMesh::cuboid(Vector3::new(0.5, 0.2, 0.1));
            let (origin, h, dims) = layout(&m, res).unwrap();
            let (lo, hi) = m.bbox();
            for a in 0..3 {
                assert!(lo[a] - origin[a] >= 2.0 * h - 1e-12);
                assert!(origin[a] + h * (dims[a] - 1) as f64 - hi[a] >= 2.0 * h - 1e-12);
            }
        }
    }

    #[test]
    fn outside_grid_is_positive() {
        let (_, g) = sphere_grid(16);
        let s = g.query(&Vector3::new(10.0, -3.0, 0.2));
        assert!(s.value > 0.0);
        assert!(s.key.clamped != 0);
    }

    #[test]
    fn nodes_are_exact() {
        let (_, g) = sphere_grid(16);
        for (i, j, k) in [(0, 0, 0), (3, 4, 5), (g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1), (7, 0, 9)] {
            assert_eq!(g.value(&g.node_position(i, j, k)), g.node(i, j, k));
        }
    }

    #[test]
    fn linear_field_gradient_is_exact() {
        let dims = [4, 5, 6];
        let a = Vector3::new(0.3, -1.2, 0.7);
        let mut values = Vec::new();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    values.push((a.dot(&Vector3::new(i as f64, j as f64, k as f64)) * 0.5) as f32);
                }
            }
        }
        let g = SdfGrid {
            origin: Vector3::zeros(),
            h: 0.5,
            dims,
            values,
            mesh_hash: [0; 32],
        };
        let s = g.query(&Vector3::new(0.75, 1.25, 0.25));
        assert!((s.gradient - a).norm() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (_, g) = sphere_grid(24);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = g.h / 10.0;
        let mut n = 0;
        while n < 300 {
            let x = Vector3::from_fn(|_, _| rng.random_range(-1.3..1.3));
            // keep the stencil inside one cell
            let u = (x - g.origin) / g.h;
            if (0..3).any(|a| (u[a] - u[a].floor() - 0.5).abs() > 0.35) {
                continue;
            }
            let s = g.query(&x);
            let mut fd = Vector3::zeros();
            for a in 0..3 {
                let mut e = Vector3::zeros();
                e[a] = step;
                fd[a] = (g.value(&(x + e)) - g.value(&(x - e))) / (2.0 * step);
            }
            assert!((fd - s.gradient).norm() <= 1e-5 * s.gradient.norm().max(1e-12));
            n += 1;
        }
    }

    #[test]
    fn sphere_gradient_outside_grid() {
        let g = SdfGrid::build(&TriMesh::icosphere(1.0, 5), 32).unwrap();
        let s = g.query(&Vector3::new(2.0, 0.0, 0.0));
        assert!((s.gradient - Vector3::x()).norm() < 0.05, "{:?}", s.gradient);
    }

    #[test]
    fn cache_round_trip_is_bit_identical() {
        let (m, g) = sphere_grid(12);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.sdf");
        g.write_cache(&p).unwrap();
        assert_eq!(SdfGrid::read_cache(&p).unwrap(), g);
        let (g2, rebuilt) = load_or_build(&m, 12, &p).unwrap();
        assert!(!rebuilt);
        assert_eq!(g2, g);
        let (_, rebuilt) = load_or_build(&m.scaled(2.0), 12, &p).unwrap();
        assert!(rebuilt);
    }

    #[test]
    fn truncated_cache_is_rejected() {
        let (_, g) = sphere_grid(8);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.sdf");
        g.write_cache(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(SdfGrid::read_cache(&p), Err(Error::SdfCache(_))));
    }

    #[test]
    fn scaled_grid_matches_scaled_mesh() {
        let m = TriMesh::icosphere(1.0, 2);
        let g = SdfGrid::build(&m, 16).unwrap().scaled(0.05);
        assert!((g.value(&Vector3::zeros()) + 0.05).abs() < g.h);
        assert!((g.value(&Vector3::new(0.0, 0.06, 0.0)) - 0.01).abs() < g.h);
    }
}
