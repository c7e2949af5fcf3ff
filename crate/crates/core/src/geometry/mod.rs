mod distance;
mod hull;
mod mesh;
mod sampling;
mod sdf;

pub use distance::{
    closest_point_on_triangle, point_mesh_distance, point_mesh_distance_brute, winding_number, ClosestPoint, Feature,
    MeshBvh,
};
pub use hull::{expanded_hull_sample, ConvexHull};
pub use mesh::{is_mesh_path, load_mesh, load_mesh_with_report, scale_to_bbox, triangle_area, MeshLoadReport, TriMesh};
pub use sampling::{
    bps_basis, bps_encode, bps_encode_brute, default_bps_basis, farthest_point_indices, fps_sample, penetration_set,
    BpsFeature, PointCloud, BPS_RADIUS, BPS_SEED, BPS_SIZE,
};
pub use sdf::{load_or_build, mesh_hash, CellKey, SdfGrid, SdfSample, DEFAULT_RESOLUTION};
