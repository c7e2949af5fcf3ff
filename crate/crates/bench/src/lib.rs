//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use seqgrasp_core::energy::{SceneObject, SceneState};
use seqgrasp_core::geometry::TriMesh;
use seqgrasp_core::hand::{builtin, HandSpec};

pub fn reference_hand() -> Arc<HandSpec> {
    Arc::new(builtin::reference_hand())
}

pub fn ball(resolution: usize) -> SceneObject {
    SceneObject::build("ball", TriMesh::icosphere(0.025, 3), resolution, 1).expect("icosphere builds")
}

pub fn scene() -> SceneState {
    SceneState::new(reference_hand(), ball(64))
}
