//! Sequential multi-object grasp synthesis for articulated hands.
//!
//! Each object in a sequence is grasped with one opposition space of the
//! hand while earlier objects stay rigidly held; the joints used by a grasp
//! are frozen for the rest of the sequence.

pub mod dataset;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod hand;
pub mod rotation;
pub mod sampler;
pub mod seed;
pub mod validation;

pub use nalgebra;

pub use error::{Error, Result};
pub use geometry::{PointCloud, SdfGrid, TriMesh};
pub use hand::{load_hand_spec, GraspConfig, HandSpec, OppositionSpace, OsState, Side};
pub use energy::{EnergyBreakdown, EnergyWeights, SceneObject, SceneState};
pub use sampler::{seqgrasp, GraspSequenceResult, SamplerParams, SequenceParams, Termination};
pub use validation::{validate_sequence, ValidationParams, ValidationReport};
