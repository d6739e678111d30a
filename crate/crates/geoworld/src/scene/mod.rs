//! Seeded synthetic 3-D scenes with oracle geometry: disk-sprite rendering,
//! spatial-relation labeling, and multiple-choice QA emission.

mod corpus;
mod qa;
mod relations;
mod render;
mod spec;
#[cfg(test)]
mod tests;
pub mod vocab;

pub use corpus::{generate_corpus, read_jsonl, write_jsonl, CorpusEntry};
pub use qa::{make_qa, QAExample};
pub use relations::{label_relations, relations_from_projections, Relation, RelationTriple};
pub use render::{project, render, CameraPose, Projection};
pub use spec::{sample_scene, SceneConfig, SceneError, SceneObject, SceneSpec};

/// Image side length; the pinhole focal length equals this.
pub const IMAGE_SIZE: usize = 32;

/// In-image left/right/above/under margin, pixels.
pub const TAU_PX: f64 = 2.0;

/// Depth margin for behind/front/close/far, world units.
pub const TAU_Z: f64 = 0.25;
