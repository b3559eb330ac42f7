//! Seeded synthetic multi-modal scenes with ground-truth identities and an
//! oracle detector.
//!
//! Layout, rendering and detector noise each draw from their own random
//! stream (see [`crate::numerics::rng::streams`]); rendering and detection
//! use one child stream per frame, so frames can be produced independently.

mod config;
mod oracle;
mod render;
mod scene;

pub use config::{Motion, OcclusionWindow, SceneConfig};
pub use oracle::{oracle_detect, oracle_detections};
pub use render::render_frame;
pub use scene::{
    generate_sequence, GroundTruth, GtFrame, GtObject, ObjectSpec, Sequence, GROUND_TRUTH_FORMAT,
};
