//! Multi-modal mixture-of-experts representation learning and a task-aware
//! multi-object tracking pipeline, sized to run on a desk.
//!
//! * [`numerics`] dense matrices, reference ops and a small reverse-mode tape.
//! * [`demoe`] the decoupled mixture-of-experts encoder and its losses.
//! * [`tamot`] candidates, instance embeddings, bi-softmax matching and the
//!   tracklet memory.
//! * [`simworld`] a seeded synthetic multi-modal scene generator with an oracle
//!   detector.
//! * [`metrics`] CLEAR-MOT, IDF1 and single-object average overlap.
//! * [`params`] the versioned binary parameter container.

pub mod demoe;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod params;
pub mod simworld;
pub mod tamot;

pub use error::{Error, Result};
