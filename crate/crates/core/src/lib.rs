//! Streaming face anonymization.
//!
//! Per-frame face detections (boxes plus embeddings) are clustered into
//! identities with positioned incremental affinity propagation, assembled
//! into trajectories, gap-filled with a Gaussian-process model that also
//! vets loose-threshold compensation proposals, and finally blurred on the
//! raw frames for every identity that is not exempt.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod metrics;
pub mod model;
pub mod piap;
pub mod pipeline;
pub mod pixelate;
pub mod gp;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
