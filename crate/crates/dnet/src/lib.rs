//! Distinction-aware point cloud networks.
//!
//! A small, self-contained stack for learning on 3-D point clouds:
//!
//! * [`tensor`] — dense tensors, a tape-based reverse-mode autodiff graph,
//!   ADAM, and a finite-difference gradient checker.
//! * [`geometry`] — point cloud containers, neighbor search, sampling,
//!   synthetic shape generation, and text/PLY round-trip IO.
//! * [`sps`] — self-attentive point searching: per-point distinction scores
//!   and selection of the most/least distinctive subsets.
//! * [`sgc`] — stacked self-gated edge convolutions over dynamic neighbor
//!   graphs, plus the learned input alignment transform.
//! * [`fusion`] — channel-wise softmax fusion of per-branch descriptors.
//! * [`model`] — the assembled classifier/segmenter, training loop,
//!   checkpoints.
//!
//! Everything is deterministic per seed: same seed, same machine, same
//! byte-for-byte results, independent of worker thread count.

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod model;
pub mod sgc;
pub mod sps;
pub mod tensor;

pub use error::{Error, Result};
