//! Density-oriented point-cloud feature extraction.
//!
//! Scale-oriented operators (convolutions, per-level set abstraction) grow
//! their receptive field layer by layer. For LiDAR-style point clouds the
//! natural axis is density, not scale: objects keep their physical size but
//! lose points with range. The operator implemented here keeps one fixed
//! query radius and instead grows the number of fused neighbor points layer
//! by layer, from a single sampling pass shared by every layer.
//!
//! The crate provides:
//! - a small f64 tensor kernel with reverse-mode differentiation
//!   ([`tensor`]), verified against central finite differences;
//! - point-cloud ingestion, a KITTI-style `.bin` codec, and a synthetic
//!   scene generator with inverse-square point density ([`cloud`]);
//! - farthest point sampling and ball query with invocation counters
//!   ([`sampling`]) and brute-force reference oracles ([`oracle`]);
//! - the single-pass operator with three fusion schemes plus the
//!   per-level-sampling baseline it is compared against ([`operator`]);
//! - per-seed detection heads and the focal / smooth-L1 / BCE loss suite
//!   ([`heads`]);
//! - an instrumented benchmark and ablation-sweep harness ([`bench`]);
//! - the property/check suites ([`check`]) and the CLI entry points
//!   ([`cli`]) driving them.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod bench;
pub mod check;
pub mod checkpoint;
pub mod cli;
pub mod cloud;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod manifest;
pub mod operator;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
