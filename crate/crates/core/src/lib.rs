//! Constraint-informed Kolmogorov-Arnold networks and a time shift governor
//! testbed for constrained spacecraft rendezvous.
//!
//! - [`spline`]: edge activations (B-spline + SiLU residual, GRBF, RSWAF).
//! - [`kan`]: layers, networks, forward and reverse passes.
//! - [`mlp`]: the tanh MLP baseline.
//! - [`checkpoint`]: JSON checkpoints.
//! - [`train`]: constraint-informed losses, AdamW and the training loop.
//! - [`sim`]: HCW relative motion, LQR tracking, constraints, rollouts.
//! - [`governor`]: exact and network-assisted time shift governors, dataset generation.
//! - [`dataset`]: sample CSV and sidecar files.

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix notation in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod governor;
pub mod kan;
pub mod mlp;
pub mod model;
pub mod sim;
pub mod spline;
pub mod train;

pub use error::*;
pub use kan::{KanLayer, KanNetwork, ParameterTape};
pub use model::{AnyModel, InputNorm, Model};
pub use spline::{EdgeFunction, EdgeKind, KnotGrid};
