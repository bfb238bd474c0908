//! Online Koopman-operator modeling and model-predictive control for a
//! simulated soft three-fingered gripper, with a SINDy baseline for
//! prediction benchmarking.
//!
//! The pipeline: a lifting [`dictionary`] built from Hermite bases and
//! Kronecker products, EDMD operator estimation in [`koopman`], a
//! grid-search receding-horizon controller in [`mpc`], a surrogate
//! pneumatic-gripper [`plant`], the per-step modeling-and-control loop in
//! [`online`], and benchmark harnesses in [`eval`]. File formats and the
//! experiment config live in [`io`].
//!
//! Data-parallel inner loops (candidate-plan scoring, benchmark cells,
//! campaign trials, per-column LASSO fits) run on rayon when the default
//! `parallel` feature is enabled and fall back to sequential loops without
//! it; both paths produce identical results.

pub mod dictionary;
pub mod error;
pub mod eval;
pub mod io;
pub mod koopman;
pub mod mpc;
pub mod online;
pub mod plant;
pub mod sindy;
pub mod types;

pub use error::{Error, Result};
pub use types::{ControlInput, GripperState, ReferenceTrajectory, RngSeed, SnapshotBuffer};
