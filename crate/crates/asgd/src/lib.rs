//! Dynamically preconditioned SGD with Polyak-Ruppert averaging.
//!
//! The library runs preconditioned averaged SGD on synthetic linear and
//! ingested logistic problems, maintains the exact pathwise decomposition of
//! the averaged error into a martingale term, a Taylor term, and a dynamic
//! remainder, probes how fast the effective preconditioner stabilizes, and
//! turns the oracle sandwich covariance into coverage/NMSE diagnostics. A
//! CLI harness reproduces the coverage, threshold, and saturating-sequence
//! experiments at desk scale.

pub mod decomposition;
pub mod driver;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod precond;
pub mod problems;
pub mod rng;
pub mod saturator;
