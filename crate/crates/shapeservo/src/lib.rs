//! Shape servoing of a simulated deformable sheet under prescribed
//! performance bounds.
//!
//! A quasi-static spring mesh held by two rigid grippers plays the plant;
//! keypoint coordinates are the feature vector. An adaptive RBF network
//! estimates the deformation Jacobian online and a barrier-based controller
//! drives the keypoint errors to zero while keeping every error channel
//! inside a shrinking envelope. The harness runs seeded, bit-reproducible
//! closed-loop experiments, compares controller/estimator ablations, and
//! re-checks the stability inequalities on every logged step.

pub mod controller;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod keypoints;
pub mod monitor;
pub mod plant;

pub use error::{Error, Result};
