//! Construction, certified training, and empirical verification of
//! linearly-sized deep softplus networks.
//!
//! The pipeline: [`architect`] sizes a network so its parameter count is
//! linear in the sample count, [`net`] evaluates and differentiates it,
//! [`trainer`] fits only the output layer by masked gradient descent under an
//! explicit step budget and convergence certificate, [`verify`] checks the
//! probabilistic ingredients (concentration, moment recursion, feature rank,
//! smoothness), and [`bounds`] evaluates the capacity and generalization
//! inequalities. [`data`] handles dataset synthesis, normalization, label
//! corruption, and IDX files; [`quad`], [`rng`], and [`report`] are shared
//! utilities.

pub mod architect;
pub mod bounds;
pub mod data;
pub mod error;
pub mod net;
pub mod quad;
pub mod report;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
