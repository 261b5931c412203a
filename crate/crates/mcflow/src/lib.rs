//! Solver library for multicontinuum parabolic flow in fractured porous
//! media: fine-scale finite-volume and coarse-scale NLMC space
//! discretizations with coupled implicit and decoupled implicit-explicit
//! time schemes, plus a CLI harness for convergence/stability/speedup
//! studies.

pub mod error;
pub mod assembly;
pub mod geometry;
pub mod linalg;
pub mod timeloop;

pub use error::{Error, Result};
