//! Value functions for optimal path planning with random vehicle breakdowns.
//!
//! A vehicle operating in mode 1 (normal) may suffer a partial breakdown and
//! switch to mode 2, in which it heads for a repair depot. The two value
//! functions solve a weakly coupled system of eikonal equations
//!
//! ```text
//! |∇u1| f1 + φ1 (u1 − u2) = K1 + λR,   u1 = 0 on G
//! |∇u2| f2 + φ2 (u2 − u1) = K2 + φ2R,  u2 = R + u1 on D
//! ```
//!
//! which is solved here with P1 streamline-diffusion finite elements and a
//! vanishing-viscosity continuation. The crate also carries two independent
//! checks: a Monte Carlo simulation of the switching process and a 1D
//! viscosity-solution checker.

// Parameter checks are written as `!(x > 0.0)` on purpose so that NaN is
// rejected along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Element loops index several local arrays by the same vertex number.
#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod cli;
pub mod continuation;
pub mod error;
pub mod mc;
pub mod mesh;
pub mod model;
pub mod postprocess;
pub mod sparse;
pub mod viscosity1d;

pub use error::{Error, Result};
pub use mesh::TriMesh;
pub use model::{CoefficientField, ProblemSpec, Region};

/// 2D point or vector.
pub type Point = [f64; 2];
