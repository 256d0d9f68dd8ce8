//! Complementarity problems on extended second order cones.
//!
//! The crate covers the deterministic linear problem on `L(k, l)` (reformulated
//! as a mixed complementarity problem and solved through the Fischer-Burmeister
//! system), a CVaR based sample-average approach for random coefficients, the
//! mean/Euclidean-norm portfolio model, and a quasi-convexity analyzer for
//! quadratic forms on spherically convex sets.

pub mod cli;
pub mod cones;
pub mod error;
pub mod esoclcp;
pub mod fb;
pub mod io;
pub mod linalg;
pub mod portfolio;
pub mod solvers;
pub mod spherical;
pub mod stochastic;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
