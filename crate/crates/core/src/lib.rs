//! Infill asymptotics for Brown-Resnick max-stable fields observed at
//! Poisson-Delaunay sites: Gaussian kernels, field simulation, Delaunay
//! designs, pairwise and triplewise composite likelihoods, estimators, and
//! diagnostics for the V-statistic and local-time limits.

pub mod asymptotics;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod fields;
pub mod finite_diff;
pub mod gaussian;
pub mod geometry;
pub mod likelihood;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod verify;

/// Library version recorded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
