//! Error types, one per module, plus a crate-level wrapper.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("non-finite argument {0}")]
    NonFinite(f64),
    #[error("correlation {0} outside [-1, 1]")]
    InvalidCorrelation(f64),
    #[error("degenerate correlation {0}: density does not exist")]
    DegenerateCorrelation(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid field parameters: {0}")]
    InvalidParams(String),
    #[error("duplicate evaluation point at index {0}")]
    DuplicatePoint(usize),
    #[error("covariance not positive definite even with jitter {jitter:e} (pivot {pivot})")]
    NotPositiveDefinite { jitter: f64, pivot: usize },
    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),
    #[error("spectral function cap {cap} reached before the stopping rule fired")]
    CapReached { cap: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("intensity must be positive and finite, got {0}")]
    InvalidIntensity(f64),
    #[error("window must be a non-empty rectangle")]
    InvalidWindow,
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("all points are collinear")]
    Collinear,
    #[error("non-finite coordinate at point {0}")]
    NonFinitePoint(usize),
    #[error("point {0} duplicates an earlier point")]
    DuplicatePoint(usize),
    #[error("length must be non-negative, got {0}")]
    NegativeLength(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("invalid parameters: sigma={sigma}, alpha={alpha}")]
    InvalidParams { sigma: f64, alpha: f64 },
    #[error("observations must be positive and finite")]
    InvalidObservation,
    #[error("distance must be positive, got {0}")]
    InvalidDistance(f64),
    #[error("side lengths {0:?} violate the triangle inequality")]
    TriangleInequality([f64; 3]),
    #[error("degenerate triangle geometry (correlation {0})")]
    DegenerateGeometry(f64),
    #[error("no edges or triangles to evaluate")]
    Empty,
    #[error("non-finite log-likelihood contribution at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("invalid search interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("objective is non-finite at {0}")]
    NonFiniteObjective(f64),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("observations must be positive and finite")]
    InvalidObservation,
    #[error("distance must be positive, got {0}")]
    InvalidDistance(f64),
    #[error("empty edge or triangle set")]
    Empty,
    #[error("grid resolution {0} is below the minimum of 32")]
    GridTooCoarse(usize),
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("sample does not carry a spectral record")]
    MissingSpectralRecord,
    #[error("site {0} is not an evaluation point of the sample")]
    UnobservedSite(usize),
    #[error("need at least {need} replicates, got {got}")]
    TooFewReplicates { need: usize, got: usize },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Crate-level error for the experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error("invalid configuration: {0}")]
    Config(String),
}
