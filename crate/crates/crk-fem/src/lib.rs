//! Adaptive Crouzeix-Raviart finite elements of arbitrary odd degree k for
//! the 2D Poisson problem: meshes with newest-vertex bisection, broken
//! polynomial spaces, a residual error estimator, Doerfler marking, and the
//! quasi-interpolation / companion operator constructions that connect coarse
//! and fine nonconforming spaces.

pub mod adaptive;
pub mod assembly;
pub mod bernstein;
pub mod crspace;
pub mod estimator;
pub mod mesh;
pub mod operators;
pub mod polyquad;
pub mod problems;
pub mod verify;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point lies outside the requested triangle")]
    PointOutsideTriangle,
    #[error("entity does not belong to the mesh: {0}")]
    NotInMesh(String),
    #[error("function is not in the broken CR space: jump moment {moment:.3e} on edge {edge} exceeds gate {gate:.1e}")]
    JumpGate { edge: usize, moment: f64, gate: f64 },
    #[error("linear solver failed to converge: {0} iterations, relative residual {1:.3e}")]
    SolveFailure(usize, f64),
    #[error("problem has no exact solution data: {0}")]
    MissingExact(String),
    #[error("refinement pair is incompatible: {0}")]
    IncompatiblePair(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
