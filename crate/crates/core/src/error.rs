//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} has length {found}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, found: usize },
    #[error("row {row} references variable {index} but the problem has {num_vars} variables")]
    IndexOutOfRange { row: usize, index: usize, num_vars: usize },
    #[error("cone {cone} references variable {index} which is out of range")]
    ConeIndexOutOfRange { cone: usize, index: usize },
    #[error("cone {cone} has dimension {dim}; at least 2 is required")]
    ConeTooSmall { cone: usize, dim: usize },
    #[error("variable {index} belongs to more than one cone")]
    OverlappingCones { index: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("variable {0} has an invalid bound pair")]
    InvalidBound(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("cone residual is not differentiable at a point with zero barred part")]
    NonDifferentiable,
    #[error("generator has a zero barred part")]
    InvalidGenerator,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no instance passed the nondegeneracy screen after {0} attempts")]
    ResampleLimit(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
