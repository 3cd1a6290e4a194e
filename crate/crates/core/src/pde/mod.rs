//! Reference finite-difference solvers that label the training data.

mod brusselator;
mod burgers;
mod darcy;
mod grid;

pub use brusselator::{simulate_brusselator, solve_brusselator, BrusselatorParams, BrusselatorRun};
pub use burgers::{solve_burgers, BurgersParams};
pub use darcy::{solve_darcy, solve_darcy_with_stats, CgStats, CG_RELATIVE_TOLERANCE};
pub use grid::{interp_to_target, make_geometry, Grid2D, GEOMETRIES};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unknown geometry {0:?}")]
    UnknownGeometry(String),
    #[error("point ({x}, {y}) lies outside the source grid")]
    OutOfDomain { x: f64, y: f64 },
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:e}")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("solution blew up at step {step} (|value| = {value:e})")]
    Instability { step: usize, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, PdeError>;
