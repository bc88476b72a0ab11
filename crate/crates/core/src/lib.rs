//! Energy-quadratized and scalar-auxiliary-variable time stepping for
//! Allen–Cahn and Cahn–Hilliard phase-field models on a uniform 2D grid.

pub mod diagnostics;
mod error;
pub mod grid;
pub mod potential;
pub mod scenarios;
pub mod schemes;
pub mod solvers;
pub mod stability;

pub use error::{Error, Result};
pub use grid::{gradient_energy, inner_product, laplacian, Grid2D, ScalarField};
