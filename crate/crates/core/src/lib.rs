//! Steady-state IC thermal dataset generation.
//!
//! Produces `(conductivity, power, temperature)` field triples for a layered
//! 3D chip. Two strategies are provided:
//!
//! * **BlocKOA**: solve a small number of basis systems per floorplan with
//!   block conjugate gradient, combine the basis temperatures with random
//!   affine weights plus interior noise, and recover each power map with a
//!   single sparse matrix-vector product. Every emitted sample satisfies the
//!   discrete heat equation to rounding error.
//! * **Direct**: sample a power map and run conjugate gradient for every
//!   sample. Labels are only as accurate as the solver tolerance.
//!
//! The crate is organised bottom-up: [`chipmodel`] builds floorplans and
//! rasterized fields, [`discretize`] assembles the finite-volume operator,
//! [`solvers`] holds CG and block CG, [`pipeline`] runs both generators,
//! [`datasetio`] stores and validates datasets and [`bench`] compares the two
//! methods.

pub mod bench;
pub mod chipmodel;
pub mod config;
pub mod datasetio;
pub mod discretize;
mod error;
pub mod grid;
pub mod pipeline;
pub mod seeds;
pub mod solvers;
pub mod sparse;

pub use error::{Error, NotConverged, Result};
pub use grid::{GridSpec, ScalarField, Unit};

/// Version string recorded in dataset manifests and bench reports.
pub const TOOL_VERSION: &str = concat!("blockoa ", env!("CARGO_PKG_VERSION"));
