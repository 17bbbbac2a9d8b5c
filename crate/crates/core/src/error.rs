use std::path::PathBuf;

use thiserror::Error;

use crate::discretize::Face;
use crate::solvers::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chip spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("conductivity must be positive and finite (cell {cell}: {value})")]
    NonPositiveConductivity { cell: usize, value: f64 },
    #[error("heat transfer coefficient on face {face:?} must be positive (got {h})")]
    NonPositiveHtc { face: Face, h: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("solver stopped after {} iterations without reaching the tolerance", .0.report.iterations)]
    NotConverged(Box<NotConverged>),
    #[error("condition number must be >= 1 (got {0})")]
    InvalidKappa(f64),
    #[error("basis set is empty")]
    EmptyBasis,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{}: directory already holds a dataset", .0.display())]
    Exists(PathBuf),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("{file}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        file: String,
        expected: u64,
        found: u64,
    },
}

/// Last iterate of a solve that hit `max_iter` (or broke down) before
/// reaching its tolerance.
///
/// `x` is stored column-major with one column per right-hand side.
#[derive(Debug, Clone)]
pub struct NotConverged {
    pub x: Vec<f64>,
    pub report: SolveReport,
}
