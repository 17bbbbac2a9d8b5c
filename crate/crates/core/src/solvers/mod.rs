//! Krylov solvers for sparse SPD systems.
//!
//! Both solvers start from `x0 = 0`, measure convergence with the 2-norm
//! relative residual `||b - A x|| / ||b||` per right-hand side and confirm it
//! against an explicitly recomputed residual before declaring a column
//! converged. All reductions run in a fixed sequential order so repeated
//! solves are bitwise identical.

mod block_cg;
mod bound;
mod cg;
mod small;

pub use block_cg::block_cg;
pub use bound::cg_error_bound;
pub use cg::{cg, cg_monitored};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    #[default]
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 1e-9,
            max_iter: 20_000,
            preconditioner: Preconditioner::None,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(rel_tol: f64) -> Self {
        SolverConfig {
            rel_tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Krylov iterations (block iterations for block CG).
    pub iterations: usize,
    /// Recomputed `||b - A x|| / ||b||` per right-hand side.
    pub final_rel_residual: Vec<f64>,
    pub converged: Vec<bool>,
    /// Seconds.
    pub wall_time: f64,
    /// Single-vector products with `A`.
    pub matvec_count: usize,
}

impl SolveReport {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub report: SolveReport,
}

/// Dense `n x s` block of vectors stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiVector {
    n: usize,
    s: usize,
    data: Vec<f64>,
}

impl MultiVector {
    pub fn zeros(n: usize, s: usize) -> Self {
        MultiVector {
            n,
            s,
            data: vec![0.0; n * s],
        }
    }

    pub fn from_columns<C: AsRef<[f64]>>(n: usize, columns: &[C]) -> Result<Self> {
        let mut data = Vec::with_capacity(n * columns.len());
        for c in columns {
            let c = c.as_ref();
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: c.len(),
                });
            }
            data.extend_from_slice(c);
        }
        Ok(MultiVector {
            n,
            s: columns.len(),
            data,
        })
    }

    pub fn from_col_major(n: usize, s: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * s {
            return Err(Error::DimensionMismatch {
                expected: n * s,
                found: data.len(),
            });
        }
        Ok(MultiVector { n, s, data })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.s
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n.max(1)).take(self.s)
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone)]
pub struct BlockSolution {
    pub x: MultiVector,
    pub report: SolveReport,
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||b - A x||₂`, recomputed.
pub(crate) fn true_residual_norm(a: &crate::sparse::CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; b.len()];
    a.matvec_into(x, &mut ax);
    let mut s = 0.0;
    for (bi, axi) in b.iter().zip(&ax) {
        let d = bi - axi;
        s += d * d;
    }
    s.sqrt()
}

pub(crate) fn inverse_diagonal(a: &crate::sparse::CsrMatrix) -> Result<Vec<f64>> {
    a.diagonal()
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            if d > 0.0 {
                Ok(1.0 / d)
            } else {
                Err(Error::InvalidConfig(format!(
                    "Jacobi preconditioner needs a positive diagonal (row {i}: {d})"
                )))
            }
        })
        .collect()
}
