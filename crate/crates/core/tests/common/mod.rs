#![allow(dead_code)]

pub mod mms;

use blockoa::config::RunConfig;
use blockoa::discretize::{assemble, BoundarySpec, DiscreteOperator};
use blockoa::pipeline::GenerationConfig;
use blockoa::sparse::CsrMatrix;
use blockoa::{GridSpec, ScalarField, Unit};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Default chip on a coarse grid.
pub fn small_config(grid: [usize; 3], n_data: usize, n_basis: usize, n_k: usize) -> GenerationConfig {
    let rc = RunConfig {
        grid,
        n_data,
        n_basis,
        n_k,
        master_seed: 11,
        ..RunConfig::default()
    };
    let mut cfg = rc.to_generation().unwrap();
    cfg.solver.rel_tol = 1e-10;
    cfg.basis_solver.rel_tol = 1e-10;
    cfg
}

pub fn dense(a: &CsrMatrix) -> DMatrix<f64> {
    let n = a.dim();
    DMatrix::from_row_slice(n, n, &a.to_dense())
}

/// Dense Cholesky solve.
pub fn dense_solve(a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
    let chol = dense(a).cholesky().expect("SPD");
    chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec()
}

pub fn rel_err(x: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

#[derive(Debug, Clone, Copy)]
pub enum BcKind {
    Dirichlet,
    Robin,
    Mixed,
}

pub const BC_KINDS: [BcKind; 3] = [BcKind::Dirichlet, BcKind::Robin, BcKind::Mixed];

/// Random grid with at most 1000 cells, conductivity in [1, 10] and the
/// requested boundary family.
pub fn random_operator<R: Rng>(rng: &mut R, kind: BcKind) -> DiscreteOperator {
    let counts = loop {
        let c = [rng.random_range(2..=12), rng.random_range(2..=12), rng.random_range(1..=10)];
        if c.iter().product::<usize>() <= 1000 {
            break c;
        }
    };
    let extent = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
    let grid = GridSpec::new(counts, extent).unwrap();
    let k: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(1.0..10.0)).collect();
    let k = ScalarField::new(grid, k, Unit::Conductivity).unwrap();
    let u0 = rng.random_range(-5.0..60.0);
    let h = rng.random_range(5.0..50.0);
    let bc = match kind {
        BcKind::Dirichlet => BoundarySpec::dirichlet(u0),
        BcKind::Robin => BoundarySpec::robin(h, u0),
        BcKind::Mixed => BoundarySpec::mixed(h, u0, u0 + 1.0),
    };
    assemble(&k, &grid, &bc).unwrap()
}

pub fn random_rhs<R: Rng>(rng: &mut R, n: usize, s: usize) -> Vec<Vec<f64>> {
    (0..s).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// `||x - y||_A`.
pub fn a_norm_diff(a: &CsrMatrix, x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let ad = a.matvec(&d).unwrap();
    d.iter().zip(&ad).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
}
