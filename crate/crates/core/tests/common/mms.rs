//! Manufactured solution on the unit cube with Dirichlet data.

use std::f64::consts::PI;

use blockoa::discretize::{assemble, rhs_from_power, BoundarySpec};
use blockoa::solvers::{cg, SolverConfig};
use blockoa::{GridSpec, ScalarField, Unit};

const U0: f64 = 1.0;

/// `k = 2 + cos(2 pi x) cos(2 pi y) cos(2 pi z) / 2` has zero normal
/// derivative on every face of the unit cube.
fn k_exact(p: [f64; 3]) -> f64 {
    2.0 + 0.5 * (2.0 * PI * p[0]).cos() * (2.0 * PI * p[1]).cos() * (2.0 * PI * p[2]).cos()
}

fn u_exact(p: [f64; 3]) -> f64 {
    U0 + (PI * p[0]).sin() * (PI * p[1]).sin() * (PI * p[2]).sin()
}

/// `-div(k grad u)` for the fields above.
fn q_exact(p: [f64; 3]) -> f64 {
    let (s, c) = (p.map(|v| (PI * v).sin()), p.map(|v| (PI * v).cos()));
    let (s2, c2) = (p.map(|v| (2.0 * PI * v).sin()), p.map(|v| (2.0 * PI * v).cos()));
    let grad_u = [PI * c[0] * s[1] * s[2], PI * s[0] * c[1] * s[2], PI * s[0] * s[1] * c[2]];
    let grad_k = [
        -PI * s2[0] * c2[1] * c2[2],
        -PI * c2[0] * s2[1] * c2[2],
        -PI * c2[0] * c2[1] * s2[2],
    ];
    let lap_u = -3.0 * PI * PI * s[0] * s[1] * s[2];
    -(grad_k[0] * grad_u[0] + grad_k[1] * grad_u[1] + grad_k[2] * grad_u[2]) - k_exact(p) * lap_u
}

fn sample(grid: &GridSpec, f: impl Fn([f64; 3]) -> f64, unit: Unit) -> ScalarField {
    let [nx, ny, nz] = grid.counts;
    let mut v = Vec::with_capacity(grid.len());
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                v.push(f(grid.cell_center(ix, iy, iz)));
            }
        }
    }
    ScalarField::new(*grid, v, unit).unwrap()
}

/// Max-norm error at cell centers on an `n^3` grid.
pub fn linf_error(n: usize) -> f64 {
    let grid = GridSpec::new([n; 3], [1.0; 3]).unwrap();
    let k = sample(&grid, k_exact, Unit::Conductivity);
    let q = sample(&grid, q_exact, Unit::PowerDensity);
    let op = assemble(&k, &grid, &BoundarySpec::dirichlet(U0)).unwrap();
    let b = rhs_from_power(&op, &q).unwrap();
    let u = cg(&op, &b, &SolverConfig::with_tol(1e-13)).unwrap().x;
    let exact = sample(&grid, u_exact, Unit::Temperature);
    u.iter()
        .zip(exact.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

