use std::time::Instant;

use super::{inverse_diagonal, norm2, true_residual_norm, Preconditioner, Solution, SolveReport, SolverConfig};
use crate::sparse::CsrMatrix;
use crate::{Error, NotConverged, Result};

/// Conjugate gradient from `x0 = 0`, optionally Jacobi preconditioned.
pub fn cg(a: impl AsRef<CsrMatrix>, b: &[f64], cfg: &SolverConfig) -> Result<Solution> {
    cg_monitored(a, b, cfg, |_, _| {})
}

/// [`cg`] calling `monitor(m, x_m)` for the initial guess and after every
/// iteration.
pub fn cg_monitored<F>(a: impl AsRef<CsrMatrix>, b: &[f64], cfg: &SolverConfig, mut monitor: F) -> Result<Solution>
where
    F: FnMut(usize, &[f64]),
{
    let a = a.as_ref();
    cfg.validate()?;
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let start = Instant::now();
    let inv_diag = match cfg.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => Some(inverse_diagonal(a)?),
    };
    let precond = |r: &[f64], z: &mut [f64]| {
        if let Some(d) = &inv_diag {
            for ((zi, ri), di) in z.iter_mut().zip(r).zip(d) {
                *zi = ri * di;
            }
        }
    };

    let mut x = vec![0.0; n];
    monitor(0, &x);
    let bnorm = norm2(b);
    let mut report = SolveReport::default();
    if bnorm == 0.0 {
        report.final_rel_residual = vec![0.0];
        report.converged = vec![true];
        report.wall_time = start.elapsed().as_secs_f64();
        return Ok(Solution { x, report });
    }

    let tol = cfg.rel_tol;
    let mut r = b.to_vec();
    let mut z = if inv_diag.is_some() { vec![0.0; n] } else { Vec::new() };
    precond(&r, &mut z);
    let mut p = if inv_diag.is_some() { z.clone() } else { r.clone() };
    let mut rz = dot(&r, if inv_diag.is_some() { &z } else { &r });
    let mut q = vec![0.0; n];
    let mut matvecs = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut final_rel = 1.0;
    // Recursive-residual target; tightened if the recomputed residual lags.
    let mut target = tol;

    while iterations < cfg.max_iter {
        let pq = a.matvec_dot(&p, &mut q);
        matvecs += 1;
        iterations += 1;
        if !(pq > 0.0 && pq.is_finite()) {
            break;
        }
        let alpha = rz / pq;
        let mut rr = 0.0;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            rr += r[i] * r[i];
        }
        monitor(iterations, &x);

        if rr.sqrt() / bnorm <= target {
            let true_rel = true_residual_norm(a, &x, b) / bnorm;
            matvecs += 1;
            final_rel = true_rel;
            if true_rel <= tol {
                converged = true;
                break;
            }
            // Restart from the recomputed residual.
            let mut ax = vec![0.0; n];
            a.matvec_into(&x, &mut ax);
            matvecs += 1;
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
            precond(&r, &mut z);
            let zr: &[f64] = if inv_diag.is_some() { &z } else { &r };
            p.copy_from_slice(zr);
            rz = dot(&r, zr);
            target *= 0.5;
            continue;
        }

        let rz_new = if inv_diag.is_some() {
            precond(&r, &mut z);
            dot(&r, &z)
        } else {
            rr
        };
        let beta = rz_new / rz;
        rz = rz_new;
        let zr: &[f64] = if inv_diag.is_some() { &z } else { &r };
        for i in 0..n {
            p[i] = zr[i] + beta * p[i];
        }
    }

    if !converged {
        final_rel = true_residual_norm(a, &x, b) / bnorm;
        matvecs += 1;
    }
    report.iterations = iterations;
    report.final_rel_residual = vec![final_rel];
    report.converged = vec![converged];
    report.matvec_count = matvecs;
    report.wall_time = start.elapsed().as_secs_f64();
    if converged {
        Ok(Solution { x, report })
    } else {
        Err(Error::NotConverged(Box::new(NotConverged { x, report })))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}
