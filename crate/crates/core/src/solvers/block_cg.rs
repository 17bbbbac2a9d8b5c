//! Block conjugate gradient with column deflation.
//!
//! All right-hand sides share one block Krylov subspace. Per iteration:
//!
//! ```text
//! Q = A P                     alpha = (P^T Q)^-1 (Z^T R)
//! X += P alpha                R -= Q alpha
//! beta = (Z_old^T R_old)^-1 (R^T Z)[:, active]
//! P = Z[:, active] + P beta
//! ```
//!
//! Converged columns are frozen and dropped from `R`, `Z` and `P`, so the
//! block shrinks as iteration proceeds. The small Gram systems are solved
//! with [`SymFactor`], which degrades to a rank-revealing pivoted
//! factorization when the residual block loses rank (duplicate or linearly
//! dependent right-hand sides).
//!
//! Internally every block is stored row-major (`n x width`) so each grid row
//! touches one contiguous strip of `width` values.

use std::time::Instant;

use super::small::SymFactor;
use super::{inverse_diagonal, norm2, BlockSolution, MultiVector, Preconditioner, SolveReport, SolverConfig};
use crate::sparse::CsrMatrix;
use crate::{Error, NotConverged, Result};

/// Calls `$f::<W>` for common block widths so the inner loops see a
/// compile-time width, falling back to the runtime width otherwise.
macro_rules! with_width {
    ($w:expr, $recv:ident . $f:ident ( $($arg:expr),* )) => {
        match $w {
            1 => $recv.$f::<1>($($arg),*),
            2 => $recv.$f::<2>($($arg),*),
            3 => $recv.$f::<3>($($arg),*),
            4 => $recv.$f::<4>($($arg),*),
            5 => $recv.$f::<5>($($arg),*),
            6 => $recv.$f::<6>($($arg),*),
            7 => $recv.$f::<7>($($arg),*),
            8 => $recv.$f::<8>($($arg),*),
            9 => $recv.$f::<9>($($arg),*),
            10 => $recv.$f::<10>($($arg),*),
            11 => $recv.$f::<11>($($arg),*),
            12 => $recv.$f::<12>($($arg),*),
            16 => $recv.$f::<16>($($arg),*),
            _ => $recv.$f::<0>($($arg),*),
        }
    };
    ($w:expr, $f:ident ( $($arg:expr),* )) => {
        match $w {
            1 => $f::<1>($($arg),*),
            2 => $f::<2>($($arg),*),
            3 => $f::<3>($($arg),*),
            4 => $f::<4>($($arg),*),
            5 => $f::<5>($($arg),*),
            6 => $f::<6>($($arg),*),
            7 => $f::<7>($($arg),*),
            8 => $f::<8>($($arg),*),
            9 => $f::<9>($($arg),*),
            10 => $f::<10>($($arg),*),
            11 => $f::<11>($($arg),*),
            12 => $f::<12>($($arg),*),
            16 => $f::<16>($($arg),*),
            _ => $f::<0>($($arg),*),
        }
    };
}

pub fn block_cg(a: impl AsRef<CsrMatrix>, b: &MultiVector, cfg: &SolverConfig) -> Result<BlockSolution> {
    let a = a.as_ref();
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was just checked.
            return unsafe { block_cg_avx2(a, b, cfg) };
        }
    }
    block_cg_impl(a, b, cfg)
}

/// Wider vectors for the same operations in the same order (no fused
/// multiply-add), so results match the portable path bitwise.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn block_cg_avx2(a: &CsrMatrix, b: &MultiVector, cfg: &SolverConfig) -> Result<BlockSolution> {
    block_cg_impl(a, b, cfg)
}

#[inline(always)]
fn block_cg_impl(a: &CsrMatrix, b: &MultiVector, cfg: &SolverConfig) -> Result<BlockSolution> {
    cfg.validate()?;
    let n = a.dim();
    let s = b.ncols();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.nrows(),
        });
    }
    if s == 0 {
        return Err(Error::InvalidConfig("block_cg needs at least one right-hand side".into()));
    }
    if b.as_col_major().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("right-hand sides must be finite".into()));
    }
    let start = Instant::now();
    let tol = cfg.rel_tol;
    let inv_diag = match cfg.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => Some(inverse_diagonal(a)?),
    };

    let bnorm: Vec<f64> = b.columns().map(norm2).collect();
    let mut converged: Vec<bool> = bnorm.iter().map(|&v| v == 0.0).collect();
    let mut final_rel: Vec<f64> = bnorm.iter().map(|&v| if v == 0.0 { 0.0 } else { 1.0 }).collect();
    let mut target = vec![tol; s];
    let mut active: Vec<usize> = (0..s).filter(|&j| !converged[j]).collect();
    let mut w = active.len();

    let mut x = vec![0.0; n * s];
    let mut r = vec![0.0; n * w];
    for (c, &j) in active.iter().enumerate() {
        for (i, &v) in b.col(j).iter().enumerate() {
            r[i * w + c] = v;
        }
    }
    let mut z = match &inv_diag {
        Some(d) => {
            let mut z = r.clone();
            for (i, row) in z.chunks_exact_mut(w.max(1)).enumerate() {
                row.iter_mut().for_each(|v| *v *= d[i]);
            }
            z
        }
        None => Vec::new(),
    };
    let mut gram = {
        let zr = if inv_diag.is_some() { &z } else { &r };
        let mut g = vec![0.0; w * w];
        for i in 0..n {
            let rrow = &r[i * w..][..w];
            let zrow = &zr[i * w..][..w];
            accumulate_upper(&mut g, rrow, zrow, w);
        }
        mirror(&mut g, w);
        g
    };
    let mut p = if inv_diag.is_some() { z.clone() } else { r.clone() };
    let mut q = vec![0.0; n * w];

    let mut iterations = 0;
    let mut matvecs = 0;
    let mut col_x = vec![0.0; n];
    let mut col_ax = vec![0.0; n];

    while w > 0 && iterations < cfg.max_iter {
        let mut pq = vec![0.0; w * w];
        with_width!(w, block_matvec_gram(a, &p, &mut q, &mut pq));
        matvecs += w;
        iterations += 1;
        if (0..w).any(|c| !pq[c * w + c].is_finite()) {
            break;
        }

        let alpha = SymFactor::new(&pq, w).solve(&gram, w);

        let mut rz = vec![0.0; w * w];
        let mut rr = vec![0.0; w];
        let mut step = Step {
            p: &p,
            q: &q,
            alpha: &alpha,
            x: &mut x,
            s,
            active: &active,
            r: &mut r,
            z: &mut z,
            inv_diag: inv_diag.as_deref(),
            rz: &mut rz,
            rr: &mut rr,
        };
        with_width!(w, step.run());
        if inv_diag.is_none() {
            for c in 0..w {
                rr[c] = rz[c * w + c];
            }
        }

        for (c, &j) in active.iter().enumerate() {
            if rr[c].sqrt() / bnorm[j] > target[j] {
                continue;
            }
            for i in 0..n {
                col_x[i] = x[i * s + j];
            }
            a.matvec_into(&col_x, &mut col_ax);
            matvecs += 1;
            let true_rel = residual_norm(b.col(j), &col_ax) / bnorm[j];
            final_rel[j] = true_rel;
            if true_rel <= tol {
                converged[j] = true;
            } else {
                target[j] *= 0.5;
            }
        }
        let keep: Vec<usize> = (0..w).filter(|&c| !converged[active[c]]).collect();
        if keep.is_empty() {
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }

        // beta = G_old^-1 (R^T Z)[:, keep]
        let w2 = keep.len();
        let mut rhs = vec![0.0; w * w2];
        for c1 in 0..w {
            for (c2, &k) in keep.iter().enumerate() {
                rhs[c1 * w2 + c2] = rz[c1 * w + k];
            }
        }
        let beta = SymFactor::new(&gram, w).solve(&rhs, w2);

        // P = Z[:, keep] + P beta, compacting R and Z to the kept columns in place.
        let compact = w2 < w;
        with_width!(w, new_directions(&mut p, &mut r, &mut z, inv_diag.is_some(), &beta, &keep));
        if compact {
            p.truncate(n * w2);
            r.truncate(n * w2);
            if inv_diag.is_some() {
                z.truncate(n * w2);
            }
            q.truncate(n * w2);
        }
        let mut g2 = vec![0.0; w2 * w2];
        for (c1, &k1) in keep.iter().enumerate() {
            for (c2, &k2) in keep.iter().enumerate() {
                g2[c1 * w2 + c2] = rz[k1 * w + k2];
            }
        }
        gram = g2;
        active = keep.iter().map(|&c| active[c]).collect();
        w = w2;
    }

    // Recompute residuals of the columns that never converged.
    for j in 0..s {
        if !converged[j] {
            for i in 0..n {
                col_x[i] = x[i * s + j];
            }
            a.matvec_into(&col_x, &mut col_ax);
            matvecs += 1;
            final_rel[j] = residual_norm(b.col(j), &col_ax) / bnorm[j];
        }
    }

    let mut xcols = vec![0.0; n * s];
    for i in 0..n {
        for j in 0..s {
            xcols[j * n + i] = x[i * s + j];
        }
    }
    let report = SolveReport {
        iterations,
        final_rel_residual: final_rel,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        matvec_count: matvecs,
    };
    if report.all_converged() {
        Ok(BlockSolution {
            x: MultiVector::from_col_major(n, s, xcols)?,
            report,
        })
    } else {
        Err(Error::NotConverged(Box::new(NotConverged { x: xcols, report })))
    }
}


/// Block width: `W` when nonzero, otherwise the runtime value.
#[inline(always)]
fn width<const W: usize>(runtime: usize) -> usize {
    if W == 0 {
        runtime
    } else {
        W
    }
}

/// `Q = A P` together with the upper triangle of `P^T Q`, mirrored.
#[inline(always)]
fn block_matvec_gram<const W: usize>(a: &CsrMatrix, p: &[f64], q: &mut [f64], pq: &mut [f64]) {
    let n = a.dim();
    let w = width::<W>(p.len() / n.max(1));
    let (rp, ci, av) = (a.row_ptr(), a.col_idx(), a.values());
    for i in 0..n {
        let qrow = &mut q[i * w..][..w];
        qrow.fill(0.0);
        for k in rp[i]..rp[i + 1] {
            let v = av[k];
            let prow = &p[ci[k] * w..][..w];
            for c in 0..w {
                qrow[c] += v * prow[c];
            }
        }
        accumulate_upper(pq, &p[i * w..][..w], qrow, w);
    }
    mirror(pq, w);
}

/// One solution/residual update sweep.
struct Step<'a> {
    p: &'a [f64],
    q: &'a [f64],
    alpha: &'a [f64],
    x: &'a mut [f64],
    s: usize,
    active: &'a [usize],
    r: &'a mut [f64],
    z: &'a mut [f64],
    inv_diag: Option<&'a [f64]>,
    rz: &'a mut [f64],
    rr: &'a mut [f64],
}

impl Step<'_> {
    /// `X += P alpha`, `R -= Q alpha`, `Z = D^-1 R`; accumulates `R^T Z`
    /// and, when preconditioned, the squared residual norms.
    #[inline(always)]
    fn run<const W: usize>(&mut self) {
        let w = width::<W>(self.active.len());
        let n = self.p.len() / w;
        let s = self.s;
        let (mut dx_buf, mut dr_buf) = ([0.0; W], [0.0; W]);
        let (mut dx_heap, mut dr_heap) = (Vec::new(), Vec::new());
        let (dx, dr): (&mut [f64], &mut [f64]) = if W == 0 {
            dx_heap.resize(w, 0.0);
            dr_heap.resize(w, 0.0);
            (&mut dx_heap, &mut dr_heap)
        } else {
            (&mut dx_buf, &mut dr_buf)
        };
        for i in 0..n {
            let prow = &self.p[i * w..][..w];
            let qrow = &self.q[i * w..][..w];
            dx.fill(0.0);
            dr.fill(0.0);
            for k in 0..w {
                let (pk, qk) = (prow[k], qrow[k]);
                let arow = &self.alpha[k * w..][..w];
                for c in 0..w {
                    dx[c] += pk * arow[c];
                    dr[c] += qk * arow[c];
                }
            }
            let xrow = &mut self.x[i * s..][..s];
            if w == s {
                for c in 0..w {
                    xrow[c] += dx[c];
                }
            } else {
                for (c, &j) in self.active.iter().enumerate() {
                    xrow[j] += dx[c];
                }
            }
            let rrow = &mut self.r[i * w..][..w];
            for c in 0..w {
                rrow[c] -= dr[c];
            }
            match self.inv_diag {
                Some(d) => {
                    let zrow = &mut self.z[i * w..][..w];
                    for c in 0..w {
                        zrow[c] = d[i] * rrow[c];
                        self.rr[c] += rrow[c] * rrow[c];
                    }
                    accumulate_upper(self.rz, rrow, zrow, w);
                }
                None => accumulate_upper(self.rz, rrow, rrow, w),
            }
        }
        mirror(self.rz, w);
    }
}

/// `P = Z[:, keep] + P beta` row by row. When columns are dropped, `R` and
/// `Z` are compacted to `keep` in the same sweep. Row `i` of the compacted
/// layout never starts after row `i` of the old one, so working in place is
/// safe once the old row has been read.
#[inline(always)]
fn new_directions<const W: usize>(
    p: &mut [f64],
    r: &mut [f64],
    z: &mut [f64],
    precond: bool,
    beta: &[f64],
    keep: &[usize],
) {
    let w2 = keep.len();
    let w = width::<W>(beta.len() / w2);
    let n = p.len() / w;
    if W != 0 && w2 == w {
        // Nothing dropped: update P in place.
        let mut acc = [0.0; W];
        for i in 0..n {
            let row = i * w..(i + 1) * w;
            acc.copy_from_slice(if precond { &z[row.clone()] } else { &r[row.clone()] });
            let prow = &mut p[row];
            for kk in 0..w {
                let pk = prow[kk];
                let brow = &beta[kk * w..][..w];
                for c in 0..w {
                    acc[c] += pk * brow[c];
                }
            }
            prow.copy_from_slice(&acc);
        }
        return;
    }
    let compact = w2 < w;
    let mut ptmp = vec![0.0; w2];
    for i in 0..n {
        let old = i * w;
        {
            let prow = &p[old..old + w];
            let zrow = if precond { &z[old..old + w] } else { &r[old..old + w] };
            for (c2, &k) in keep.iter().enumerate() {
                ptmp[c2] = zrow[k];
            }
            for kk in 0..w {
                let pk = prow[kk];
                let brow = &beta[kk * w2..][..w2];
                for c2 in 0..w2 {
                    ptmp[c2] += pk * brow[c2];
                }
            }
        }
        p[i * w2..(i + 1) * w2].copy_from_slice(&ptmp);
        if compact {
            for (c2, &k) in keep.iter().enumerate() {
                r[i * w2 + c2] = r[old + k];
                if precond {
                    z[i * w2 + c2] = z[old + k];
                }
            }
        }
    }
}

/// `g[c1][c2] += u[c1] * v[c2]` for `c2 >= c1`.
#[inline(always)]
fn accumulate_upper(g: &mut [f64], u: &[f64], v: &[f64], w: usize) {
    for c1 in 0..w {
        let uc = u[c1];
        let grow = &mut g[c1 * w..][..w];
        for c2 in c1..w {
            grow[c2] += uc * v[c2];
        }
    }
}

fn mirror(g: &mut [f64], w: usize) {
    for c1 in 0..w {
        for c2 in 0..c1 {
            g[c1 * w + c2] = g[c2 * w + c1];
        }
    }
}

fn residual_norm(b: &[f64], ax: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (bi, ai) in b.iter().zip(ax) {
        let d = bi - ai;
        acc += d * d;
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::cg;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 2.5;
            if i > 0 {
                d[i * n + i - 1] = -1.0;
                d[(i - 1) * n + i] = -1.0;
            }
        }
        CsrMatrix::from_dense(n, &d).unwrap()
    }

    fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        num / norm2(b)
    }

    #[test]
    fn single_column_matches_cg() {
        let a = laplace_1d(40);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin() + 0.2).collect();
        let cfg = SolverConfig::with_tol(1e-10);
        let x_cg = cg(&a, &b, &cfg).unwrap().x;
        let sol = block_cg(&a, &MultiVector::from_columns(40, &[&b]).unwrap(), &cfg).unwrap();
        assert!(sol.report.converged[0]);
        assert!(rel_diff(sol.x.col(0), &x_cg) <= 10.0 * cfg.rel_tol);
    }

    #[test]
    fn duplicate_columns() {
        let a = laplace_1d(30);
        let b: Vec<f64> = (0..30).map(|i| 1.0 + (i % 7) as f64).collect();
        let cfg = SolverConfig::with_tol(1e-10);
        let x_cg = cg(&a, &b, &cfg).unwrap().x;
        let sol = block_cg(&a, &MultiVector::from_columns(30, &[&b, &b]).unwrap(), &cfg).unwrap();
        for j in 0..2 {
            assert!(rel_diff(sol.x.col(j), &x_cg) <= 10.0 * cfg.rel_tol);
        }
    }

    #[test]
    fn zero_column_is_trivial() {
        let a = laplace_1d(10);
        let b = vec![1.0; 10];
        let zero = vec![0.0; 10];
        let sol = block_cg(&a, &MultiVector::from_columns(10, &[&zero, &b]).unwrap(), &SolverConfig::with_tol(1e-12)).unwrap();
        assert!(sol.x.col(0).iter().all(|&v| v == 0.0));
        assert_eq!(sol.report.final_rel_residual[0], 0.0);
        assert!(sol.report.final_rel_residual[1] <= 1e-12);
    }

    #[test]
    fn errors() {
        let a = laplace_1d(10);
        let cfg = SolverConfig::default();
        assert!(matches!(
            block_cg(&a, &MultiVector::zeros(9, 2), &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(block_cg(&a, &MultiVector::zeros(10, 0), &cfg).is_err());
        let tight = SolverConfig {
            rel_tol: 1e-14,
            max_iter: 2,
            ..Default::default()
        };
        let b = MultiVector::from_columns(10, &[vec![1.0; 10]]).unwrap();
        match block_cg(&a, &b, &tight) {
            Err(Error::NotConverged(nc)) => {
                assert_eq!(nc.report.iterations, 2);
                assert_eq!(nc.x.len(), 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jacobi_block() {
        let a = laplace_1d(25);
        let cols: Vec<Vec<f64>> = (0..3).map(|j| (0..25).map(|i| ((i * (j + 2)) % 5) as f64 - 1.5).collect()).collect();
        let cfg = SolverConfig {
            rel_tol: 1e-11,
            preconditioner: Preconditioner::Jacobi,
            ..Default::default()
        };
        let sol = block_cg(&a, &MultiVector::from_columns(25, &cols).unwrap(), &cfg).unwrap();
        for (j, b) in cols.iter().enumerate() {
            let x = cg(&a, b, &cfg).unwrap().x;
            assert!(rel_diff(sol.x.col(j), &x) <= 10.0 * cfg.rel_tol);
        }
    }
}
