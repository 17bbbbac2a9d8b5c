//! Factorizations of the small symmetric positive semidefinite matrices that
//! appear inside block CG.

/// Pivots below `RANK_TOL * max(diag)` are treated as zero.
const RANK_TOL: f64 = 1e-13;

/// `P^T G P = L L^T` restricted to the leading `rank` pivots.
///
/// Plain Cholesky is used when every pivot is safely positive; otherwise the
/// factorization restarts with complete diagonal pivoting and stops at the
/// numerical rank. Solves then return the basic solution that is zero on the
/// dropped pivots, which is exact for consistent rank-deficient systems.
#[derive(Debug, Clone)]
pub(crate) struct SymFactor {
    m: usize,
    perm: Vec<usize>,
    /// Row-major `m x m`, lower triangle used.
    l: Vec<f64>,
    rank: usize,
}

impl SymFactor {
    pub fn new(g: &[f64], m: usize) -> Self {
        debug_assert_eq!(g.len(), m * m);
        let scale = (0..m).map(|i| g[i * m + i]).fold(0.0_f64, f64::max);
        let floor = RANK_TOL * scale;
        match Self::cholesky(g, m, floor, false) {
            Some(f) => f,
            None => Self::cholesky(g, m, floor, true).expect("pivoted factorization always succeeds"),
        }
    }

    fn cholesky(g: &[f64], m: usize, floor: f64, pivot: bool) -> Option<Self> {
        let mut a = g.to_vec();
        let mut perm: Vec<usize> = (0..m).collect();
        let mut rank = m;
        for k in 0..m {
            if pivot {
                let (best, _) = (k..m)
                    .map(|i| (i, a[i * m + i]))
                    .fold((k, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
                if best != k {
                    swap_sym(&mut a, m, k, best);
                    perm.swap(k, best);
                }
            }
            let d = a[k * m + k];
            if !(d > floor) || !d.is_finite() {
                if !pivot {
                    return None;
                }
                rank = k;
                break;
            }
            let d = d.sqrt();
            a[k * m + k] = d;
            for i in k + 1..m {
                a[i * m + k] /= d;
            }
            // Full trailing update keeps the block symmetric for later swaps.
            for i in k + 1..m {
                let lik = a[i * m + k];
                for j in k + 1..m {
                    a[i * m + j] -= lik * a[j * m + k];
                }
            }
        }
        Some(SymFactor { m, perm, l: a, rank })
    }

    #[cfg(test)]
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Solves `G Y = B` for row-major `B` of shape `m x cols`.
    pub fn solve(&self, b: &[f64], cols: usize) -> Vec<f64> {
        let (m, r) = (self.m, self.rank);
        debug_assert_eq!(b.len(), m * cols);
        let mut y = vec![0.0; m * cols];
        let mut t = vec![0.0; r];
        for c in 0..cols {
            for i in 0..r {
                let mut s = b[self.perm[i] * cols + c];
                for k in 0..i {
                    s -= self.l[i * m + k] * t[k];
                }
                t[i] = s / self.l[i * m + i];
            }
            for i in (0..r).rev() {
                let mut s = t[i];
                for k in i + 1..r {
                    s -= self.l[k * m + i] * t[k];
                }
                t[i] = s / self.l[i * m + i];
            }
            for i in 0..r {
                y[self.perm[i] * cols + c] = t[i];
            }
        }
        y
    }
}

/// Symmetric row/column swap on the full matrix.
fn swap_sym(a: &mut [f64], m: usize, i: usize, j: usize) {
    for c in 0..m {
        a.swap(i * m + c, j * m + c);
    }
    for r in 0..m {
        a.swap(r * m + i, r * m + j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matmul(a: &[f64], b: &[f64], m: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * cols];
        for i in 0..m {
            for c in 0..cols {
                out[i * cols + c] = (0..m).map(|k| a[i * m + k] * b[k * cols + c]).sum();
            }
        }
        out
    }

    #[test]
    fn spd_solve() {
        let g = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let f = SymFactor::new(&g, 3);
        assert_eq!(f.rank(), 3);
        let b = [1.0, 0.0, 2.0, 1.0, 3.0, -1.0];
        let y = f.solve(&b, 2);
        for (u, v) in matmul(&g, &y, 3, 2).iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn rank_deficient_consistent() {
        // Duplicate direction: G = v v^T + w w^T with v repeated.
        let g = [2.0, 2.0, 1.0, 2.0, 2.0, 1.0, 1.0, 1.0, 3.0];
        let f = SymFactor::new(&g, 3);
        assert_eq!(f.rank(), 2);
        // Right-hand side in the range of G.
        let x_true = [1.0, -2.0, 0.5];
        let b = matmul(&g, &x_true, 3, 1);
        let y = f.solve(&b, 1);
        for (u, v) in matmul(&g, &y, 3, 1).iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let f = SymFactor::new(&[0.0; 4], 2);
        assert_eq!(f.rank(), 0);
        assert_eq!(f.solve(&[0.0, 0.0], 1), vec![0.0, 0.0]);
    }
}
