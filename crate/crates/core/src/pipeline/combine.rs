use rand::Rng;
use rand_distr::StandardNormal;

use super::basis::BasisSet;
use super::NoiseConfig;
use crate::discretize::{lane_sums, residual_ratio, DiscreteOperator};
use crate::grid::{GridSpec, ScalarField, Unit};
use crate::seeds;
use crate::{Error, Result};

/// Normalizers with smaller magnitude are rejected.
const MIN_NORMALIZER: f64 = 1e-6;

/// `alpha_i = mu_i / sum(mu)`, nudged so the float weights sum to one
/// within rounding. `None` when the normalizer is too close to zero.
pub fn weights_from_mu(mu: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = mu.iter().sum();
    if !(total.abs() >= MIN_NORMALIZER && total.is_finite()) {
        return None;
    }
    let mut alpha: Vec<f64> = mu.iter().map(|m| m / total).collect();
    let excess = compensated_sum(&alpha) - 1.0;
    if excess != 0.0 {
        let big = (0..alpha.len())
            .max_by(|&a, &b| alpha[a].abs().total_cmp(&alpha[b].abs()))
            .expect("non-empty");
        alpha[big] -= excess;
    }
    Some(alpha)
}

/// Neumaier summation.
pub(crate) fn compensated_sum(v: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in v {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub(crate) fn draw_weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mu: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(alpha) = weights_from_mu(&mu) {
            return alpha;
        }
    }
}

/// Noise on every cell that does not touch a chip face; exactly zero on
/// the rest.
pub fn interior_noise<R: Rng>(grid: &GridSpec, noise: &NoiseConfig, rng: &mut R) -> Vec<f64> {
    let mut eps = vec![0.0; grid.len()];
    if noise.is_none() {
        return eps;
    }
    let [nx, ny, nz] = grid.counts;
    if nx < 3 || ny < 3 || nz < 3 {
        return eps;
    }
    let slots = eps.chunks_exact_mut(nx).enumerate().filter_map(|(row, cells)| {
        let (iy, iz) = (row % ny, row / ny);
        (iy > 0 && iy < ny - 1 && iz > 0 && iz < nz - 1).then(|| &mut cells[1..nx - 1])
    });
    noise.fill(rng, slots.flatten());
    eps
}

/// Cells per strip of the packed basis.
const LANES: usize = 32;

/// Basis columns regrouped strip by strip: the `LANES` values of every
/// column for one range of cells sit next to each other. The last strip is
/// zero padded.
pub(crate) struct PackedBasis {
    n: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl PackedBasis {
    pub(crate) fn new(basis: &BasisSet) -> Self {
        let n = basis.grid().map_or(0, |g| g.len());
        let n_cols = basis.n_basis();
        let strips = n.div_ceil(LANES);
        let mut data = vec![0.0; strips * n_cols * LANES];
        for i in 0..n_cols {
            for (b, chunk) in basis.column(i).chunks(LANES).enumerate() {
                let at = (b * n_cols + i) * LANES;
                data[at..at + chunk.len()].copy_from_slice(chunk);
            }
        }
        PackedBasis { n, n_cols, data }
    }

    /// `x_s = sum_i weights[s][i] * column_i`, plus the incoming `x_s`
    /// when `add` is set, for a batch of weight vectors. Each strip stays
    /// in L1 while the whole batch is applied, and partial sums stay in
    /// registers. Every cell accumulates the columns in index order with
    /// fused multiply-adds starting from zero, whatever the batch size, and
    /// the incoming value is added last.
    pub(crate) fn combine_into(&self, weights: &[Vec<f64>], xs: &mut [Vec<f64>], add: bool) {
        assert_eq!(weights.len(), xs.len());
        assert!(xs.iter().all(|x| x.len() == self.n));
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: AVX2 and FMA support were just checked.
                return unsafe { self.combine_fma(weights, xs, add) };
            }
        }
        self.combine_portable(weights, xs, add)
    }

    /// Hardware fused multiply-add rounds exactly like `f64::mul_add`, so
    /// results are bitwise identical to the portable path.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn combine_fma(&self, weights: &[Vec<f64>], xs: &mut [Vec<f64>], add: bool) {
        self.combine_portable(weights, xs, add)
    }

    #[inline(always)]
    fn combine_portable(&self, weights: &[Vec<f64>], xs: &mut [Vec<f64>], add: bool) {
        if self.n_cols == 0 {
            return;
        }
        for (b, strip) in self.data.chunks_exact(self.n_cols * LANES).enumerate() {
            let start = b * LANES;
            let len = LANES.min(self.n - start);
            for (x, w) in xs.iter_mut().zip(weights) {
                let mut acc = [0.0; LANES];
                for (v, &a) in strip.chunks_exact(LANES).zip(w) {
                    for k in 0..LANES {
                        acc[k] = a.mul_add(v[k], acc[k]);
                    }
                }
                let x = &mut x[start..start + len];
                if add {
                    for (xv, a) in x.iter_mut().zip(&acc) {
                        *xv = a + *xv;
                    }
                } else {
                    x.copy_from_slice(&acc[..len]);
                }
            }
        }
    }
}

/// Affine combination of all basis columns with the given weights, no
/// noise.
pub fn combine_with_weights(basis: &BasisSet, weights: &[f64]) -> Result<Vec<f64>> {
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    if weights.len() != basis.n_basis() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_basis(),
            found: weights.len(),
        });
    }
    let mut xs = [vec![0.0; basis.column(0).len()]];
    PackedBasis::new(basis).combine_into(&[weights.to_vec()], &mut xs, false);
    let [x] = xs;
    Ok(x)
}

/// Draws the weights and the noise of one sample. The noise lands in the
/// buffer that [`PackedBasis::combine_into`] later completes.
pub(crate) fn draw_sample(basis: &BasisSet, sample_seed: u64, noise: &NoiseConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seeds::rng(sample_seed);
    let weights = draw_weights(basis.n_basis(), &mut rng);
    let grid = basis.grid().expect("non-empty basis");
    (weights, interior_noise(grid, noise, &mut rng))
}

/// New temperature field from the basis: random affine weights over all
/// basis columns plus interior noise. Returns `(x_new, weights)`.
pub fn combine_basis(basis: &BasisSet, sample_seed: u64, noise: &NoiseConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    noise.validate()?;
    let (weights, x) = draw_sample(basis, sample_seed, noise);
    let mut xs = [x];
    PackedBasis::new(basis).combine_into(std::slice::from_ref(&weights), &mut xs, !noise.is_none());
    let [x] = xs;
    Ok((x, weights))
}

/// Power map for which `x` is the exact discrete temperature, plus the
/// relative residual of the resulting triple, in one sweep. Produces the
/// same values as `power_from_rhs(op, A x)` followed by
/// `relative_residual`.
pub(crate) fn action(op: &DiscreteOperator, x: &[f64]) -> Result<(ScalarField, f64)> {
    let n = op.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    let mut ax = vec![0.0; n];
    op.a.matvec_into(x, &mut ax);
    finish_action(op, ax)
}

/// `q = (ax - g) / m` and the relative residual, accumulated in cell order.
fn finish_action(op: &DiscreteOperator, mut ax: Vec<f64>) -> Result<(ScalarField, f64)> {
    let (m, g) = (&op.volumes[..], &op.g[..]);
    let (num, den) = lane_sums(ax.len(), |i| {
        let v = ax[i];
        let qi = (v - g[i]) / m[i];
        let rhs = m[i] * qi + g[i];
        ax[i] = qi;
        ((v - rhs) * (v - rhs), rhs * rhs)
    });
    Ok((ScalarField::new(op.grid, ax, Unit::PowerDensity)?, residual_ratio(num, den)))
}

/// An assembled operator as coefficient planes, so `A x` needs no column
/// indices and vectorizes along x. The matrix is symmetric, so each
/// off-diagonal plane serves both neighbors. Every row sums the neighbors
/// it has in CSR column order, so results match [`action`] bitwise.
pub(crate) struct Stencil {
    diag: Vec<f64>,
    /// Coupling of cell `i` to `i + 1`, `i + nx` and `i + nx * ny`.
    upper: [Vec<f64>; 3],
}

impl Stencil {
    /// `None` unless every row holds exactly its 7-point neighbors with
    /// symmetric couplings.
    pub(crate) fn new(op: &DiscreteOperator) -> Option<Self> {
        let grid = &op.grid;
        let [nx, ny, nz] = grid.counts;
        let n = op.dim();
        let strides = [1, nx, nx * ny];
        let (rp, ci, av) = (op.a.row_ptr(), op.a.col_idx(), op.a.values());
        let mut diag = vec![0.0; n];
        let mut upper: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
        let counts = [nx, ny, nz];
        let entry = |i: usize, j: usize| (rp[i]..rp[i + 1]).find(|&k| ci[k] == j).map(|k| av[k]);
        for i in 0..n {
            let c = grid.coords(i);
            diag[i] = entry(i, i)?;
            for t in 0..3 {
                if c[t] + 1 < counts[t] {
                    upper[t][i] = entry(i, i + strides[t])?;
                }
            }
        }
        let mut expected = Vec::with_capacity(7);
        for i in 0..n {
            let c = grid.coords(i);
            expected.clear();
            for t in [2, 1, 0] {
                if c[t] > 0 {
                    expected.push((i - strides[t], upper[t][i - strides[t]]));
                }
            }
            expected.push((i, diag[i]));
            for t in [0, 1, 2] {
                if c[t] + 1 < counts[t] {
                    expected.push((i + strides[t], upper[t][i]));
                }
            }
            let row = rp[i]..rp[i + 1];
            if row.len() != expected.len() {
                return None;
            }
            for (k, &(col, v)) in row.zip(&expected) {
                if ci[k] != col || av[k].to_bits() != v.to_bits() {
                    return None;
                }
            }
        }
        Some(Stencil { diag, upper })
    }

    pub(crate) fn action(&self, op: &DiscreteOperator, x: &[f64]) -> Result<(ScalarField, f64)> {
        let n = op.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: AVX2 support was just checked.
                let ax = unsafe { self.apply_avx2(op, x) };
                return finish_action(op, ax);
            }
        }
        finish_action(op, self.apply(op, x))
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn apply_avx2(&self, op: &DiscreteOperator, x: &[f64]) -> Vec<f64> {
        self.apply(op, x)
    }

    #[inline(always)]
    fn apply(&self, op: &DiscreteOperator, x: &[f64]) -> Vec<f64> {
        let [nx, ny, nz] = op.grid.counts;
        let mut ax = vec![0.0; x.len()];
        for iz in 0..nz {
            for iy in 0..ny {
                let base = nx * (iy + ny * iz);
                let (ym, yp, zm, zp) = (iy > 0, iy + 1 < ny, iz > 0, iz + 1 < nz);
                let row = &mut ax[base..base + nx];
                match (ym, yp, zm, zp) {
                    (true, true, true, true) => self.row::<true, true, true, true>(op, x, base, row),
                    (true, true, true, false) => self.row::<true, true, true, false>(op, x, base, row),
                    (true, true, false, true) => self.row::<true, true, false, true>(op, x, base, row),
                    (true, true, false, false) => self.row::<true, true, false, false>(op, x, base, row),
                    (true, false, true, true) => self.row::<true, false, true, true>(op, x, base, row),
                    (true, false, true, false) => self.row::<true, false, true, false>(op, x, base, row),
                    (true, false, false, true) => self.row::<true, false, false, true>(op, x, base, row),
                    (true, false, false, false) => self.row::<true, false, false, false>(op, x, base, row),
                    (false, true, true, true) => self.row::<false, true, true, true>(op, x, base, row),
                    (false, true, true, false) => self.row::<false, true, true, false>(op, x, base, row),
                    (false, true, false, true) => self.row::<false, true, false, true>(op, x, base, row),
                    (false, true, false, false) => self.row::<false, true, false, false>(op, x, base, row),
                    (false, false, true, true) => self.row::<false, false, true, true>(op, x, base, row),
                    (false, false, true, false) => self.row::<false, false, true, false>(op, x, base, row),
                    (false, false, false, true) => self.row::<false, false, false, true>(op, x, base, row),
                    (false, false, false, false) => self.row::<false, false, false, false>(op, x, base, row),
                }
            }
        }
        ax
    }

    /// One grid row along x, starting at flat index `base`. The const flags
    /// say which y and z neighbors exist.
    #[inline(always)]
    fn row<const YM: bool, const YP: bool, const ZM: bool, const ZP: bool>(
        &self,
        op: &DiscreteOperator,
        x: &[f64],
        base: usize,
        out: &mut [f64],
    ) {
        let [nx, ny, _] = op.grid.counts;
        let (sx, sy) = (nx, nx * ny);
        let [ex, ey, ez] = &self.upper;
        // Sums the y and z minus-side terms, then x-, diag, x+, y+, z+.
        let cell = |i: usize, xm: bool, xp: bool| {
            let mut acc = 0.0;
            if ZM {
                acc += ez[i - sy] * x[i - sy];
            }
            if YM {
                acc += ey[i - sx] * x[i - sx];
            }
            if xm {
                acc += ex[i - 1] * x[i - 1];
            }
            acc += self.diag[i] * x[i];
            if xp {
                acc += ex[i] * x[i + 1];
            }
            if YP {
                acc += ey[i] * x[i + sx];
            }
            if ZP {
                acc += ez[i] * x[i + sy];
            }
            acc
        };
        out[0] = cell(base, false, nx > 1);
        if nx > 2 {
            let (lo, hi) = (base + 1, base + nx - 1);
            let len = hi - lo;
            let inner = &mut out[1..nx - 1];
            let (c2, c3, c4) = (&ex[lo - 1..][..len], &self.diag[lo..hi], &ex[lo..hi]);
            let (x2, x3, x4) = (&x[lo - 1..][..len], &x[lo..hi], &x[lo + 1..][..len]);
            fn pick(on: bool, v: &[f64], at: usize, len: usize) -> &[f64] {
                if on {
                    &v[at..][..len]
                } else {
                    &[]
                }
            }
            let (c0, x0) = (pick(ZM, ez, lo.wrapping_sub(sy), len), pick(ZM, x, lo.wrapping_sub(sy), len));
            let (c1, x1) = (pick(YM, ey, lo.wrapping_sub(sx), len), pick(YM, x, lo.wrapping_sub(sx), len));
            let (c5, x5) = (pick(YP, ey, lo, len), pick(YP, x, lo + sx, len));
            let (c6, x6) = (pick(ZP, ez, lo, len), pick(ZP, x, lo + sy, len));
            for t in 0..len {
                let mut acc = 0.0;
                if ZM {
                    acc += c0[t] * x0[t];
                }
                if YM {
                    acc += c1[t] * x1[t];
                }
                acc += c2[t] * x2[t];
                acc += c3[t] * x3[t];
                acc += c4[t] * x4[t];
                if YP {
                    acc += c5[t] * x5[t];
                }
                if ZP {
                    acc += c6[t] * x6[t];
                }
                inner[t] = acc;
            }
        }
        if nx > 1 {
            out[nx - 1] = cell(base + nx - 1, true, false);
        }
    }
}

/// `q = M⁻¹ (A x - g)` with the operator of group `j`.
pub fn operator_action(basis: &BasisSet, j: usize, x: &[f64]) -> Result<ScalarField> {
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let group = basis
        .groups
        .get(j)
        .ok_or_else(|| Error::InvalidConfig(format!("no basis group {j}")))?;
    Ok(action(&group.operator, x)?.0)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::discretize::{assemble, BoundarySpec};

    fn operator(counts: [usize; 3], seed: u64) -> DiscreteOperator {
        let grid = GridSpec::new(counts, [1e-3, 2e-3, 5e-4]).unwrap();
        let mut rng = seeds::rng(seed);
        let k: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(1.0..400.0)).collect();
        let k = ScalarField::new(grid, k, Unit::Conductivity).unwrap();
        assemble(&k, &grid, &BoundarySpec::mixed(3e4, 25.0, 40.0)).unwrap()
    }

    #[test]
    fn stencil_action_matches_csr_bitwise() {
        for (counts, seed) in [([7, 6, 5], 1), ([3, 3, 3], 2), ([16, 4, 9], 3), ([2, 5, 5], 4), ([1, 4, 3], 5), ([5, 1, 1], 6)] {
            let op = operator(counts, seed);
            let st = Stencil::new(&op).expect("assembled operator");
            let mut rng = seeds::rng(seed + 10);
            let x: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(20.0..90.0)).collect();
            let (q1, r1) = action(&op, &x).unwrap();
            let (q2, r2) = st.action(&op, &x).unwrap();
            assert_eq!(q1, q2);
            assert_eq!(r1.to_bits(), r2.to_bits());
        }
    }

    #[test]
    fn stencil_rejects_other_layouts() {
        let mut op = operator([4, 4, 4], 5);
        let grid = op.grid;
        let dense: Vec<f64> = (0..64 * 64).map(|i| if i % 65 == 0 { 2.0 } else { 0.0 }).collect();
        op.a = crate::sparse::CsrMatrix::from_dense(grid.len(), &dense).unwrap();
        assert!(Stencil::new(&op).is_none());
    }
}
