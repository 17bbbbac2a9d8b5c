//! Cell-centered finite-volume discretization of `-div(k grad u) = q`.
//!
//! Unknowns are cell temperatures. Boundary temperatures never appear as
//! unknowns: Dirichlet and Robin faces contribute a conductance to the
//! diagonal and a lift `g` to the right-hand side, so the linear system is
//! `A x = M q + g` with `M` the diagonal of cell volumes. Units: `A` in W/K,
//! `g` and `b` in W.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{GridSpec, ScalarField, Unit};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    ZMinus,
    ZPlus,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMinus,
        Face::XPlus,
        Face::YMinus,
        Face::YPlus,
        Face::ZMinus,
        Face::ZPlus,
    ];

    pub fn axis(self) -> usize {
        self as usize / 2
    }

    pub fn is_plus(self) -> bool {
        self as usize % 2 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FaceCondition {
    /// Fixed temperature, °C.
    Dirichlet { u0: f64 },
    /// Convection `k du/dn + h (u - u_inf) = 0`; `h` in W/(m²·K), `u_inf` in °C.
    Robin { h: f64, u_inf: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub x_minus: FaceCondition,
    pub x_plus: FaceCondition,
    pub y_minus: FaceCondition,
    pub y_plus: FaceCondition,
    pub z_minus: FaceCondition,
    pub z_plus: FaceCondition,
}

impl BoundarySpec {
    pub fn uniform(cond: FaceCondition) -> Self {
        BoundarySpec {
            x_minus: cond,
            x_plus: cond,
            y_minus: cond,
            y_plus: cond,
            z_minus: cond,
            z_plus: cond,
        }
    }

    pub fn dirichlet(u0: f64) -> Self {
        Self::uniform(FaceCondition::Dirichlet { u0 })
    }

    pub fn robin(h: f64, u_inf: f64) -> Self {
        Self::uniform(FaceCondition::Robin { h, u_inf })
    }

    /// Robin top and bottom, Dirichlet on the four sides.
    pub fn mixed(h: f64, u_inf: f64, u0: f64) -> Self {
        let robin = FaceCondition::Robin { h, u_inf };
        BoundarySpec {
            z_minus: robin,
            z_plus: robin,
            ..Self::dirichlet(u0)
        }
    }

    pub fn face(&self, face: Face) -> FaceCondition {
        match face {
            Face::XMinus => self.x_minus,
            Face::XPlus => self.x_plus,
            Face::YMinus => self.y_minus,
            Face::YPlus => self.y_plus,
            Face::ZMinus => self.z_minus,
            Face::ZPlus => self.z_plus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for face in Face::ALL {
            match self.face(face) {
                FaceCondition::Robin { h, u_inf } => {
                    if !(h > 0.0 && h.is_finite()) {
                        return Err(Error::NonPositiveHtc { face, h });
                    }
                    if !u_inf.is_finite() {
                        return Err(Error::InvalidConfig(format!("{face:?}: u_inf is not finite")));
                    }
                }
                FaceCondition::Dirichlet { u0 } => {
                    if !u0.is_finite() {
                        return Err(Error::InvalidConfig(format!("{face:?}: u0 is not finite")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Assembled system for one conductivity field.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub a: CsrMatrix,
    /// Boundary lift, W.
    pub g: Vec<f64>,
    /// Cell volumes, m³.
    pub volumes: Vec<f64>,
    pub grid: GridSpec,
    pub boundary: BoundarySpec,
    pub k_field_digest: String,
}

impl AsRef<CsrMatrix> for DiscreteOperator {
    fn as_ref(&self) -> &CsrMatrix {
        &self.a
    }
}

impl DiscreteOperator {
    pub fn dim(&self) -> usize {
        self.a.dim()
    }
}

/// Hex SHA-256 of the grid counts and the little-endian field values.
pub fn field_digest(field: &ScalarField) -> String {
    let mut h = Sha256::new();
    for c in field.grid().counts {
        h.update((c as u64).to_le_bytes());
    }
    for v in field.values() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[inline]
fn harmonic_conductance(ka: f64, kb: f64, area: f64, dist: f64) -> f64 {
    2.0 * (ka * kb) / (ka + kb) * area / dist
}

/// Conductance between a boundary cell center and the face, in W/K.
fn boundary_conductance(cond: FaceCondition, k: f64, area: f64, dist: f64) -> (f64, f64) {
    match cond {
        FaceCondition::Dirichlet { u0 } => ((2.0 * k / dist) * area, u0),
        FaceCondition::Robin { h, u_inf } => {
            let h_eff = 1.0 / (dist / (2.0 * k) + 1.0 / h);
            (h_eff * area, u_inf)
        }
    }
}

/// 7-point finite-volume assembly with harmonic-mean face conductivities.
pub fn assemble(k: &ScalarField, grid: &GridSpec, bc: &BoundarySpec) -> Result<DiscreteOperator> {
    grid.validate()?;
    if k.grid() != grid {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: k.values().len(),
        });
    }
    if let Some((cell, &value)) = k
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0 && v.is_finite()))
    {
        return Err(Error::NonPositiveConductivity { cell, value });
    }
    bc.validate()?;

    let kv = k.values();
    let [nx, ny, nz] = grid.counts;
    let n = grid.len();
    let h = grid.spacing();
    let area = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
    let stride = [1, nx, nx * ny];
    let dims = [nx, ny, nz];

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(7 * n);
    let mut values = Vec::with_capacity(7 * n);
    let mut g = vec![0.0; n];
    row_ptr.push(0);

    for i in 0..n {
        let c = grid.coords(i);
        let ki = kv[i];
        let mut diag = 0.0;
        let mut lower = Vec::with_capacity(3);
        let mut upper = Vec::with_capacity(3);
        // Axes visited z, y, x on the minus side and x, y, z on the plus side
        // so columns come out sorted.
        for axis in [2, 1, 0] {
            if c[axis] > 0 {
                let j = i - stride[axis];
                let cond = harmonic_conductance(ki, kv[j], area[axis], h[axis]);
                diag += cond;
                lower.push((j, -cond));
            } else {
                let face = Face::ALL[2 * axis];
                let (cond, temp) = boundary_conductance(bc.face(face), ki, area[axis], h[axis]);
                diag += cond;
                g[i] += cond * temp;
            }
        }
        for axis in [0, 1, 2] {
            if c[axis] + 1 < dims[axis] {
                let j = i + stride[axis];
                let cond = harmonic_conductance(ki, kv[j], area[axis], h[axis]);
                diag += cond;
                upper.push((j, -cond));
            } else {
                let face = Face::ALL[2 * axis + 1];
                let (cond, temp) = boundary_conductance(bc.face(face), ki, area[axis], h[axis]);
                diag += cond;
                g[i] += cond * temp;
            }
        }
        for (j, v) in lower {
            col_idx.push(j);
            values.push(v);
        }
        col_idx.push(i);
        values.push(diag);
        for (j, v) in upper {
            col_idx.push(j);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }

    Ok(DiscreteOperator {
        a: CsrMatrix::from_parts(n, row_ptr, col_idx, values)?,
        g,
        volumes: vec![grid.cell_volume(); n],
        grid: *grid,
        boundary: *bc,
        k_field_digest: field_digest(k),
    })
}

/// `A x`.
pub fn apply(op: &DiscreteOperator, x: &[f64]) -> Result<Vec<f64>> {
    op.a.matvec(x)
}

/// `b = M q + g`.
pub fn rhs_from_power(op: &DiscreteOperator, q: &ScalarField) -> Result<Vec<f64>> {
    if q.grid() != &op.grid {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: q.values().len(),
        });
    }
    Ok(rhs_from_values(op, q.values()))
}

pub(crate) fn rhs_from_values(op: &DiscreteOperator, q: &[f64]) -> Vec<f64> {
    q.iter()
        .zip(&op.volumes)
        .zip(&op.g)
        .map(|((q, m), g)| m * q + g)
        .collect()
}

/// `q = M⁻¹ (b - g)`.
pub fn power_from_rhs(op: &DiscreteOperator, b: &[f64]) -> Result<ScalarField> {
    if b.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: b.len(),
        });
    }
    let q = b
        .iter()
        .zip(&op.volumes)
        .zip(&op.g)
        .map(|((b, m), g)| (b - g) / m)
        .collect();
    ScalarField::new(op.grid, q, Unit::PowerDensity)
}

/// `||A u - (M q + g)||₂ / ||M q + g||₂`, or the absolute norm when the
/// right-hand side vanishes.
pub fn relative_residual(op: &DiscreteOperator, u: &[f64], q: &[f64]) -> Result<f64> {
    let au = apply(op, u)?;
    if q.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: q.len(),
        });
    }
    Ok(residual_against(&au, &rhs_from_values(op, q)))
}

pub(crate) fn residual_against(au: &[f64], rhs: &[f64]) -> f64 {
    let (num, den) = lane_sums(au.len(), |i| {
        let (a, b) = (au[i], rhs[i]);
        ((a - b) * (a - b), b * b)
    });
    residual_ratio(num, den)
}

pub(crate) fn residual_ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Sums both components of `term(i)` over `0..n`, cell `i` going to lane
/// `i mod 4`, lanes combined pairwise at the end. Every residual in the
/// crate is accumulated this way so they agree bitwise.
#[inline(always)]
pub(crate) fn lane_sums(n: usize, mut term: impl FnMut(usize) -> (f64, f64)) -> (f64, f64) {
    let mut a = [0.0; 4];
    let mut b = [0.0; 4];
    let body = n / 4 * 4;
    for base in (0..body).step_by(4) {
        for l in 0..4 {
            let (x, y) = term(base + l);
            a[l] += x;
            b[l] += y;
        }
    }
    for i in body..n {
        let (x, y) = term(i);
        a[i - body] += x;
        b[i - body] += y;
    }
    ((a[0] + a[1]) + (a[2] + a[3]), (b[0] + b[1]) + (b[2] + b[3]))
}
