use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Structured cell-centered grid over an axis-aligned box.
///
/// Cells are numbered `flat = ix + nx * (iy + ny * iz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub counts: [usize; 3],
    /// Box lengths in meters.
    pub extent: [f64; 3],
}

impl GridSpec {
    pub fn new(counts: [usize; 3], extent: [f64; 3]) -> Result<Self> {
        let grid = GridSpec { counts, extent };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "grid counts must be >= 1, got {:?}",
                self.counts
            )));
        }
        if self.extent.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "grid extent must be positive, got {:?}",
                self.extent
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.extent[0] / self.counts[0] as f64,
            self.extent[1] / self.counts[1] as f64,
            self.extent[2] / self.counts[2] as f64,
        ]
    }

    pub fn cell_volume(&self) -> f64 {
        let [dx, dy, dz] = self.spacing();
        dx * dy * dz
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.counts[0] * (iy + self.counts[1] * iz)
    }

    #[inline]
    pub fn coords(&self, flat: usize) -> [usize; 3] {
        let [nx, ny, _] = self.counts;
        [flat % nx, (flat / nx) % ny, flat / (nx * ny)]
    }

    /// Center of cell `(ix, iy, iz)` in meters.
    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        let h = self.spacing();
        [
            (ix as f64 + 0.5) * h[0],
            (iy as f64 + 0.5) * h[1],
            (iz as f64 + 0.5) * h[2],
        ]
    }

    /// True when the cell shares a face with the box boundary.
    pub fn touches_boundary(&self, flat: usize) -> bool {
        let c = self.coords(flat);
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.counts[a])
    }
}

/// Physical unit attached to a [`ScalarField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "W/(m*K)")]
    Conductivity,
    #[serde(rename = "W/m^3")]
    PowerDensity,
    #[serde(rename = "degC")]
    Temperature,
    #[serde(rename = "1")]
    Dimensionless,
}

/// One finite value per grid cell, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
    unit: Unit,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>, unit: Unit) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "field value at cell {i} is not finite"
            )));
        }
        Ok(ScalarField { grid, values, unit })
    }

    pub fn constant(grid: GridSpec, value: f64, unit: Unit) -> Self {
        ScalarField {
            grid,
            values: vec![value; grid.len()],
            unit,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}
