//! Dataset generation: BlocKOA and the direct per-sample baseline.
//!
//! Both generators share their random problem streams. The power map with
//! ordinal `r` on floorplan `j` is drawn from `derive2(master, POWER, j, r)`,
//! and it is both basis column `r` of group `j` and the direct baseline's
//! sample `r * n_k + j`. A BlocKOA sample `l` draws its weights and noise from
//! `derive(master, SAMPLE, l)` and uses floorplan `l mod n_k`.
//!
//! Samples are produced in fixed-size chunks; each chunk is computed in
//! parallel and handed to the caller's sink in index order, so output never
//! depends on scheduling.

mod basis;
mod combine;
mod run;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::chipmodel::ChipSpec;
use crate::discretize::BoundarySpec;
use crate::grid::{GridSpec, ScalarField};
use crate::solvers::SolverConfig;
use crate::{Error, Result};

pub use basis::{generate_basis, BasisGroup, BasisSet};
pub use combine::{combine_basis, combine_with_weights, interior_noise, operator_action, weights_from_mu};
pub use run::{generate_blockoa, generate_blockoa_with, generate_direct, generate_direct_with, RunSummary};

/// Samples per parallel chunk.
pub(crate) const CHUNK: usize = 32;
/// Samples per combination task; each task sweeps the packed basis once.
pub(crate) const COMBINE_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    None,
    /// Uniform on `[lo, hi]`, °C.
    Uniform { lo: f64, hi: f64 },
    /// Zero-mean normal, °C.
    Gaussian { sigma: f64 },
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseConfig::None => Ok(()),
            NoiseConfig::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            NoiseConfig::Gaussian { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            other => Err(Error::InvalidConfig(format!("bad noise parameters: {other:?}"))),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoiseConfig::None)
    }

    /// Writes one independent draw into each slot. Degenerate
    /// distributions give their single value without touching the
    /// generator.
    pub(crate) fn fill<'a, R: Rng>(&self, rng: &mut R, slots: impl Iterator<Item = &'a mut f64>) {
        match *self {
            NoiseConfig::None => slots.for_each(|v| *v = 0.0),
            NoiseConfig::Uniform { lo, hi } if lo == hi => slots.for_each(|v| *v = lo),
            NoiseConfig::Uniform { lo, hi } => {
                let d = Uniform::new_inclusive(lo, hi).expect("validated range");
                slots.for_each(|v| *v = d.sample(rng));
            }
            NoiseConfig::Gaussian { sigma: 0.0 } => slots.for_each(|v| *v = 0.0),
            NoiseConfig::Gaussian { sigma } => {
                let d = Normal::new(0.0, sigma).expect("validated sigma");
                slots.for_each(|v| *v = d.sample(rng));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub n_data: usize,
    pub n_basis: usize,
    pub n_k: usize,
    /// Per-sample CG for the direct method.
    pub solver: SolverConfig,
    /// Block CG for the BlocKOA basis systems. Sample accuracy does not
    /// depend on it: every sample's power map is recomputed from its
    /// temperature field.
    pub basis_solver: SolverConfig,
    pub noise: NoiseConfig,
    pub master_seed: u64,
    pub grid: GridSpec,
    pub bc: BoundarySpec,
    pub chip: ChipSpec,
}

impl GenerationConfig {
    /// Basis columns per floorplan.
    pub fn eta(&self) -> usize {
        self.n_basis / self.n_k.max(1)
    }

    /// Checks shared by both methods. `n_basis` is not looked at.
    pub fn validate_common(&self) -> Result<()> {
        if self.n_k == 0 {
            return Err(Error::InvalidConfig("n_k must be at least 1".into()));
        }
        self.solver.validate()?;
        self.noise.validate()?;
        self.grid.validate()?;
        self.bc.validate()?;
        self.chip.validate()?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs();
        if !(0..3).all(|i| close(self.grid.extent[i], self.chip.extent[i])) {
            return Err(Error::InvalidConfig(format!(
                "grid extent {:?} does not match chip extent {:?}",
                self.grid.extent, self.chip.extent
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        self.basis_solver.validate()?;
        if self.n_basis == 0 {
            return Err(Error::InvalidConfig("n_basis must be at least 1".into()));
        }
        if !self.n_basis.is_multiple_of(self.n_k) {
            return Err(Error::InvalidConfig(format!(
                "n_basis ({}) must be a multiple of n_k ({})",
                self.n_basis, self.n_k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Blockoa,
    Direct,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Blockoa => "blockoa",
            Method::Direct => "direct",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blockoa" => Ok(Method::Blockoa),
            "direct" => Ok(Method::Direct),
            _ => Err(Error::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

/// One `(k, q, u)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Position in the generated sequence.
    pub index: usize,
    pub floorplan_id: usize,
    /// Shared by all samples of one floorplan.
    pub k: Arc<ScalarField>,
    pub q: ScalarField,
    pub u: ScalarField,
    pub provenance: Method,
    /// `||A u - (M q + g)|| / ||M q + g||`.
    pub residual: f64,
}

/// Wall-clock seconds per phase plus work counters.
///
/// BlocKOA fills `basis_solve_s`, `combine_s`, `operator_action_s` and
/// `packaging_s`; the direct method fills `solve_s` and `packaging_s`.
/// `total_s` covers the whole run including floorplan setup.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTimings {
    pub basis_solve_s: f64,
    pub combine_s: f64,
    pub operator_action_s: f64,
    pub packaging_s: f64,
    pub solve_s: f64,
    pub total_s: f64,
    pub iterations_total: usize,
    pub matvecs_total: usize,
}

impl PhaseTimings {
    /// Same counters with every wall time set to zero.
    pub fn without_wall_times(&self) -> Self {
        PhaseTimings {
            iterations_total: self.iterations_total,
            matvecs_total: self.matvecs_total,
            ..Default::default()
        }
    }
}
