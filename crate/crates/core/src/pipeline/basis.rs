use std::sync::Arc;

use rayon::prelude::*;

use super::GenerationConfig;
use crate::chipmodel::{build_floorplans, rasterize_conductivity, rasterize_power, sample_power, Floorplan};
use crate::discretize::{assemble, rhs_from_power, DiscreteOperator};
use crate::grid::{GridSpec, ScalarField};
use crate::seeds;
use crate::solvers::{block_cg, MultiVector, SolveReport};
use crate::Result;

/// Basis solutions of one floorplan: `A X = B` with `eta` columns.
#[derive(Debug, Clone)]
pub struct BasisGroup {
    pub floorplan: Floorplan,
    pub k: Arc<ScalarField>,
    pub operator: DiscreteOperator,
    pub x: MultiVector,
    pub b: MultiVector,
    pub q_fields: Vec<ScalarField>,
    pub report: SolveReport,
}

/// All basis groups. Global column `i` is column `i mod eta` of group
/// `i / eta`.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub groups: Vec<BasisGroup>,
}

impl BasisSet {
    pub fn eta(&self) -> usize {
        self.groups.first().map_or(0, |g| g.x.ncols())
    }

    pub fn n_basis(&self) -> usize {
        self.groups.iter().map(|g| g.x.ncols()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_basis() == 0
    }

    pub fn column(&self, i: usize) -> &[f64] {
        let eta = self.eta();
        self.groups[i / eta].x.col(i % eta)
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.groups.first().map(|g| &g.operator.grid)
    }
}

/// Conductivity field and operator of one floorplan.
pub(crate) fn setup_floorplan(cfg: &GenerationConfig, fp: &Floorplan) -> Result<(Arc<ScalarField>, DiscreteOperator)> {
    let k = rasterize_conductivity(fp, &cfg.chip, &cfg.grid);
    let op = assemble(&k, &cfg.grid, &cfg.bc)?;
    Ok((Arc::new(k), op))
}

/// Power map with ordinal `r` on floorplan `fp`.
pub(crate) fn problem_power(cfg: &GenerationConfig, fp: &Floorplan, r: usize) -> ScalarField {
    let seed = seeds::derive2(cfg.master_seed, seeds::POWER, fp.id as u64, r as u64);
    let pa = sample_power(fp, &cfg.chip, seed);
    rasterize_power(&pa, fp, &cfg.chip, &cfg.grid)
}

pub fn generate_basis(cfg: &GenerationConfig) -> Result<BasisSet> {
    cfg.validate()?;
    let floorplans = build_floorplans(&cfg.chip, cfg.n_k, cfg.master_seed)?;
    let eta = cfg.eta();
    let groups = floorplans
        .into_par_iter()
        .map(|fp| {
            let (k, operator) = setup_floorplan(cfg, &fp)?;
            let q_fields: Vec<ScalarField> = (0..eta).map(|r| problem_power(cfg, &fp, r)).collect();
            let cols = q_fields
                .iter()
                .map(|q| rhs_from_power(&operator, q))
                .collect::<Result<Vec<_>>>()?;
            let b = MultiVector::from_columns(operator.dim(), &cols)?;
            let sol = block_cg(&operator, &b, &cfg.basis_solver)?;
            Ok(BasisGroup {
                floorplan: fp,
                k,
                operator,
                x: sol.x,
                b,
                q_fields,
                report: sol.report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BasisSet { groups })
}
