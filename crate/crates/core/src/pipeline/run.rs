use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::basis::{generate_basis, problem_power, setup_floorplan};
use super::combine::{action, draw_sample, PackedBasis, Stencil};
use super::{GenerationConfig, Method, PhaseTimings, Sample, CHUNK, COMBINE_BATCH};
use crate::chipmodel::build_floorplans;
use crate::datasetio::Dataset;
use crate::discretize::{field_digest, rhs_from_power};
use crate::grid::{ScalarField, Unit};
use crate::seeds;
use crate::solvers::cg;
use crate::{Error, Result};

/// Outcome of a streaming run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub timings: PhaseTimings,
    /// Conductivity digest per floorplan id.
    pub floorplan_digests: Vec<String>,
    pub emitted: usize,
    /// Direct samples whose solve did not converge.
    pub dropped: usize,
    pub max_residual: f64,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// BlocKOA generation, handing each sample to `sink` in index order.
pub fn generate_blockoa_with<F>(cfg: &GenerationConfig, mut sink: F) -> Result<RunSummary>
where
    F: FnMut(Sample) -> Result<()>,
{
    let total = Instant::now();
    cfg.validate()?;
    let mut timings = PhaseTimings::default();

    let t = Instant::now();
    let basis = generate_basis(cfg)?;
    timings.basis_solve_s = secs(t);
    for g in &basis.groups {
        timings.iterations_total += g.report.iterations;
        timings.matvecs_total += g.report.matvec_count;
    }

    let n_k = basis.groups.len();
    let packed = PackedBasis::new(&basis);
    let stencils: Vec<Option<Stencil>> = basis.groups.iter().map(|g| Stencil::new(&g.operator)).collect();
    let mut max_residual: f64 = 0.0;
    for start in (0..cfg.n_data).step_by(CHUNK) {
        let end = (start + CHUNK).min(cfg.n_data);

        let t = Instant::now();
        let draws: Vec<(Vec<f64>, Vec<f64>)> = (start..end)
            .into_par_iter()
            .map(|l| draw_sample(&basis, seeds::derive(cfg.master_seed, seeds::SAMPLE, l as u64), &cfg.noise))
            .collect();
        let (weights, mut xs): (Vec<_>, Vec<_>) = draws.into_iter().unzip();
        xs.par_chunks_mut(COMBINE_BATCH)
            .zip(weights.par_chunks(COMBINE_BATCH))
            .for_each(|(xs, w)| packed.combine_into(w, xs, !cfg.noise.is_none()));
        timings.combine_s += secs(t);

        let t = Instant::now();
        // Samples sharing an operator run back to back so its matrix stays
        // in cache.
        let mut order: Vec<usize> = (0..end - start).collect();
        order.sort_by_key(|&o| (start + o) % n_k);
        let mut acted = order
            .par_iter()
            .map(|&o| {
                let j = (start + o) % n_k;
                let op = &basis.groups[j].operator;
                let acted = match &stencils[j] {
                    Some(st) => st.action(op, &xs[o])?,
                    None => action(op, &xs[o])?,
                };
                Ok((o, acted))
            })
            .collect::<Result<Vec<_>>>()?;
        acted.sort_by_key(|&(o, _)| o);
        timings.operator_action_s += secs(t);
        timings.matvecs_total += end - start;

        let t = Instant::now();
        for (o, (x, (_, (q, residual)))) in xs.into_iter().zip(acted).enumerate() {
            let l = start + o;
            let group = &basis.groups[l % n_k];
            max_residual = max_residual.max(residual);
            sink(Sample {
                index: l,
                floorplan_id: group.floorplan.id,
                k: Arc::clone(&group.k),
                q,
                u: ScalarField::new(cfg.grid, x, Unit::Temperature)?,
                provenance: Method::Blockoa,
                residual,
            })?;
        }
        timings.packaging_s += secs(t);
    }
    timings.total_s = secs(total);
    Ok(RunSummary {
        method: Method::Blockoa,
        timings,
        floorplan_digests: basis.groups.iter().map(|g| field_digest(&g.k)).collect(),
        emitted: cfg.n_data,
        dropped: 0,
        max_residual,
    })
}

/// Direct baseline: one CG solve per sample. Samples whose solve does not
/// converge are dropped and counted.
pub fn generate_direct_with<F>(cfg: &GenerationConfig, mut sink: F) -> Result<RunSummary>
where
    F: FnMut(Sample) -> Result<()>,
{
    let total = Instant::now();
    cfg.validate_common()?;
    let mut timings = PhaseTimings::default();
    let floorplans = build_floorplans(&cfg.chip, cfg.n_k, cfg.master_seed)?;
    let setups = floorplans
        .par_iter()
        .map(|fp| setup_floorplan(cfg, fp))
        .collect::<Result<Vec<_>>>()?;
    let n_k = floorplans.len();

    let mut emitted = 0;
    let mut dropped = 0;
    let mut max_residual: f64 = 0.0;
    for start in (0..cfg.n_data).step_by(CHUNK) {
        let end = (start + CHUNK).min(cfg.n_data);

        let t = Instant::now();
        let solved = (start..end)
            .into_par_iter()
            .map(|l| {
                let j = l % n_k;
                let q = problem_power(cfg, &floorplans[j], l / n_k);
                let op = &setups[j].1;
                let b = rhs_from_power(op, &q)?;
                match cg(op, &b, &cfg.solver) {
                    Ok(sol) => Ok((q, Some(sol.x), sol.report)),
                    Err(Error::NotConverged(nc)) => Ok((q, None, nc.report)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        timings.solve_s += secs(t);

        let t = Instant::now();
        for (o, (q, x, report)) in solved.into_iter().enumerate() {
            let l = start + o;
            timings.iterations_total += report.iterations;
            timings.matvecs_total += report.matvec_count;
            let Some(x) = x else {
                dropped += 1;
                continue;
            };
            let residual = report.final_rel_residual[0];
            max_residual = max_residual.max(residual);
            let j = l % n_k;
            sink(Sample {
                index: l,
                floorplan_id: floorplans[j].id,
                k: Arc::clone(&setups[j].0),
                q,
                u: ScalarField::new(cfg.grid, x, Unit::Temperature)?,
                provenance: Method::Direct,
                residual,
            })?;
            emitted += 1;
        }
        timings.packaging_s += secs(t);
    }
    timings.total_s = secs(total);
    Ok(RunSummary {
        method: Method::Direct,
        timings,
        floorplan_digests: setups.iter().map(|(k, _)| field_digest(k)).collect(),
        emitted,
        dropped,
        max_residual,
    })
}

fn collect(
    cfg: &GenerationConfig,
    run: impl FnOnce(&GenerationConfig, &mut dyn FnMut(Sample) -> Result<()>) -> Result<RunSummary>,
) -> Result<(Dataset, PhaseTimings)> {
    let mut samples = Vec::with_capacity(cfg.n_data);
    let summary = run(cfg, &mut |s| {
        samples.push(s);
        Ok(())
    })?;
    let timings = summary.timings;
    Ok((Dataset::from_run(cfg, &summary, samples), timings))
}

pub fn generate_blockoa(cfg: &GenerationConfig) -> Result<(Dataset, PhaseTimings)> {
    collect(cfg, |c, sink| generate_blockoa_with(c, sink))
}

pub fn generate_direct(cfg: &GenerationConfig) -> Result<(Dataset, PhaseTimings)> {
    collect(cfg, |c, sink| generate_direct_with(c, sink))
}
