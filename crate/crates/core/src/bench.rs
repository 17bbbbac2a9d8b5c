//! Paired timing runs of BlocKOA and the direct CG baseline.
//!
//! For every grid size one BlocKOA run and one CG run per tolerance are
//! made on the same floorplan and power streams. Samples are discarded as
//! they are produced so memory stays flat in `n_data`.

use serde::{Deserialize, Serialize};

use crate::grid::GridSpec;
use crate::pipeline::{generate_blockoa_with, generate_direct_with, GenerationConfig, Method, RunSummary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: Method,
    pub grid: [usize; 3],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tol: Option<f64>,
    pub n_data: usize,
    pub total_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub basis_solve_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub operator_action_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solve_s: Option<f64>,
    pub iterations: usize,
    pub max_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dropped: Option<usize>,
    /// CG total time over the BlocKOA total time at the same grid.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    pub host: String,
}

pub fn host_description() -> String {
    format!(
        "{}-{}, {} worker threads, {}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads(),
        crate::TOOL_VERSION
    )
}

fn discard(cfg: &GenerationConfig, method: Method) -> Result<RunSummary> {
    match method {
        Method::Blockoa => generate_blockoa_with(cfg, |_| Ok(())),
        Method::Direct => generate_direct_with(cfg, |_| Ok(())),
    }
}

/// Runs the size x tolerance matrix. BlocKOA uses `base.basis_solver` at
/// every size; CG cells override `base.solver.rel_tol`.
pub fn run_bench(base: &GenerationConfig, sizes: &[[usize; 3]], tols: &[f64]) -> Result<BenchReport> {
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("no grid sizes to benchmark".into()));
    }
    let mut cells = Vec::new();
    for &counts in sizes {
        let mut cfg = base.clone();
        cfg.grid = GridSpec::new(counts, base.chip.extent)?;
        let run = discard(&cfg, Method::Blockoa)?;
        let blockoa_total = run.timings.total_s;
        cells.push(BenchCell {
            method: Method::Blockoa,
            grid: counts,
            tol: None,
            n_data: cfg.n_data,
            total_s: blockoa_total,
            basis_solve_s: Some(run.timings.basis_solve_s),
            operator_action_s: Some(run.timings.operator_action_s),
            solve_s: None,
            iterations: run.timings.iterations_total,
            max_residual: run.max_residual,
            dropped: None,
            speedup: None,
        });
        for &tol in tols {
            let mut cg_cfg = cfg.clone();
            cg_cfg.solver.rel_tol = tol;
            let run = discard(&cg_cfg, Method::Direct)?;
            cells.push(BenchCell {
                method: Method::Direct,
                grid: counts,
                tol: Some(tol),
                n_data: cfg.n_data,
                total_s: run.timings.total_s,
                basis_solve_s: None,
                operator_action_s: None,
                solve_s: Some(run.timings.solve_s),
                iterations: run.timings.iterations_total,
                max_residual: run.max_residual,
                dropped: Some(run.dropped),
                speedup: Some(run.timings.total_s / blockoa_total),
            });
        }
    }
    Ok(BenchReport {
        cells,
        host: host_description(),
    })
}
