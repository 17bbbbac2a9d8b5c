//! End-to-end acceptance checks. Runs as a plain binary so the timing
//! checks never share the machine with other tests; prints one line per
//! criterion and exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use blockoa::bench::run_bench;
use blockoa::config::RunConfig;
use blockoa::datasetio::{read_dataset, validate_dataset, write_dataset, WriteOptions};
use blockoa::pipeline::*;
use blockoa::seeds;
use blockoa::solvers::{block_cg, cg, cg_error_bound, cg_monitored, MultiVector, SolverConfig};
use common::*;
use nalgebra::SymmetricEigen;
use rand::Rng;
use tempfile::tempdir;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn default_cfg(grid: [usize; 3], n_data: usize) -> GenerationConfig {
    RunConfig {
        grid,
        n_data,
        ..RunConfig::default()
    }
    .to_generation()
    .unwrap()
}

fn machine_precision_data() -> Outcome {
    let cfg = default_cfg([24, 24, 12], 500);
    assert_eq!((cfg.n_basis, cfg.n_k), (50, 5));
    assert_eq!(cfg.noise, NoiseConfig::Uniform { lo: -0.01, hi: 0.01 });
    let dir = tempdir().unwrap();
    let out = dir.path().join("ds");
    let (ds, _) = generate_blockoa(&cfg).unwrap();
    write_dataset(&ds, &out, WriteOptions::default()).unwrap();
    let report = validate_dataset(&out, 1e-12).unwrap();
    check(
        report.passed == 500 && report.failed == 0,
        format!("{} of 500 samples within 1e-12, max residual {:.2e}", report.passed, report.max_residual),
    )
}

fn tolerance_bound_baseline() -> Outcome {
    let mut cfg = default_cfg([24, 24, 12], 100);
    cfg.solver.rel_tol = 1e-9;
    let dir = tempdir().unwrap();
    let out = dir.path().join("ds");
    let (ds, _) = generate_direct(&cfg).unwrap();
    write_dataset(&ds, &out, WriteOptions::default()).unwrap();
    let loose = validate_dataset(&out, 1e-8).unwrap();
    let strict = validate_dataset(&out, 1e-12).unwrap();
    let frac = strict.failed as f64 / ds.len().max(1) as f64;
    check(
        ds.len() == 100 && loose.failed == 0 && frac >= 0.9,
        format!(
            "{} samples: {} fail at 1e-8, {:.0}% fail at 1e-12 (max residual {:.2e})",
            ds.len(),
            loose.failed,
            100.0 * frac,
            loose.max_residual
        ),
    )
}

/// Best of three BlocKOA runs per config, streaming samples away. Runs
/// alternate between the configs so load drift hits both alike.
fn blockoa_seconds(cfgs: &[GenerationConfig]) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; cfgs.len()];
    for _ in 0..3 {
        for (b, cfg) in best.iter_mut().zip(cfgs) {
            *b = b.min(generate_blockoa_with(cfg, |_| Ok(())).unwrap().timings.total_s);
        }
    }
    best
}

/// Benchmark shared by the speedup and operator-action checks.
fn bench() -> blockoa::bench::BenchReport {
    let base = default_cfg([24, 24, 24], 500);
    run_bench(&base, &[[16; 3], [20; 3], [24; 3]], &[1e-9]).unwrap()
}

fn speedup_trend(report: &blockoa::bench::BenchReport) -> Outcome {
    let cell = report
        .cells
        .iter()
        .find(|c| c.method == Method::Direct && c.grid == [24; 3])
        .unwrap();
    let speedup = cell.speedup.unwrap();
    let times = blockoa_seconds(&[default_cfg([24, 24, 24], 500), default_cfg([24, 24, 24], 5000)]);
    let (t500, t5000) = (times[0], times[1]);
    let growth = t5000 / t500;
    check(
        speedup >= 20.0 && growth <= 1.5,
        format!(
            "24^3, 500 samples: direct CG {:.1} s, speedup {speedup:.1}x; BlocKOA 500 -> 5000 samples: {t500:.2} s -> {t5000:.2} s ({growth:.2}x)",
            cell.total_s
        ),
    )
}

fn operator_action_negligible(report: &blockoa::bench::BenchReport) -> Outcome {
    let shares: Vec<(usize, f64)> = report
        .cells
        .iter()
        .filter(|c| c.method == Method::Blockoa)
        .map(|c| (c.grid[0], c.operator_action_s.unwrap() / c.total_s))
        .collect();
    let text: Vec<String> = shares.iter().map(|(n, f)| format!("{n}^3 {:.1}%", 100.0 * f)).collect();
    check(
        shares.len() == 3 && shares.iter().all(|&(_, f)| f <= 0.1),
        format!("operator action share of total: {}", text.join(", ")),
    )
}

fn block_krylov_reduction() -> Outcome {
    let mut cfg = default_cfg([24, 24, 24], 0);
    cfg.n_k = 1;
    cfg.n_basis = 10;
    cfg.basis_solver = cfg.solver;
    let basis = generate_basis(&cfg).unwrap();
    let group = &basis.groups[0];
    let block_iters = group.report.iterations;
    let singles: Vec<usize> = group
        .b
        .columns()
        .map(|b| cg(&group.operator, b, &cfg.solver).unwrap().report.iterations)
        .collect();
    let mean = singles.iter().sum::<usize>() as f64 / singles.len() as f64;
    let ratio = block_iters as f64 / mean;
    check(
        ratio <= 0.7,
        format!("s = 10, rel_tol {:.0e}: block {block_iters} vs mean CG {mean:.1} iterations, ratio {ratio:.3}", cfg.solver.rel_tol),
    )
}

fn solver_oracle() -> Outcome {
    let mut rng = seeds::rng(61);
    let tol = 1e-10;
    let cfg = SolverConfig::with_tol(tol);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let op = random_operator(&mut rng, BC_KINDS[case % 3]);
        let n = op.dim();
        assert!(n <= 1000);
        let cols = random_rhs(&mut rng, n, 4);
        let block = block_cg(&op, &MultiVector::from_columns(n, &cols).unwrap(), &cfg).unwrap();
        for (j, b) in cols.iter().enumerate() {
            let exact = dense_solve(&op.a, b);
            worst = worst.max(rel_err(&cg(&op, b, &cfg).unwrap().x, &exact));
            worst = worst.max(rel_err(block.x.col(j), &exact));
        }
        // Degenerate blocks: width one, and a duplicated column.
        let one = block_cg(&op, &MultiVector::from_columns(n, &[&cols[0]]).unwrap(), &cfg).unwrap();
        let dup = block_cg(&op, &MultiVector::from_columns(n, &[&cols[1], &cols[1]]).unwrap(), &cfg).unwrap();
        let x0 = dense_solve(&op.a, &cols[0]);
        let x1 = dense_solve(&op.a, &cols[1]);
        worst = worst.max(rel_err(one.x.col(0), &x0));
        worst = worst.max(rel_err(dup.x.col(0), &x1)).max(rel_err(dup.x.col(1), &x1));
    }
    check(
        worst <= 100.0 * tol,
        format!("20 operators, worst relative error vs dense {worst:.2e} (limit {:.0e})", 100.0 * tol),
    )
}

fn discretization_order() -> Outcome {
    let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| mms::linf_error(n)).collect();
    let factors: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    check(
        factors.iter().all(|f| (3.0..=5.0).contains(f)),
        format!(
            "L-inf errors {:.3e}, {:.3e}, {:.3e}; contraction {:.2}, {:.2}",
            errs[0], errs[1], errs[2], factors[0], factors[1]
        ),
    )
}

fn combination_invariants() -> Outcome {
    let mut cfg = default_cfg([10, 9, 6], 0);
    cfg.n_basis = 12;
    cfg.n_k = 3;
    let basis = generate_basis(&cfg).unwrap();
    let grid = cfg.grid;
    let mut worst_sum: f64 = 0.0;
    let mut boundary_touched = 0;
    for seed in 0..1000 {
        let (x, w) = combine_basis(&basis, seed, &cfg.noise).unwrap();
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        let plain = combine_with_weights(&basis, &w).unwrap();
        boundary_touched += (0..grid.len())
            .filter(|&i| grid.touches_boundary(i) && x[i].to_bits() != plain[i].to_bits())
            .count();
    }
    let mut e1 = vec![0.0; basis.n_basis()];
    e1[0] = 1.0;
    let bitwise = combine_with_weights(&basis, &e1).unwrap() == basis.column(0);
    check(
        worst_sum <= 1e-12 && boundary_touched == 0 && bitwise,
        format!(
            "1000 draws: max |sum(alpha) - 1| = {worst_sum:.1e}, {boundary_touched} boundary cells perturbed, e1 reproduces column: {bitwise}"
        ),
    )
}

fn error_bound_validity() -> Outcome {
    let mut rng = seeds::rng(314);
    let mut checked = 0;
    let mut violations = 0;
    let mut tightest: f64 = 0.0;
    for case in 0..10 {
        let op = random_operator(&mut rng, BC_KINDS[case % 3]);
        let n = op.dim();
        let eig = SymmetricEigen::new(dense(&op.a)).eigenvalues;
        let kappa = eig.max() / eig.min();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = dense_solve(&op.a, &b);
        let e0 = a_norm_diff(&op.a, &exact, &vec![0.0; n]);
        let floor = 1e-12 * e0;
        cg_monitored(&op, &b, &SolverConfig::with_tol(1e-11), |m, x| {
            let e = a_norm_diff(&op.a, &exact, x);
            let bound = cg_error_bound(kappa, m, e0).unwrap();
            checked += 1;
            if e > bound + floor {
                violations += 1;
            }
            if bound > floor {
                tightest = tightest.max(e / bound);
            }
        })
        .unwrap();
    }
    check(
        violations == 0 && checked > 10,
        format!("{checked} iterates over 10 instances, {violations} violations, max e_m / bound {tightest:.3}"),
    )
}

fn determinism_round_trip() -> Outcome {
    let cfg = default_cfg([12, 12, 6], 40);
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ds, _) = generate_blockoa(&cfg).unwrap();
    write_dataset(&ds, &a, WriteOptions::default()).unwrap();
    write_dataset(&generate_blockoa(&cfg).unwrap().0, &b, WriteOptions::default()).unwrap();
    let mut identical = true;
    for name in ["manifest.json", "k.bin", "q.bin", "u.bin"] {
        identical &= std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap();
    }
    let back = read_dataset(&a).unwrap();
    let lossless = back.samples == ds.samples;
    check(
        identical && lossless,
        format!("byte-identical directories: {identical}; read-back samples bitwise equal: {lossless}"),
    )
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("[{tag}] {id:>2} {name}: {detail} ({secs:.1} s)");
    ok
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "machine-precision data", machine_precision_data);
    ok &= run(2, "tolerance-bound baseline", tolerance_bound_baseline);
    let report = catch_unwind(bench);
    match &report {
        Ok(r) => {
            ok &= run(3, "speedup trend", || speedup_trend(r));
            ok &= run(4, "operator action negligible", || operator_action_negligible(r));
        }
        Err(_) => {
            ok &= run(3, "speedup trend", || Err("benchmark failed".into()));
            ok &= run(4, "operator action negligible", || Err("benchmark failed".into()));
        }
    }
    ok &= run(5, "block Krylov iteration reduction", block_krylov_reduction);
    ok &= run(6, "solver correctness oracle", solver_oracle);
    ok &= run(7, "discretization order", discretization_order);
    ok &= run(8, "combination invariants", combination_invariants);
    ok &= run(9, "error-bound validity", error_bound_validity);
    ok &= run(10, "determinism and round trip", determinism_round_trip);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
