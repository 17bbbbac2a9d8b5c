//! `blockoa` command-line front end.
//!
//! Every subcommand prints a one-line JSON summary to standard output and
//! reports problems on standard error. Exit codes: 0 success, 1 validation
//! failures, 2 bad configuration or unreadable input, 3 generation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use blockoa::bench::run_bench;
use blockoa::chipmodel::{build_floorplans, rasterize_conductivity};
use blockoa::config::RunConfig;
use blockoa::datasetio::{read_manifest, validate_dataset, write_dataset, WriteOptions};
use blockoa::discretize::assemble;
use blockoa::pipeline::{generate_blockoa, generate_direct, GenerationConfig, Method};
use blockoa::sparse::CsrMatrix;
use blockoa::Error;
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "blockoa", version, about = "Thermal simulation dataset generator")]
struct Cli {
    /// Worker thread cap.
    #[arg(long, global = true, env = "BLOCKOA_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory.
    Generate {
        #[arg(long)]
        method: Option<Method>,
        /// JSON run configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `master_seed` of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        overwrite: bool,
        /// Keep wall times in the manifest (the output is then not
        /// byte-reproducible).
        #[arg(long)]
        record_timings: bool,
    },
    /// Time BlocKOA against direct CG over grid sizes and CG tolerances.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report file; the report goes to standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated CG tolerances, e.g. `1e-5,1e-9`.
        #[arg(long)]
        tols: Option<String>,
        /// Comma-separated grids, `24` for 24^3 or `24x24x12`.
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Recompute the residual of every stored sample.
    Validate {
        dir: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Print the manifest summary of a dataset.
    Inspect { dir: PathBuf },
    /// Write the operator of one floorplan as `row col value` triples.
    ExportMatrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        floorplan: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the built-in default configuration.
    DefaultConfig,
}

enum Failure {
    Invalid(String),
    Config(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Config(_) => 2,
            Failure::Run(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Config(m) | Failure::Run(m) => m,
        }
    }
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn read_err(dir: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{}: {e}", dir.display()))
}

fn run_err(e: Error) -> Failure {
    match e {
        Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::NonPositiveHtc { .. } | Error::Exists(_) => {
            Failure::Config(e.to_string())
        }
        e => Failure::Run(e.to_string()),
    }
}

fn load(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::from_path(p).map_err(config_err),
        None => Ok(RunConfig::default()),
    }
}

fn generation(run: &RunConfig) -> Result<GenerationConfig, Failure> {
    let cfg = run.to_generation().map_err(config_err)?;
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn parse_sizes(text: &str) -> Result<Vec<[usize; 3]>, Failure> {
    let bad = || Failure::Config(format!("bad size list {text:?}"));
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let dims = item
            .split(['x', 'X'])
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        out.push(match dims[..] {
            [n] => [n, n, n],
            [a, b, c] => [a, b, c],
            _ => return Err(bad()),
        });
    }
    if out.is_empty() {
        return Err(Failure::Config("no grid sizes to benchmark".into()));
    }
    Ok(out)
}

fn parse_tols(text: &str) -> Result<Vec<f64>, Failure> {
    let tols = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Config(format!("bad tolerance list {text:?}")))?;
    if tols.is_empty() || tols.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Failure::Config(format!("tolerances must lie in (0, 1): {text:?}")));
    }
    Ok(tols)
}

fn generate(
    method: Option<Method>,
    config: Option<&Path>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    overwrite: bool,
    record_timings: bool,
) -> Result<serde_json::Value, Failure> {
    let mut run = load(config)?;
    if let Some(seed) = seed {
        run.master_seed = seed;
    }
    let method = method.or(run.method).unwrap_or(Method::Blockoa);
    let out = out
        .or_else(|| run.out.clone())
        .ok_or_else(|| Failure::Config("no output directory (--out or \"out\" in the config)".into()))?;
    let cfg = generation(&run)?;
    if !overwrite && out.join(blockoa::datasetio::MANIFEST).exists() {
        return Err(run_err(Error::Exists(out)));
    }

    let start = Instant::now();
    let (ds, timings) = match method {
        Method::Blockoa => generate_blockoa(&cfg),
        Method::Direct => generate_direct(&cfg),
    }
    .map_err(run_err)?;
    let opts = WriteOptions {
        overwrite,
        include_wall_times: record_timings,
    };
    let manifest = write_dataset(&ds, &out, opts).map_err(run_err)?;
    let max_residual = manifest.residuals.iter().fold(0.0f64, |m, &r| m.max(r));
    Ok(json!({
        "command": "generate",
        "method": method,
        "out": out,
        "n_data": manifest.n_data,
        "stored": manifest.stored(),
        "dropped": manifest.dropped,
        "wall_s": start.elapsed().as_secs_f64(),
        "generation_s": timings.total_s,
        "max_residual": max_residual,
    }))
}

fn bench(
    config: Option<&Path>,
    out: Option<&Path>,
    tols: Option<&str>,
    sizes: Option<&str>,
) -> Result<serde_json::Value, Failure> {
    let run = load(config)?;
    let sizes = match sizes {
        Some(s) => parse_sizes(s)?,
        None => vec![run.grid],
    };
    let tols = match tols {
        Some(t) => parse_tols(t)?,
        None => vec![run.solver.rel_tol],
    };
    let cfg = generation(&run)?;
    let report = run_bench(&cfg, &sizes, &tols).map_err(run_err)?;
    let Some(out) = out else {
        return serde_json::to_value(&report).map_err(|e| Failure::Run(e.to_string()));
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out, text).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
    let speedups: Vec<f64> = report.cells.iter().filter_map(|c| c.speedup).collect();
    Ok(json!({
        "command": "bench",
        "out": out,
        "cells": report.cells.len(),
        "speedups": speedups,
    }))
}

fn validate(dir: &Path, tol: f64) -> Result<serde_json::Value, Failure> {
    let report = validate_dataset(dir, tol).map_err(read_err(dir))?;
    let summary = json!({
        "command": "validate",
        "dir": dir,
        "tol": tol,
        "passed": report.passed,
        "failed": report.failed,
        "max_residual": report.max_residual,
        "failures": report.failures,
    });
    if report.all_passed() {
        Ok(summary)
    } else {
        println!("{summary}");
        Err(Failure::Invalid(format!("{} of {} samples exceed {tol:e}", report.failed, report.passed + report.failed)))
    }
}

fn inspect(dir: &Path) -> Result<serde_json::Value, Failure> {
    let m = read_manifest(dir).map_err(read_err(dir))?;
    let max_residual = m.residuals.iter().fold(0.0f64, |a, &r| a.max(r));
    Ok(json!({
        "command": "inspect",
        "dir": dir,
        "format_version": m.format_version,
        "method": m.method,
        "n_data": m.n_data,
        "stored": m.stored(),
        "dropped": m.dropped,
        "grid": m.grid,
        "extent_m": m.extent_m,
        "master_seed": m.master_seed,
        "floorplans": m.floorplan_digests.len(),
        "residual_tol_claimed": m.residual_tol_claimed,
        "max_residual": max_residual,
        "tool_version": m.tool_version,
        "timings": m.timings,
    }))
}

fn export_matrix(config: Option<&Path>, floorplan: usize, out: &Path) -> Result<serde_json::Value, Failure> {
    let cfg = generation(&load(config)?)?;
    if floorplan >= cfg.n_k {
        return Err(Failure::Config(format!("floorplan {floorplan} out of range (n_k = {})", cfg.n_k)));
    }
    let fps = build_floorplans(&cfg.chip, cfg.n_k, cfg.master_seed).map_err(run_err)?;
    let k = rasterize_conductivity(&fps[floorplan], &cfg.chip, &cfg.grid);
    let op = assemble(&k, &cfg.grid, &cfg.bc).map_err(run_err)?;
    let a: &CsrMatrix = op.as_ref();
    let file = std::fs::File::create(out).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
    let mut w = std::io::BufWriter::new(file);
    a.write_coo(&mut w)
        .and_then(|_| std::io::Write::flush(&mut w))
        .map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
    Ok(json!({
        "command": "export-matrix",
        "out": out,
        "floorplan": floorplan,
        "dim": a.dim(),
        "nnz": a.nnz(),
    }))
}

fn dispatch(command: Command) -> Result<serde_json::Value, Failure> {
    match command {
        Command::Generate {
            method,
            config,
            out,
            seed,
            overwrite,
            record_timings,
        } => generate(method, config.as_deref(), out, seed, overwrite, record_timings),
        Command::Bench {
            config,
            out,
            tols,
            sizes,
        } => bench(config.as_deref(), out.as_deref(), tols.as_deref(), sizes.as_deref()),
        Command::Validate { dir, tol } => validate(&dir, tol),
        Command::Inspect { dir } => inspect(&dir),
        Command::ExportMatrix { config, floorplan, out } => export_matrix(config.as_deref(), floorplan, &out),
        Command::DefaultConfig => serde_json::to_value(RunConfig::default()).map_err(|e| Failure::Run(e.to_string())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("blockoa: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("blockoa: {e}");
            return ExitCode::from(3);
        }
    }
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("blockoa: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
