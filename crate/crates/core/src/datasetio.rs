//! On-disk datasets: `manifest.json` plus `k.bin`, `q.bin` and `u.bin`.
//!
//! Each payload holds one field per stored sample, sample-major, cells in
//! flat order `ix + nx * (iy + ny * iz)`, as raw little-endian `f64` with no
//! header. Directories are written to a temporary sibling first and renamed
//! into place, so a visible manifest always belongs to complete payloads.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretize::{assemble, field_digest, relative_residual, BoundarySpec, DiscreteOperator};
use crate::grid::{GridSpec, ScalarField, Unit};
use crate::pipeline::{GenerationConfig, Method, PhaseTimings, RunSummary, Sample};
use crate::{Error, Result, TOOL_VERSION};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const PAYLOADS: [&str; 3] = ["k.bin", "q.bin", "u.bin"];

/// Residual bound claimed for BlocKOA samples.
pub const BLOCKOA_RESIDUAL_CLAIM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub method: Method,
    /// Requested sample count; stored samples are `n_data - dropped`.
    pub n_data: usize,
    pub grid: [usize; 3],
    pub extent_m: [f64; 3],
    pub bc: BoundarySpec,
    pub master_seed: u64,
    /// Floorplan of each stored sample.
    pub floorplan_ids: Vec<usize>,
    pub timings: PhaseTimings,
    pub residual_tol_claimed: f64,
    pub tool_version: String,
    pub config: GenerationConfig,
    /// Conductivity digest per floorplan id.
    pub floorplan_digests: Vec<String>,
    pub dropped: usize,
    /// Position of each stored sample in the generated sequence.
    pub sample_indices: Vec<usize>,
    /// Residual recorded at generation time, per stored sample.
    pub residuals: Vec<f64>,
}

impl Manifest {
    pub fn stored(&self) -> usize {
        self.floorplan_ids.len()
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CorruptManifest(m));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        if let Err(e) = GridSpec::new(self.grid, self.extent_m) {
            return bad(e.to_string());
        }
        if self.config.grid.counts != self.grid || self.config.bc != self.bc {
            return bad("config echo disagrees with grid or bc".into());
        }
        let stored = self.stored();
        if self.n_data.checked_sub(self.dropped) != Some(stored) {
            return bad(format!(
                "n_data {} minus dropped {} does not match {} stored samples",
                self.n_data, self.dropped, stored
            ));
        }
        if self.sample_indices.len() != stored || self.residuals.len() != stored {
            return bad("per-sample lists have inconsistent lengths".into());
        }
        if let Some(&id) = self.floorplan_ids.iter().find(|&&id| id >= self.floorplan_digests.len()) {
            return bad(format!("floorplan id {id} has no digest"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub bc: BoundarySpec,
    pub samples: Vec<Sample>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn from_run(cfg: &GenerationConfig, summary: &RunSummary, samples: Vec<Sample>) -> Self {
        let claimed = match summary.method {
            Method::Blockoa => BLOCKOA_RESIDUAL_CLAIM,
            Method::Direct => cfg.solver.rel_tol,
        };
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            method: summary.method,
            n_data: cfg.n_data,
            grid: cfg.grid.counts,
            extent_m: cfg.grid.extent,
            bc: cfg.bc,
            master_seed: cfg.master_seed,
            floorplan_ids: samples.iter().map(|s| s.floorplan_id).collect(),
            timings: summary.timings,
            residual_tol_claimed: claimed,
            tool_version: TOOL_VERSION.to_string(),
            config: cfg.clone(),
            floorplan_digests: summary.floorplan_digests.clone(),
            dropped: summary.dropped,
            sample_indices: samples.iter().map(|s| s.index).collect(),
            residuals: samples.iter().map(|s| s.residual).collect(),
        };
        Dataset {
            grid: cfg.grid,
            bc: cfg.bc,
            samples,
            manifest,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteOptions {
    /// Replace a directory that already holds a dataset.
    pub overwrite: bool,
    /// Keep measured wall times in the manifest. Off by default so that
    /// identical runs produce identical bytes; counters are always kept.
    pub include_wall_times: bool,
}

fn payload_bytes<'a>(fields: impl Iterator<Item = &'a ScalarField>) -> Vec<u8> {
    let mut out = Vec::new();
    for f in fields {
        for v in f.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

/// Writes `ds` to directory `path`. Returns the manifest as written.
pub fn write_dataset(ds: &Dataset, path: &Path, opts: WriteOptions) -> Result<Manifest> {
    let n = ds.grid.len();
    for s in &ds.samples {
        for f in [&*s.k, &s.q, &s.u] {
            if f.grid() != &ds.grid {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: f.values().len(),
                });
            }
        }
    }
    let existing = match fs::read_dir(path) {
        Ok(mut entries) => entries.next().is_some(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(e.into()),
    };
    if existing && !opts.overwrite {
        return Err(Error::Exists(path.to_path_buf()));
    }

    let mut manifest = ds.manifest.clone();
    if !opts.include_wall_times {
        manifest.timings = manifest.timings.without_wall_times();
    }
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let tmp = tempfile::Builder::new().prefix(".blockoa-tmp-").tempdir_in(&parent)?;
    write_file(&tmp.path().join("k.bin"), &payload_bytes(ds.samples.iter().map(|s| &*s.k)))?;
    write_file(&tmp.path().join("q.bin"), &payload_bytes(ds.samples.iter().map(|s| &s.q)))?;
    write_file(&tmp.path().join("u.bin"), &payload_bytes(ds.samples.iter().map(|s| &s.u)))?;
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    json.push(b'\n');
    write_file(&tmp.path().join(MANIFEST), &json)?;

    let staged = tmp.keep();
    if existing {
        let old = tempfile::Builder::new().prefix(".blockoa-old-").tempdir_in(&parent)?.keep();
        fs::remove_dir(&old)?;
        fs::rename(path, &old)?;
        if let Err(e) = fs::rename(&staged, path) {
            fs::rename(&old, path)?;
            let _ = fs::remove_dir_all(&staged);
            return Err(e.into());
        }
        fs::remove_dir_all(&old)?;
    } else if let Err(e) = fs::rename(&staged, path) {
        let _ = fs::remove_dir_all(&staged);
        return Err(e.into());
    }
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    manifest.check()?;
    Ok(manifest)
}

fn read_payload(path: &Path, name: &str, expected: u64) -> Result<Vec<f64>> {
    let file_path = path.join(name);
    let mut file = File::open(&file_path)?;
    let found = file.metadata()?.len();
    if found != expected {
        return Err(Error::SizeMismatch {
            file: name.to_string(),
            expected,
            found,
        });
    }
    let mut bytes = Vec::with_capacity(expected as usize);
    file.read_to_end(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(path)?;
    let grid = GridSpec::new(manifest.grid, manifest.extent_m)?;
    let n = grid.len();
    let stored = manifest.stored();
    let expected = (stored * n * 8) as u64;
    for name in PAYLOADS {
        let found = fs::metadata(path.join(name))?.len();
        if found != expected {
            return Err(Error::SizeMismatch {
                file: name.to_string(),
                expected,
                found,
            });
        }
    }
    let k = read_payload(path, "k.bin", expected)?;
    let q = read_payload(path, "q.bin", expected)?;
    let u = read_payload(path, "u.bin", expected)?;

    let field = |data: &[f64], s: usize, unit: Unit| {
        ScalarField::new(grid, data[s * n..(s + 1) * n].to_vec(), unit)
            .map_err(|e| Error::CorruptManifest(format!("sample {s}: {e}")))
    };
    let mut shared: HashMap<usize, Arc<ScalarField>> = HashMap::new();
    let mut samples = Vec::with_capacity(stored);
    for s in 0..stored {
        let id = manifest.floorplan_ids[s];
        let kf = field(&k, s, Unit::Conductivity)?;
        let k = match shared.get(&id) {
            Some(prev) if **prev == kf => Arc::clone(prev),
            _ => {
                let a = Arc::new(kf);
                shared.insert(id, Arc::clone(&a));
                a
            }
        };
        samples.push(Sample {
            index: manifest.sample_indices[s],
            floorplan_id: id,
            k,
            q: field(&q, s, Unit::PowerDensity)?,
            u: field(&u, s, Unit::Temperature)?,
            provenance: manifest.method,
            residual: manifest.residuals[s],
        });
    }
    Ok(Dataset {
        grid,
        bc: manifest.bc,
        samples,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: usize,
    pub failed: usize,
    pub max_residual: f64,
    /// Recomputed residual per stored sample.
    pub residuals: Vec<f64>,
    /// Stored positions of failing samples.
    pub failures: Vec<usize>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

/// Recomputes `||A u - (M q + g)|| / ||M q + g||` for every sample, with
/// `A` and `g` re-assembled from the stored conductivity field.
pub fn validate_samples(ds: &Dataset, tol: f64) -> Result<ValidationReport> {
    let mut ops: HashMap<String, DiscreteOperator> = HashMap::new();
    let mut report = ValidationReport {
        passed: 0,
        failed: 0,
        max_residual: 0.0,
        residuals: Vec::with_capacity(ds.len()),
        failures: Vec::new(),
    };
    for (s, sample) in ds.samples.iter().enumerate() {
        let digest = field_digest(&sample.k);
        if !ops.contains_key(&digest) {
            let op = assemble(&sample.k, &ds.grid, &ds.bc)?;
            ops.insert(digest.clone(), op);
        }
        let r = relative_residual(&ops[&digest], sample.u.values(), sample.q.values())?;
        report.residuals.push(r);
        if r <= tol {
            report.passed += 1;
        } else {
            report.failed += 1;
            report.failures.push(s);
        }
        if r.is_nan() || r > report.max_residual {
            report.max_residual = if r.is_nan() { f64::NAN } else { r };
        }
    }
    Ok(report)
}

pub fn validate_dataset(path: &Path, tol: f64) -> Result<ValidationReport> {
    validate_samples(&read_dataset(path)?, tol)
}
