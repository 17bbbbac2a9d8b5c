mod common;

use std::fs;
use std::path::Path;

use blockoa::datasetio::*;
use blockoa::pipeline::{generate_blockoa, generate_direct, Method};
use blockoa::{Error, ScalarField, Unit};
use common::*;
use tempfile::tempdir;

fn small_blockoa(n_data: usize) -> Dataset {
    generate_blockoa(&small_config([4, 4, 4], n_data, 4, 2)).unwrap().0
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut serde_json::Map<String, serde_json::Value>)) {
    let path = dir.join(MANIFEST);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(v.as_object_mut().unwrap());
    fs::write(path, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn payload_sizes() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("ds");
    write_dataset(&small_blockoa(2), &out, WriteOptions::default()).unwrap();
    for name in ["k.bin", "q.bin", "u.bin"] {
        assert_eq!(fs::metadata(out.join(name)).unwrap().len(), 1024, "{name}");
    }
    assert!(out.join(MANIFEST).is_file());
}

#[test]
fn round_trip_is_bitwise() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("ds");
    let ds = small_blockoa(5);
    let opts = WriteOptions {
        include_wall_times: true,
        ..Default::default()
    };
    let written = write_dataset(&ds, &out, opts).unwrap();
    assert_eq!(written, ds.manifest);
    let back = read_dataset(&out).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.samples.iter().zip(&ds.samples) {
        let bits = |f: &ScalarField| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.u), bits(&b.u));
        assert_eq!(bits(&a.q), bits(&b.q));
        assert_eq!(bits(&a.k), bits(&b.k));
    }
}

#[test]
fn default_write_zeroes_wall_times_only() {
    let dir = tempdir().unwrap();
    let ds = small_blockoa(3);
    let m = write_dataset(&ds, &dir.path().join("ds"), WriteOptions::default()).unwrap();
    assert_eq!(m.timings.total_s, 0.0);
    assert_eq!(m.timings.basis_solve_s, 0.0);
    assert_eq!(m.timings.iterations_total, ds.manifest.timings.iterations_total);
    assert_eq!(m.timings.matvecs_total, ds.manifest.timings.matvecs_total);
}

#[test]
fn identical_runs_give_identical_bytes() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_dataset(&small_blockoa(6), &a, WriteOptions::default()).unwrap();
    write_dataset(&small_blockoa(6), &b, WriteOptions::default()).unwrap();
    for name in ["k.bin", "q.bin", "u.bin", MANIFEST] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn occupied_directory_needs_overwrite() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("ds");
    write_dataset(&small_blockoa(2), &out, WriteOptions::default()).unwrap();
    let bigger = small_blockoa(3);
    assert!(matches!(
        write_dataset(&bigger, &out, WriteOptions::default()),
        Err(Error::Exists(_))
    ));
    assert_eq!(read_dataset(&out).unwrap().len(), 2);
    let opts = WriteOptions {
        overwrite: true,
        ..Default::default()
    };
    write_dataset(&bigger, &out, opts).unwrap();
    assert_eq!(read_dataset(&out).unwrap().len(), 3);
    let leftovers = fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 1);
}

#[test]
fn non_empty_foreign_directory_is_refused() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("notes.txt"), "keep me").unwrap();
    assert!(matches!(
        write_dataset(&small_blockoa(1), dir.path(), WriteOptions::default()),
        Err(Error::Exists(_))
    ));
    assert!(dir.path().join("notes.txt").exists());
}

#[test]
fn truncated_payload_is_size_mismatch() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("ds");
    write_dataset(&small_blockoa(2), &out, WriteOptions::default()).unwrap();
    let u = fs::read(out.join("u.bin")).unwrap();
    fs::write(out.join("u.bin"), &u[..1000]).unwrap();
    match read_dataset(&out) {
        Err(Error::SizeMismatch { file, expected, found }) => {
            assert_eq!(file, "u.bin");
            assert_eq!((expected, found), (1024, 1000));
        }
        other => panic!("expected SizeMismatch, got {other:?}"),
    }
}

#[test]
fn malformed_manifests_are_corrupt() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("ds");
    write_dataset(&small_blockoa(2), &out, WriteOptions::default()).unwrap();
    let original = fs::read(out.join(MANIFEST)).unwrap();

    edit_manifest(&out, |m| {
        m.remove("grid");
    });
    assert!(matches!(read_dataset(&out), Err(Error::CorruptManifest(_))));

    fs::write(out.join(MANIFEST), &original).unwrap();
    edit_manifest(&out, |m| {
        m.insert("surprise".into(), serde_json::json!(1));
    });
    assert!(matches!(read_manifest(&out), Err(Error::CorruptManifest(_))));

    fs::write(out.join(MANIFEST), &original).unwrap();
    edit_manifest(&out, |m| {
        m.insert("format_version".into(), serde_json::json!(99));
    });
    assert!(matches!(read_manifest(&out), Err(Error::CorruptManifest(_))));

    fs::write(out.join(MANIFEST), b"{ not json").unwrap();
    assert!(matches!(read_manifest(&out), Err(Error::CorruptManifest(_))));

    fs::write(out.join(MANIFEST), &original).unwrap();
    assert_eq!(read_dataset(&out).unwrap().len(), 2);
}

#[test]
fn missing_directory_is_io_error() {
    let dir = tempdir().unwrap();
    assert!(matches!(read_dataset(&dir.path().join("nope")), Err(Error::Io(_))));
}

#[test]
fn validation_separates_exact_and_iterative_samples() {
    let dir = tempdir().unwrap();
    let mut cfg = small_config([8, 8, 4], 6, 4, 2);
    cfg.solver.rel_tol = 1e-9;

    let blockoa = dir.path().join("blockoa");
    write_dataset(&generate_blockoa(&cfg).unwrap().0, &blockoa, WriteOptions::default()).unwrap();
    let report = validate_dataset(&blockoa, 1e-10).unwrap();
    assert_eq!((report.passed, report.failed), (6, 0));
    assert!(report.max_residual <= 1e-12);

    let direct = dir.path().join("direct");
    write_dataset(&generate_direct(&cfg).unwrap().0, &direct, WriteOptions::default()).unwrap();
    assert!(validate_dataset(&direct, 1e-8).unwrap().all_passed());
    let strict = validate_dataset(&direct, 1e-12).unwrap();
    assert!(strict.failed > 0);
    assert_eq!(read_manifest(&direct).unwrap().method, Method::Direct);
}

#[test]
fn corrupted_sample_is_the_only_failure() {
    let mut ds = small_blockoa(5);
    let grid = ds.grid;
    ds.samples[3].u = ScalarField::constant(grid, 0.0, Unit::Temperature);
    let report = validate_samples(&ds, 1e-10).unwrap();
    assert_eq!(report.failures, vec![3]);
    assert_eq!(report.passed, 4);
    assert!((report.residuals[3] - 1.0).abs() < 1e-12, "{}", report.residuals[3]);
}

#[test]
fn empty_dataset_round_trips() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("ds");
    let ds = small_blockoa(0);
    write_dataset(&ds, &out, WriteOptions::default()).unwrap();
    assert_eq!(fs::metadata(out.join("u.bin")).unwrap().len(), 0);
    assert!(read_dataset(&out).unwrap().is_empty());
    assert!(validate_dataset(&out, 1e-12).unwrap().all_passed());
}
