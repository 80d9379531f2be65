use std::path::{Path, PathBuf};
use std::process::Command;

use dsse_harness::tables::TABLE_NAMES;
use dsse_harness::{reproduce_all, run_pipeline, ExperimentConfig, HarnessError, MetricsReport, Overrides, METRICS_FILE};

fn smoke(out: &Path) -> ExperimentConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let mut cfg = ExperimentConfig::load(p).unwrap();
    cfg.apply(&Overrides { seed: None, out: Some(out.to_path_buf()) }).unwrap();
    cfg
}

#[test]
fn smoke_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    let s = reproduce_all(&cfg).unwrap();
    let out = dir.path();
    for f in ["config.toml", "manifest.toml", METRICS_FILE, "seed0/stamp.toml", "seed0/network.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    for t in TABLE_NAMES {
        assert!(out.join("tables").join(format!("{t}.csv")).exists());
        assert!(out.join("tables").join(format!("{t}.txt")).exists());
    }
    assert!(out.join("seed0/ratio0.50/forecasters/transformer.toml").exists());
    assert!(out.join("seed0/estimators/cnn_prox_uwa.toml").exists());

    let read = MetricsReport::read_csv(out.join(METRICS_FILE)).unwrap();
    assert_eq!(read, s.report);
    for e in ["forecasting", "mtl", "schemes", "pipeline"] {
        assert!(read.rows.iter().any(|r| r.experiment == e), "{e}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"complete\""));
    assert!(manifest.contains(&s.config_hash));

    // The stored artifacts reproduce the pipeline rows.
    let again = run_pipeline(&cfg, out).unwrap();
    let stored: Vec<_> =
        s.report.rows.iter().filter(|r| r.experiment == "pipeline" || r.experiment == "forecasting").cloned().collect();
    let mut again_rows = again.rows;
    let key = |r: &dsse_harness::MetricsRow| (r.experiment.clone(), r.model.clone(), r.source.clone(), r.task.clone(), r.ratio.to_bits());
    let mut stored = stored;
    stored.sort_by_key(key);
    again_rows.sort_by_key(key);
    assert_eq!(stored, again_rows);
}

#[test]
fn pipeline_without_artifacts_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    match run_pipeline(&cfg, dir.path()) {
        Err(HarnessError::MissingArtifact(p)) => assert!(p.ends_with("network.toml")),
        other => panic!("expected a missing artifact, got {:?}", other.map(|r| r.rows.len())),
    }
}

#[test]
fn config_hash_ignores_the_output_directory() {
    let a = smoke(Path::new("a"));
    let b = smoke(Path::new("b"));
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    let mut c = smoke(Path::new("a"));
    c.data.steps += 1;
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn unknown_config_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml("[data]\nstepz = 10\n").is_err());
    assert!(ExperimentConfig::from_toml("[data]\nsteps = 10\n").is_ok());
}

fn dsse(args: &[&str], out: &Path) -> std::process::Output {
    let config: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    Command::new(env!("CARGO_BIN_EXE_dsse"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_stages_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let failed = dsse(&["pipeline", "--seed", "4"], out);
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("network.toml"));
    for stage in ["generate", "corrupt", "train-forecaster", "train-estimator", "evaluate", "pipeline"] {
        let o = dsse(&[stage, "--seed", "4"], out);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(out.join("seed4/ratio0.50/measurements.csv").exists());
    assert!(!out.join("seed0").exists());
    let report = MetricsReport::read_csv(out.join("pipeline.csv")).unwrap();
    assert!(report.rows.iter().all(|r| r.seed == 4));
    assert!(out.join("tables_evaluate/mtl.txt").exists());
}
