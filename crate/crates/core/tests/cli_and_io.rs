use std::fs;
use std::path::Path;
use std::process::Command;

use phasefield::scenarios::{
    decode_snapshot, encode_snapshot, read_snapshot, run_experiment, ExperimentConfig, GridSpec,
    InitialCondition, CSV_HEADER, SNAPSHOT_HEADER_LEN,
};
use phasefield::{Grid2D, ScalarField};

fn small_config(scheme: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        scheme,
        GridSpec { nx: 12, ny: 10 },
        5e-3,
        100.0,
        1.0,
        1e-3,
        1e-2,
        InitialCondition::Random { amplitude: 0.05 },
    );
    cfg.seed = 7;
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phasefield"))
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

#[test]
fn ten_steps_give_eleven_records() {
    let (records, snaps) = run_experiment(&small_config("AC-L1-EQ")).unwrap();
    assert_eq!(records.len(), 11);
    assert_eq!(records[0].t, 0.0);
    assert!(snaps.is_empty());
    let v0 = records[0].volume;
    for r in &records {
        assert!(r.energy.is_finite() && r.volume.is_finite());
        assert!((r.volume - v0).abs() <= 1e-8);
    }
}

#[test]
fn snapshot_bytes_round_trip() {
    let g = Grid2D::new(3, 2, 1.0, 1.0).unwrap();
    let f =
        ScalarField::from_values(g, vec![0.0, -1.5, 2.0f64.sqrt(), 1e-300, 7.0, f64::MAX]).unwrap();
    let bytes = encode_snapshot(0.125, &f);
    assert_eq!(bytes.len(), SNAPSHOT_HEADER_LEN + 6 * 8);
    assert_eq!(&bytes[..4], b"PFLD");
    let (nx, ny, t, v) = decode_snapshot(&bytes).unwrap();
    assert_eq!((nx, ny, t), (3, 2, 0.125));
    assert_eq!(v, f.values());
    assert!(decode_snapshot(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn config_rejects_unknown_keys() {
    let mut v: serde_json::Value =
        serde_json::from_str(&small_config("AC-EQ").to_json().unwrap()).unwrap();
    v["colour"] = serde_json::json!("blue");
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
}

#[test]
fn shipped_configs_parse_and_carry_their_setups() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            cfg.validate()
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 10);
    let drops = ExperimentConfig::load(&dir.join("drops_ac_eq.json")).unwrap();
    assert_eq!(
        (drops.gamma1, drops.gamma2, drops.mobility, drops.dt),
        (5e-3, 100.0, 1.0, 1e-5)
    );
    assert_eq!((drops.grid.nx, drops.grid.ny), (256, 256));
    let coarsening = ExperimentConfig::load(&dir.join("coarsening_ac_eq.json")).unwrap();
    assert_eq!((coarsening.gamma1, coarsening.gamma2, coarsening.mobility), (1e-3, 50.0, 1.0));
}

#[test]
fn cli_run_writes_reproducible_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config("CH-SAV"));
    let run = |out: &str| {
        let status = bin()
            .args(["run", cfg.to_str().unwrap(), "--out-dir"])
            .arg(tmp.path().join(out))
            .args(["--snapshot-every", "5", "--seed", "3", "--policy", "reset"])
            .status()
            .unwrap();
        assert!(status.success());
    };
    run("a");
    run("b");
    let csv = fs::read_to_string(tmp.path().join("a/diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 11);
    let names = [
        "diagnostics.csv",
        "snap_00000000.pfld",
        "snap_00000005.pfld",
        "snap_00000010.pfld",
    ];
    for name in names {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let (nx, ny, t, v) = read_snapshot(&tmp.path().join("a/snap_00000010.pfld")).unwrap();
    assert_eq!((nx, ny), (12, 10));
    assert!((t - 1e-2).abs() < 1e-15);
    assert!(v.iter().all(|x| x.is_finite()));
    // every CSV float reads back to the value it came from
    for line in csv.lines().skip(1) {
        for field in line.split(',').skip(1).take(4) {
            let x: f64 = field.parse().unwrap();
            assert_eq!(format!("{x:.16e}"), field);
        }
    }
}

#[test]
fn cli_reports_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, "{\"scheme\": \"AC-XX\"}").unwrap();
    let out = bin()
        .args(["run", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = bin()
        .args(["run", "--policy", "sideways", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_refine_and_stability() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config("AC-EQ");
    cfg.initial = InitialCondition::Cosine;
    cfg.domain.origin = [-1.0, -1.0];
    cfg.domain.extent = [2.0, 2.0];
    cfg.t_end = 0.04;
    cfg.refine = Some(phasefield::scenarios::RefineSpec {
        dts: vec![1e-2, 5e-3],
        reference_dt: 1e-3,
    });
    let path = write_config(tmp.path(), &cfg);
    let out = bin()
        .args(["refine", path.to_str().unwrap(), "--out-dir"])
        .arg(tmp.path().join("r"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(tmp.path().join("r/refinement.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let out = bin()
        .args([
            "stability",
            "--scheme",
            "CH-EQ",
            "--phiss",
            "0.5,0.1",
            "--kmax",
            "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,phiss,k,l,sigma_analytic"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("CH,0.5,0,0,0"));
}
