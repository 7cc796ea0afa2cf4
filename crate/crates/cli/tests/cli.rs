use std::path::Path;
use std::process::{Command, Output};

use qpv_core::geometry::TimingGeometry;

fn qpv(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpv"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn qpv")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = [
        "--seed",
        "11",
        "simulate",
        "--minutes",
        "3",
        "--trials-per-file",
        "5000",
    ];
    assert!(qpv(&a, &args).status.success());
    assert!(qpv(&b, &args).status.success());
    for i in 0..3 {
        let name = format!("minute_{i:05}.qpvt");
        let fa = std::fs::read(a.join(&name)).unwrap();
        assert_eq!(fa, std::fs::read(b.join(&name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert!(qpv(
        &c,
        &[
            "--seed",
            "12",
            "simulate",
            "--minutes",
            "1",
            "--trials-per-file",
            "5000"
        ]
    )
    .status
    .success());
    assert_ne!(
        std::fs::read(a.join("minute_00000.qpvt")).unwrap(),
        std::fs::read(c.join("minute_00000.qpvt")).unwrap()
    );
}

#[test]
fn zero_minutes_writes_no_trial_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qpv(dir.path(), &["simulate", "--minutes", "0"])
        .status
        .success());
    let trial_files = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "qpvt")
        })
        .count();
    assert_eq!(trial_files, 0);
}

#[test]
fn honest_pipeline_passes_and_adversary_fails() {
    let dir = tempfile::tempdir().unwrap();
    let honest = dir.path().join("honest");
    // one instance of 12 files; 6e6 test trials give about 23 bits against a 1 bit target
    let sim = [
        "--seed",
        "3",
        "simulate",
        "--minutes",
        "12",
        "--trials-per-file",
        "3000000",
    ];
    assert!(qpv(&honest, &sim).status.success());
    let an = dir.path().join("an");
    let out = qpv(
        &an,
        &[
            "--delta-log2",
            "1",
            "analyze",
            honest.to_str().unwrap(),
            "--n",
            "6000000",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&an.join("analysis.json"));
    assert_eq!(report["passed"], 1);
    assert_eq!(report["tool_version"], env!("CARGO_PKG_VERSION"));
    assert!(an.join("instances.csv").exists());

    let cfg = dir.path().join("adv.json");
    std::fs::write(&cfg, r#"{"adversary": {"kind": "lr_vertex", "index": 0}}"#).unwrap();
    let adv = dir.path().join("adv");
    let out = qpv(
        &adv,
        &[
            "--seed",
            "3",
            "--config",
            cfg.to_str().unwrap(),
            "simulate",
            "--minutes",
            "12",
            "--trials-per-file",
            "3000000",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let an2 = dir.path().join("an2");
    let out = qpv(
        &an2,
        &[
            "--delta-log2",
            "1",
            "analyze",
            adv.to_str().unwrap(),
            "--n",
            "6000000",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&an2.join("analysis.json"))["failed"], 1);
}

#[test]
fn fit_and_build_tf_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qpv(dir.path(), &["fit", "--reference"]).status.success());
    let fit = dir.path().join("fit.json");
    let out = qpv(dir.path(), &["build-tf", "--fit", fit.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let tf = json(&dir.path().join("test_factor.json"));
    let g = tf["gain"]["g"].as_f64().unwrap();
    assert!((g - 3.79e-6).abs() < 0.02e-6, "g = {g}");
    assert_eq!(tf["factor"]["values"].as_array().unwrap().len(), 32);
}

#[test]
fn plan_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qpv(dir.path(), &["plan"]).status.success());
    let n = json(&dir.path().join("plan.json"))["n_trials"]
        .as_u64()
        .unwrap();
    assert!((25_800_000..26_000_000).contains(&n), "n = {n}");

    assert!(qpv(dir.path(), &["--delta-log2", "0", "plan"])
        .status
        .success());
    assert_eq!(json(&dir.path().join("plan.json"))["n_trials"], 0);

    let out = qpv(
        dir.path(),
        &["--mode", "entanglement", "--rth", "1e-3", "plan"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn geometry_reports_degenerate_ideal_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ideal.json");
    std::fs::write(
        &cfg,
        serde_json::to_string(&TimingGeometry::ideal(100.0)).unwrap(),
    )
    .unwrap();
    let out = qpv(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "geometry",
            "--outer",
            "100",
            "--inner",
            "1000",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&dir.path().join("geometry.json"));
    assert_eq!(report["degenerate"], true);
    assert!(report["advantages"][0]["mean"].is_null());
}

#[test]
fn geometry_reference_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = qpv(
        dir.path(),
        &[
            "geometry", "--outer", "300", "--inner", "4000", "--dim", "1",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&dir.path().join("geometry.json"));
    assert_eq!(report["degenerate"], false);
    let ideal = report["advantages"][0]["mean"].as_f64().unwrap();
    assert!((ideal - 2.47).abs() < 0.05, "{ideal}");
    assert!(dir.path().join("advantage_1d_ideal.csv").exists());
}
