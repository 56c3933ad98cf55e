use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cvf_cli::commands::{FitAudit, SimulateSummary};
use cvf_core::bench::{BenchmarkReport, TABLE_ROWS};
use cvf_core::dynsys::{integrate_field, IntegrationOptions};
use cvf_core::learner::VectorFieldModel;

fn cvf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvf"))
        .current_dir(dir)
        .arg("-q")
        .args(args)
        .output()
        .expect("cvf runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Samples of `x(t) = x0 e^{-t}` as a trajectory CSV.
fn write_decay_demo(dir: &Path, name: &str, x0: [f64; 2]) -> PathBuf {
    let mut text = String::from("t,x1,x2\n");
    for i in 0..200 {
        let t = 3.0 * i as f64 / 199.0;
        let s = (-t).exp();
        text.push_str(&format!("{t},{},{}\n", x0[0] * s, x0[1] * s));
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn fitted_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_decay_demo(dir.path(), "a.csv", [1.0, 0.5]);
    write_decay_demo(dir.path(), "b.csv", [-0.8, 1.2]);
    write_decay_demo(dir.path(), "c.csv", [0.3, -1.0]);
    let o = cvf(
        dir.path(),
        &[
            "fit",
            "--demos",
            "a.csv",
            "b.csv",
            "--degree",
            "2",
            "--tau",
            "1",
            "--out",
            "model.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn fit_writes_model_audit_and_config() {
    let dir = fitted_dir();
    let model = VectorFieldModel::from_json(
        &std::fs::read_to_string(dir.path().join("model.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(model.degree(), 2);
    let audit: FitAudit = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("model.audit.json")).unwrap(),
    )
    .unwrap();
    assert!(audit.ok);
    assert_eq!(audit.certificates.len(), 2);
    assert!(audit.certificates.iter().all(|c| c.max_residual <= 1e-6));
    assert!(dir.path().join("model.config.json").exists());
}

#[test]
fn rerun_from_resolved_config_is_byte_identical() {
    let dir = fitted_dir();
    let first = std::fs::read(dir.path().join("model.json")).unwrap();
    let again = cvf(
        dir.path(),
        &[
            "fit",
            "--config",
            "model.config.json",
            "--out",
            "again.json",
        ],
    );
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(std::fs::read(dir.path().join("again.json")).unwrap(), first);
}

#[test]
fn missing_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = cvf(
        dir.path(),
        &["fit", "--demos", "absent.csv", "--out", "m.json"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"));
}

#[test]
fn negative_tau_is_rejected_before_reading_input() {
    let dir = tempfile::tempdir().unwrap();
    // the demo file does not exist, so a compute step would fail differently
    let o = cvf(
        dir.path(),
        &[
            "fit",
            "--demos",
            "absent.csv",
            "--tau",
            "-1",
            "--out",
            "m.json",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tau"), "{}", stderr(&o));
    assert!(!dir.path().join("m.json").exists());
    assert!(!dir.path().join("m.config.json").exists());
}

#[test]
fn unfinished_solve_exits_3_with_audit() {
    let dir = tempfile::tempdir().unwrap();
    write_decay_demo(dir.path(), "a.csv", [1.0, 0.5]);
    let o = cvf(
        dir.path(),
        &[
            "fit",
            "--demos",
            "a.csv",
            "--degree",
            "2",
            "--max-iterations",
            "5",
            "--out",
            "m.json",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!dir.path().join("m.json").exists());
    let audit: FitAudit =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.audit.json")).unwrap())
            .unwrap();
    assert!(!audit.ok);
    assert!(audit.error.unwrap().contains("IterationLimit"));
}

#[test]
fn schema_mismatch_exits_2() {
    let dir = fitted_dir();
    let text = std::fs::read_to_string(dir.path().join("model.json"))
        .unwrap()
        .replace("\"schema_version\": 1", "\"schema_version\": 7");
    std::fs::write(dir.path().join("old.json"), text).unwrap();
    let o = cvf(
        dir.path(),
        &["simulate", "--model", "old.json", "--out-dir", "sim"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema"));
}

#[test]
fn simulate_grid_writes_sixteen_runs_deterministically() {
    let dir = fitted_dir();
    for out in ["sim1", "sim2"] {
        let o = cvf(
            dir.path(),
            &[
                "simulate",
                "--model",
                "model.json",
                "--out-dir",
                out,
                "--grid-demos",
                "a.csv",
                "b.csv",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let summary: SimulateSummary = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sim1/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary.runs.len(), 16);
    // 30 times the 3 s demonstrations
    assert_eq!(summary.horizon, 90.0);
    let model = VectorFieldModel::from_json(
        &std::fs::read_to_string(dir.path().join("model.json")).unwrap(),
    )
    .unwrap();
    for run in &summary.runs {
        let a = std::fs::read(dir.path().join("sim1").join(&run.file)).unwrap();
        let b = std::fs::read(dir.path().join("sim2").join(&run.file)).unwrap();
        assert_eq!(a, b, "{}", run.file);
        let replay = integrate_field(
            &model,
            &run.start,
            &IntegrationOptions::for_horizon(summary.horizon).with_dt(summary.dt),
        )
        .unwrap();
        assert_eq!(replay.final_state().as_slice(), run.final_state.as_slice());
    }
}

#[test]
fn simulate_with_obstacles_modulates_the_run() {
    let dir = fitted_dir();
    std::fs::write(
        dir.path().join("obstacles.ndjson"),
        "{\"t\": 0.0, \"points\": [[0.5, 0.25]]}\n",
    )
    .unwrap();
    let base = [
        "simulate",
        "--model",
        "model.json",
        "--start",
        "1,0.5",
        "--horizon",
        "3",
    ];
    let plain = cvf(dir.path(), &[&base[..], &["--out-dir", "plain"]].concat());
    let modulated = cvf(
        dir.path(),
        &[
            &base[..],
            &[
                "--out-dir",
                "mod",
                "--obstacles",
                "obstacles.ndjson",
                "--exclusion-radius",
                "0.01",
            ],
        ]
        .concat(),
    );
    assert!(
        plain.status.success() && modulated.status.success(),
        "{}",
        stderr(&modulated)
    );
    let summary: SimulateSummary = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("mod/summary.json")).unwrap(),
    )
    .unwrap();
    assert!(summary.runs[0].alpha.unwrap() > 0.0);
    assert_ne!(
        std::fs::read(dir.path().join("plain/trajectory_000.csv")).unwrap(),
        std::fs::read(dir.path().join("mod/trajectory_000.csv")).unwrap()
    );
}

#[test]
fn eval_prints_every_table_row_and_writes_json() {
    let dir = fitted_dir();
    let o = cvf(
        dir.path(),
        &[
            "eval",
            "--model",
            "model.json",
            "--train",
            "a.csv",
            "b.csv",
            "--test",
            "c.csv",
            "--out",
            "report.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    for row in TABLE_ROWS {
        assert!(table.contains(row), "missing {row}");
    }
    let report: BenchmarkReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert!(report.test.is_some());
    assert_eq!(report.goal.reached, 3);
    // training time comes from the fit audit
    assert!(report.timing.training_time.is_some());
}
