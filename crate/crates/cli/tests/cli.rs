use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn covrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covrf"))
        .current_dir(dir)
        .args(args)
        .env_remove("COVRF_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 60 rows: a continuous covariate, a three-level categorical one, and two
/// responses whose spread grows with `a`.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut x = String::from("a,colour\n");
    let mut y = String::from("y1,y2\n");
    for i in 0..60 {
        let a = i as f64 / 59.0;
        let colour = ["red", "green", "blue"][i % 3];
        x.push_str(&format!("{a},{colour}\n"));
        let s = 1.0 + 3.0 * a;
        let e1 = ((i * 37 % 17) as f64 - 8.0) / 8.0;
        let e2 = ((i * 53 % 19) as f64 - 9.0) / 9.0;
        y.push_str(&format!("{},{}\n", s * e1, s * (0.5 * e1 + e2)));
    }
    std::fs::write(dir.path().join("x.csv"), x).unwrap();
    std::fs::write(dir.path().join("y.csv"), y).unwrap();
    dir
}

fn fit(dir: &Path) {
    let out = covrf(
        dir,
        &[
            "fit",
            "--x",
            "x.csv",
            "--y",
            "y.csv",
            "--ntree",
            "30",
            "--nodesize",
            "8",
            "--out-dir",
            "fit",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn fit_writes_all_outputs() {
    let ws = workspace();
    fit(ws.path());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path().join("fit/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["n"], 60);
    assert_eq!(summary["q"], 2);
    assert_eq!(summary["nodesize"], 8);
    let oob = std::fs::read_to_string(ws.path().join("fit/oob_estimates.csv")).unwrap();
    assert!(oob.starts_with("row_id,j,k,value"));
    assert_eq!(oob.lines().count(), 1 + 60 * 3);
}

#[test]
fn usage_errors_exit_2() {
    let ws = workspace();
    assert_eq!(code(&covrf(ws.path(), &["fit", "--x", "x.csv"])), 2);
    let out = covrf(
        ws.path(),
        &["simulate", "--scenario", "nope", "--out-dir", "s"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn ingest_and_schema_errors() {
    let ws = workspace();
    let p = ws.path();
    std::fs::write(p.join("bad_y.csv"), "y1,y2\n1,abc\n").unwrap();
    std::fs::write(p.join("short_x.csv"), "a,colour\n0.5,red\n").unwrap();
    let out = covrf(
        p,
        &[
            "fit",
            "--x",
            "short_x.csv",
            "--y",
            "bad_y.csv",
            "--out-dir",
            "f",
        ],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));

    std::fs::write(p.join("missing.csv"), "a,colour\n0.5,\n").unwrap();
    let out = covrf(
        p,
        &[
            "fit",
            "--x",
            "missing.csv",
            "--y",
            "y.csv",
            "--out-dir",
            "f",
        ],
    );
    assert_eq!(code(&out), 4);

    let out = covrf(
        p,
        &[
            "fit",
            "--x",
            "x.csv",
            "--y",
            "y.csv",
            "--categorical",
            "nope",
            "--out-dir",
            "f",
        ],
    );
    assert_eq!(code(&out), 3);

    let out = covrf(
        p,
        &[
            "test",
            "--x",
            "x.csv",
            "--y",
            "y.csv",
            "--control",
            "nope",
            "--permutations",
            "2",
            "--ntree",
            "5",
        ],
    );
    assert_eq!(code(&out), 3);

    fit(p);
    std::fs::write(p.join("other.csv"), "b,colour\n0.5,red\n").unwrap();
    let out = covrf(
        p,
        &[
            "predict",
            "--model",
            "fit/model.covrf",
            "--x",
            "other.csv",
            "--out",
            "o.csv",
        ],
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn parameter_errors_exit_6() {
    let ws = workspace();
    let out = covrf(
        ws.path(),
        &[
            "fit",
            "--x",
            "x.csv",
            "--y",
            "y.csv",
            "--sampfrac",
            "1.5",
            "--out-dir",
            "f",
        ],
    );
    assert_eq!(code(&out), 6);
    std::fs::write(ws.path().join("c.toml"), "alpha = 2.0\n").unwrap();
    let out = covrf(
        ws.path(),
        &[
            "--config",
            "c.toml",
            "fit",
            "--x",
            "x.csv",
            "--y",
            "y.csv",
            "--out-dir",
            "f",
        ],
    );
    assert_eq!(code(&out), 6);
}

#[test]
fn missing_file_is_io_error() {
    let ws = workspace();
    let out = covrf(
        ws.path(),
        &[
            "predict",
            "--model",
            "nowhere.covrf",
            "--x",
            "x.csv",
            "--out",
            "o.csv",
        ],
    );
    assert_eq!(code(&out), 8);
}

#[test]
fn corrupt_or_future_models_are_rejected() {
    let ws = workspace();
    let p = ws.path();
    fit(p);
    let bytes = std::fs::read(p.join("fit/model.covrf")).unwrap();

    let mut flipped = bytes.clone();
    let last = flipped.len() - 2;
    flipped[last] ^= 0x01;
    std::fs::write(p.join("flipped.covrf"), &flipped).unwrap();
    let out = covrf(
        p,
        &[
            "predict",
            "--model",
            "flipped.covrf",
            "--x",
            "x.csv",
            "--out",
            "o.csv",
        ],
    );
    assert_eq!(code(&out), 7);
    assert!(stderr(&out).contains("checksum"));

    let text = String::from_utf8(bytes).unwrap();
    let future = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
    std::fs::write(p.join("future.covrf"), future).unwrap();
    let out = covrf(
        p,
        &[
            "predict",
            "--model",
            "future.covrf",
            "--x",
            "x.csv",
            "--out",
            "o.csv",
        ],
    );
    assert_eq!(code(&out), 7);
    assert!(stderr(&out).contains("version"));
}

#[test]
fn predict_handles_empty_input_and_unseen_levels() {
    let ws = workspace();
    let p = ws.path();
    fit(p);

    std::fs::write(p.join("empty.csv"), "a,colour\n").unwrap();
    let out = covrf(
        p,
        &[
            "predict",
            "--model",
            "fit/model.covrf",
            "--x",
            "empty.csv",
            "--out",
            "e.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(p.join("e.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);

    std::fs::write(p.join("new.csv"), "colour,a\npurple,0.2\nred,0.9\n").unwrap();
    let out = covrf(
        p,
        &[
            "predict",
            "--model",
            "fit/model.covrf",
            "--x",
            "new.csv",
            "--out",
            "n.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("purple"));
    let text = std::fs::read_to_string(p.join("n.csv")).unwrap();
    assert!(text.starts_with("row_id,j,k,value,correlation,sd_j,sd_k,fallback"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let ws = workspace();
    let p = ws.path();
    std::fs::write(
        p.join("c.toml"),
        "ntree = 12\nnodesize = 9\nseed = 3\nout_dir = \"from_config\"\n",
    )
    .unwrap();
    let out = covrf(
        p,
        &[
            "--config",
            "c.toml",
            "fit",
            "--x",
            "x.csv",
            "--y",
            "y.csv",
            "--nodesize",
            "6",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p.join("from_config/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["params"]["ntree"], 12);
    assert_eq!(summary["params"]["seed"], 3);
    assert_eq!(summary["nodesize"], 6);

    std::fs::write(p.join("typo.toml"), "ntrees = 12\n").unwrap();
    let out = covrf(
        p,
        &[
            "--config",
            "typo.toml",
            "fit",
            "--x",
            "x.csv",
            "--y",
            "y.csv",
        ],
    );
    assert_eq!(code(&out), 6);
}

#[test]
fn test_and_vimp_reports() {
    let ws = workspace();
    let p = ws.path();
    let out = covrf(
        p,
        &[
            "test",
            "--x",
            "x.csv",
            "--y",
            "y.csv",
            "--ntree",
            "20",
            "--nodesize",
            "8",
            "--permutations",
            "9",
            "--categorical",
            "colour",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let p_value = report["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p_value));
    assert_eq!(report["perm_stats"].as_array().unwrap().len(), 9);
    assert_eq!(report["alpha"], 0.05);

    fit(p);
    let out = covrf(p, &["vimp", "--model", "fit/model.covrf"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["names"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_writes_manifest() {
    let ws = workspace();
    let out = covrf(
        ws.path(),
        &[
            "simulate",
            "--scenario",
            "p-h1-strong",
            "--ntrain",
            "40",
            "--reps",
            "2",
            "--permutations",
            "4",
            "--ntree",
            "10",
            "--out-dir",
            "sim",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path().join("sim/manifest.json")).unwrap())
            .unwrap();
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    assert_eq!(outputs[0]["figure"], "fig_significance_partial");
    let rows = std::fs::read_to_string(ws.path().join("sim/significance_p-h1-strong.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}
