//! End-to-end subcommand tests: exit codes, artifact layout, pinned CSV
//! shapes, and rerun determinism, all through the real binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn onestep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onestep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, expected: i32) {
    assert_eq!(
        out.status.code(),
        Some(expected),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap_or_else(|e| panic!("parsing {name}: {e}"))
}

#[test]
fn validate_reports_threshold_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&["validate", "--out", tmp.path().to_str().unwrap()]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("N0 = 6"));
    let v = json(tmp.path(), "validation.json");
    assert_eq!(v["all_passed"], true);
    assert_eq!(v["report"]["n0"], 6);
    let m = json(tmp.path(), "manifest.json");
    assert_eq!(m["command"], "validate");
    assert_eq!(m["config_digest"].as_str().unwrap().len(), 16);
}

#[test]
fn validate_rejects_inadmissible_model_file() {
    let tmp = tempfile::tempdir().unwrap();
    // A(1) = 1 != 0: endpoint condition fails.
    let model = tmp.path().join("bad.model");
    fs::write(&model, "label = bad\neta = 0.1\na_coeffs = 1\nc_coeffs = 0 1\n").unwrap();
    let out = onestep(&[
        "validate",
        "--model",
        model.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn master_writes_trajectory_with_unit_mass_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "master",
        "--N",
        "100",
        "--t0",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    let csv = read(tmp.path(), "trajectory.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,k,p");
    assert_eq!(lines.len(), 1 + 21 * 101, "21 time rows x 101 states");

    // Sum p over each time block: every block is a probability vector.
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for line in &lines[1..] {
        let mut parts = line.split(',');
        let t = parts.next().unwrap().to_string();
        let p: f64 = parts.nth(1).unwrap().parse().unwrap();
        *sums.entry(t).or_insert(0.0) += p;
    }
    assert_eq!(sums.len(), 21);
    for (t, s) in &sums {
        assert!((s - 1.0).abs() < 1e-9, "mass {s} at t = {t}");
    }

    let c = json(tmp.path(), "conservation.json");
    assert!(c["max_mass_drift"].as_f64().unwrap() < 1e-9);
    assert_eq!(c["contraction_ok"], true);
}

#[test]
fn master_missing_model_file_exits_2_naming_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "master",
        "--model",
        "no/such/model.file",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/model.file"));
}

#[test]
fn master_rejects_lattice_below_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "master",
        "--N",
        "6",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("N0 = 6"), "stderr: {err}");
}

#[test]
fn master_rejects_inadmissible_initial_density() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "master",
        "--u0",
        "0,1,-3",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn fp_conserves_mass_and_writes_metadata_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "fp",
        "--N",
        "50",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(read(tmp.path(), "field.csv").starts_with("t,x,u\n"));
    let meta = json(tmp.path(), "metadata.json");
    assert_eq!(meta["n"], 50);
    assert_eq!(meta["r"], 8);
    assert_eq!(meta["label"], "ehrenfest");
    let mi = meta["mass_initial"].as_f64().unwrap();
    let mf = meta["mass_final"].as_f64().unwrap();
    assert!(((mf - mi) / mi).abs() < 1e-8, "mass {mi} -> {mf}");
}

#[test]
fn master_stationary_start_is_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "master",
        "--N",
        "40",
        "--stationary",
        "--times",
        "3",
        "--format",
        "json",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let traj = json(tmp.path(), "trajectory.json");
    let states = traj["states"].as_array().unwrap();
    assert_eq!(states.len(), 3);
    let first = states[0].as_array().unwrap();
    let last = states[2].as_array().unwrap();
    for (a, b) in first.iter().zip(last) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn fp_stationary_start_stays_put() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "fp",
        "--N",
        "30",
        "--stationary",
        "--t0",
        "0.5",
        "--times",
        "2",
        "--format",
        "json",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let field = json(tmp.path(), "field.json");
    let first = field["fields"][0].as_array().unwrap();
    let last = field["fields"][1].as_array().unwrap();
    let drift = first
        .iter()
        .zip(last)
        .map(|(a, b)| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs())
        .fold(0.0f64, f64::max);
    assert!(drift < 1e-6, "stationary field moved by {drift}");
}

#[test]
fn converge_needs_three_rungs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "converge",
        "--N",
        "50,100",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn synthetic_ladder_fits_slope_minus_one_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "converge",
        "--synthetic",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report = json(tmp.path(), "report.json");
    let slope = report["fitted_order"].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 1e-12, "slope {slope}");
    assert!((report["r2"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(read(tmp.path(), "ladder.csv").starts_with("N,sup_error,error_at_t0,seconds\n"));
    let script = read(tmp.path(), "error_vs_n.gnuplot");
    assert!(script.contains("set logscale xy"));
    assert!(script.contains("ladder.csv"));
}

#[test]
fn synthetic_report_and_ladder_are_rerun_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = onestep(&[
            "converge",
            "--synthetic",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    assert_eq!(read(a.path(), "ladder.csv"), read(b.path(), "ladder.csv"));
    assert_eq!(read(a.path(), "report.json"), read(b.path(), "report.json"));
}

#[test]
fn consistency_fits_defect_orders() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "consistency",
        "--N",
        "40,80,160",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report = json(tmp.path(), "defect_report.json");
    assert!(report["fit_all"]["slope"].as_f64().unwrap() <= -0.9);
    assert!(report["fit_interior"]["slope"].as_f64().unwrap() <= -1.8);
    assert!(read(tmp.path(), "defects.csv")
        .starts_with("N,defect_all,defect_interior,defect_boundary\n"));
}

#[test]
fn consistency_exits_3_when_defects_vanish_identically() {
    // A constant observable has exactly zero interior defect for the urn
    // model (its image under both generators vanishes row by row), so the
    // interior fit has nothing to work with.
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "consistency",
        "--N",
        "8,16,32",
        "--f",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 3);
}

#[test]
fn conjectures_rejects_time_zero_probes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "conjectures",
        "--N",
        "25,50,100",
        "--t",
        "0,0.5",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn ssa_counts_sum_to_paths_and_stay_in_envelope() {
    let tmp = tempfile::tempdir().unwrap();
    let out = onestep(&[
        "ssa",
        "--N",
        "20",
        "--paths",
        "5000",
        "--seed",
        "11",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let csv = read(tmp.path(), "counts.csv");
    let total: u64 = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 5000);
    let summary = json(tmp.path(), "ssa.json");
    assert_eq!(summary["within_envelope"], true);
    assert_eq!(summary["k0"], 10);
}

#[test]
fn ssa_runs_unvalidatable_chains_when_comparison_is_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("death.model");
    fs::write(&model, "label = death\neta = 0.1\na_coeffs = 0\nc_coeffs = 0 1\n").unwrap();
    let args_base = [
        "ssa",
        "--model",
        model.to_str().unwrap(),
        "--N",
        "30",
        "--k0",
        "10",
        "--paths",
        "400",
        "--t-end",
        "50",
    ];

    // With the master comparison the model must validate: exit 2.
    let mut with_compare = args_base.to_vec();
    let out_dir = tmp.path().join("a");
    with_compare.extend(["--out", out_dir.to_str().unwrap()]);
    assert_code(&onestep(&with_compare), 2);

    // Without it the exact chain is still well-defined: all paths absorb
    // at zero.
    let mut no_compare = args_base.to_vec();
    let out_dir = tmp.path().join("b");
    no_compare.extend(["--no-compare", "--out", out_dir.to_str().unwrap()]);
    let out = onestep(&no_compare);
    assert_code(&out, 0);
    let csv = read(&out_dir, "counts.csv");
    assert_eq!(csv.lines().nth(1).unwrap(), "0,400");
    let summary = json(&out_dir, "ssa.json");
    assert!(summary["within_envelope"].is_null());
}

#[test]
fn format_flag_selects_artifact_family() {
    let tmp = tempfile::tempdir().unwrap();
    let csv_dir = tmp.path().join("csv");
    let json_dir = tmp.path().join("json");
    for (dir, format) in [(&csv_dir, "csv"), (&json_dir, "json")] {
        let out = onestep(&[
            "master",
            "--N",
            "20",
            "--format",
            format,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    assert!(csv_dir.join("trajectory.csv").exists());
    assert!(!csv_dir.join("trajectory.json").exists());
    assert!(!json_dir.join("trajectory.csv").exists());
    assert!(json_dir.join("trajectory.json").exists());
    // Reports and the manifest are written either way.
    for dir in [&csv_dir, &json_dir] {
        assert!(dir.join("conservation.json").exists());
        assert!(dir.join("manifest.json").exists());
    }
}

#[test]
fn reruns_are_byte_identical_apart_from_the_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = onestep(&[
            "ssa",
            "--N",
            "15",
            "--paths",
            "2000",
            "--seed",
            "77",
            "--ladder",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    assert_eq!(read(a.path(), "counts.csv"), read(b.path(), "counts.csv"));
    assert_eq!(read(a.path(), "ssa.json"), read(b.path(), "ssa.json"));
}

#[test]
fn jobs_flag_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(&a, "1"), (&b, "4")] {
        let out = onestep(&[
            "converge",
            "--N",
            "10,20,40",
            "--t0",
            "0.25",
            "--jobs",
            jobs,
            "--format",
            "csv",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    // Timing column differs; the measured columns must not.
    let strip = |s: String| -> Vec<String> {
        s.lines()
            .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(
        strip(read(a.path(), "ladder.csv")),
        strip(read(b.path(), "ladder.csv"))
    );
}
