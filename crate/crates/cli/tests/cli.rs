use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use num_complex::Complex64;
use tempfile::TempDir;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ofo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ofo")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a copy of a scenario with `edit` applied.
fn edited_scenario(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(repo(&format!("scenarios/{name}"))).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn powerflow_reports_bundled_case() {
    let o = ofo(&["powerflow"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 41);
    let last = out.lines().last().unwrap();
    let residual: f64 = last.split("mismatch ").nth(1).unwrap().trim_end_matches(" pu").parse().unwrap();
    assert!(residual <= 1e-8, "{last}");
}

/// Slack at 1∠0 feeding a PQ load through r + jx: |V2| solves
/// v⁴ + (2(PR + QX) − 1)v² + (P² + Q²)(R² + X²) = 0 (upper root), and
/// V1 = V2 + Z·conj(S/V2) fixes the angle.
#[test]
fn powerflow_two_bus_matches_closed_form() {
    let (p, q, r, x): (f64, f64, f64, f64) = (0.5, 0.2, 0.01, 0.1);
    let b = 2.0 * (p * r + q * x) - 1.0;
    let c = (p * p + q * q) * (r * r + x * x);
    let v = ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt();
    let theta = -(Complex64::new(v, 0.0) + Complex64::new(r, x) * Complex64::new(p, -q) / v).arg();

    let o = ofo(&["powerflow", "--grid", fixture("two_bus.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let row: Vec<f64> = out.lines().nth(2).unwrap().split_whitespace().skip(2).map(|s| s.parse().unwrap()).collect();
    assert!((row[0] - v).abs() < 1e-6, "v {} vs {v}", row[0]);
    assert!((row[1] - theta.to_degrees()).abs() < 1e-5, "theta {} vs {}", row[1], theta.to_degrees());
    assert!((row[2] + p).abs() < 1e-5 && (row[3] + q).abs() < 1e-5);
}

#[test]
fn malformed_grid_is_an_input_error_naming_the_line() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\n  \"base_mva\": 100,\n  \"buses\": [,]\n}\n").unwrap();
    let o = ofo(&["powerflow", "--grid", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_named() {
    let dir = TempDir::new().unwrap();
    let sc = edited_scenario(dir.path(), "no_event.json", |v| {
        v["sim"]["dtt"] = serde_json::json!(0.01);
    });
    let out = dir.path().join("out");
    let o = ofo(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dtt"), "{}", stderr(&o));
}

#[test]
fn missing_scenario_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let o = ofo(&["simulate", "--scenario", "does/not/exist.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = ofo(&["simulate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergent_power_flow_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let mut grid: serde_json::Value = serde_json::from_slice(&fs::read(fixture("two_bus.json")).unwrap()).unwrap();
    grid["buses"][1]["load_p"] = serde_json::json!(50.0);
    let path = dir.path().join("heavy.json");
    fs::write(&path, serde_json::to_vec(&grid).unwrap()).unwrap();
    let o = ofo(&["powerflow", "--grid", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn contingency_scenario_writes_trajectory_and_plots() {
    let dir = TempDir::new().unwrap();
    let o = ofo(&["simulate", "--scenario", repo("scenarios/contingency.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut r = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    let mut expected = vec!["t".to_string(), "vgap".into()];
    expected.extend((1..=39).map(|i| format!("v_{i}")));
    expected.push("dtheta".into());
    expected.extend((1..=34).map(|i| format!("flow_{i}")));
    for prefix in ["pOFO", "vOFO", "pm"] {
        expected.extend((1..=10).map(|i| format!("{prefix}_{i}")));
    }
    assert_eq!(header, expected);
    let t: Vec<f64> = r.records().map(|rec| rec.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(t.len(), 2001);
    assert!(t.iter().enumerate().all(|(k, &t)| (t - 0.1 * k as f64).abs() < 1e-9));

    for svg in ["gap.svg", "v_setpoints.svg", "active_power.svg"] {
        let s = fs::read_to_string(dir.path().join(svg)).unwrap();
        assert!(s.starts_with("<svg") && s.contains("controller activated"), "{svg}");
    }
    let log = fs::read_to_string(dir.path().join("events.log")).unwrap();
    assert!(log.contains("line 38 tripped") && log.contains("controller activated"));
}

#[test]
fn no_event_trajectory_is_flat() {
    let dir = TempDir::new().unwrap();
    let o = ofo(&["simulate", "--scenario", repo("scenarios/no_event.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        r.records().map(|rec| rec.unwrap().iter().map(|f| f.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 101);
    for row in &rows {
        for (a, b) in row.iter().zip(&rows[0]).skip(1) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    assert_eq!(fs::read_to_string(dir.path().join("events.log")).unwrap(), "");
}

#[test]
fn guarded_reclose_appears_in_event_log() {
    let dir = TempDir::new().unwrap();
    let sc = repo("scenarios/guarded_reclose.json");
    let o = ofo(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(dir.path().join("events.log")).unwrap();
    let line = log.lines().find(|l| l.ends_with("line 38 reclosed")).expect("no reclose logged");
    let t: f64 = line.split_whitespace().next().unwrap().parse().unwrap();
    assert!(t > 40.0, "reclosed at {t}");
    assert!(log.contains("guard held back"));
}

#[test]
fn reruns_are_byte_identical_and_plots_regenerate() {
    let dir = TempDir::new().unwrap();
    let sc = edited_scenario(dir.path(), "contingency.json", |v| {
        v["sim"]["t_end"] = serde_json::json!(60.0);
        v["ofo"]["noise"] = serde_json::json!(1e-3);
    });
    let run = |out: &str, seed: &str| {
        let out = dir.path().join(out);
        let o = ofo(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b, c) = (run("a", "11"), run("b", "11"), run("c", "12"));
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    for f in ["trajectory.csv", "events.log", "gap.svg", "active_power.svg"] {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs");
    }
    assert_ne!(read(&a, "trajectory.csv"), read(&c, "trajectory.csv"));

    let svg = read(&a, "gap.svg");
    fs::remove_file(a.join("gap.svg")).unwrap();
    let o = ofo(&["plot", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&a, "gap.svg"), svg);
}

#[test]
fn sensitivity_command_writes_labelled_matrix() {
    let dir = TempDir::new().unwrap();
    let sc = repo("scenarios/contingency.json");
    let out = dir.path().to_str().unwrap();
    let o = ofo(&["sensitivity", "--scenario", sc.to_str().unwrap(), "--out", out, "--sensitivity-topology", "15"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sensitivity.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 21);
    assert_eq!((header[0], header[1], header[11]), ("output", "p_1", "v_1"));
    assert_eq!(lines.count(), 39 + 34 + 1);

    let o = ofo(&["sensitivity", "--scenario", sc.to_str().unwrap(), "--out", out, "--sensitivity-topology", "27"]);
    assert_eq!(o.status.code(), Some(2), "islanding removal: {}", stderr(&o));
    let o = ofo(&["sensitivity", "--out", out, "--sensitivity-topology", "line"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn short_sweep_tags_every_candidate() {
    let dir = TempDir::new().unwrap();
    let sc = edited_scenario(dir.path(), "contingency.json", |v| {
        v["sim"]["t_end"] = serde_json::json!(50.0);
    });
    let out = dir.path().join("out");
    let o = ofo(&["robustness", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["line", "status", "peak", "max_gap", "final_gap", "steps_to_halve", "milestone", "stable", "reason"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 34);
    assert_eq!((&rows[0][0], &rows[0][1]), ("nominal", "nominal"));
    let ids: Vec<usize> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]) && !ids.contains(&38));
    let skipped: Vec<usize> = rows[1..].iter().filter(|r| &r[1] == "skipped").map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(skipped, [27, 28, 29, 35, 36]);
    assert!(rows[1..].iter().filter(|r| &r[1] == "skipped").all(|r| r[8].contains("islanded")));
    assert!(rows[1..].iter().all(|r| &r[1] != "failed"));
    assert!(out.join("gap_series.csv").is_file() && out.join("robustness.svg").is_file());
}
