use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use catenary_core::geometry::distance_to_model;
use catenary_core::simulator::{generate_sequence, Scenario};
use catenary_core::{ConductorConfig, ParamVector, Point3};
use tempfile::TempDir;

fn catenary(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catenary"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = catenary(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn count_frames(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("frame_"))
        .count()
}

#[test]
fn simulate_writes_frames_labels_and_truth() {
    let tmp = TempDir::new().unwrap();
    ok(&["simulate", "--mode", "global", "--outliers", "50", "--frames", "100", "--seed", "7", "--out", "g50"], tmp.path());
    let dir = tmp.path().join("g50");
    assert_eq!(count_frames(&dir), 100);
    let (h, rows) = read_csv(&dir.join("frame_00042.csv"));
    assert_eq!(h, ["x", "y", "z"]);
    let (lh, labels) = read_csv(&dir.join("labels_00042.csv"));
    assert_eq!(lh, ["label"]);
    assert_eq!(labels.len(), rows.len());
    assert_eq!(labels.iter().filter(|l| l[0] == "-1").count(), 50);
    let (th, truth) = read_csv(&dir.join("truth.csv"));
    assert_eq!(th, ["x_o", "y_o", "z_o", "psi", "a", "delta_1", "delta_2"]);
    assert_eq!(truth.len(), 1);

    ok(&["simulate", "--frames", "1", "--out", "one"], tmp.path());
    assert_eq!(count_frames(&tmp.path().join("one")), 1);
}

#[test]
fn simulated_files_read_back_exactly() {
    let tmp = TempDir::new().unwrap();
    ok(&["simulate", "--mode", "partial", "--outliers", "5", "--frames", "4", "--seed", "3", "--out", "r"], tmp.path());
    let dir = tmp.path().join("r");
    let info: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    let scenario: Scenario = serde_json::from_value(info["scenario"].clone()).unwrap();
    let frames = generate_sequence(&scenario).unwrap();
    for f in &frames {
        let (_, rows) = read_csv(&dir.join(format!("frame_{:05}.csv", f.cloud.frame_index)));
        let read: Vec<Point3> = rows
            .iter()
            .map(|r| Point3::new(r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap()))
            .collect();
        assert_eq!(read, f.cloud.points);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    for out in ["a", "b"] {
        ok(&["simulate", "--outliers", "10", "--frames", "5", "--seed", "11", "--out", out], p);
        ok(&["estimate", "--run", out, "--perturb-truth", "--seed", "2", "--omit-timing"], p);
        ok(&["benchmark", "--outliers", "0,5", "--repeats", "2", "--frames", "4", "--seed", "5", "--omit-timing",
             "--out", &format!("{out}/bench.csv"), "--runs-json", &format!("{out}/runs.json")], p);
    }
    for name in ["frame_00003.csv", "labels_00003.csv", "truth.csv", "run.json", "results.csv", "bench.csv", "runs.json"] {
        assert_eq!(fs::read(p.join("a").join(name)).unwrap(), fs::read(p.join("b").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn exact_frames_are_tracked_perfectly() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    ok(&["simulate", "--noise", "0", "--frames", "10", "--seed", "1", "--out", "clean"], p);
    ok(&["estimate", "--run", "clean", "--perturb-truth"], p);
    let (h, rows) = read_csv(&p.join("clean/results.csv"));
    assert_eq!(rows.len(), 10);
    let acc = h.iter().position(|c| c == "accuracy").unwrap();
    assert_eq!(rows.last().unwrap()[acc].parse::<f64>().unwrap(), 100.0);
    assert!(rows.iter().all(|r| !r[h.iter().position(|c| c == "solve_time_ms").unwrap()].is_empty()));
}

#[test]
fn estimate_without_truth_has_no_metric_columns() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    ok(&["simulate", "--frames", "2", "--out", "r"], p);
    fs::remove_file(p.join("r/truth.csv")).unwrap();
    ok(&["estimate", "--run", "r", "--prior", "-10,5,20,0.3,1000,5,4"], p);
    let (h, rows) = read_csv(&p.join("r/results.csv"));
    assert_eq!(rows.len(), 2);
    assert!(!h.iter().any(|c| c == "accuracy"));
    assert_eq!(h.len(), 1 + 7 + 3);
}

#[test]
fn corridor_filter_shrinks_cluttered_frames() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    ok(&["simulate", "--mode", "partial", "--clutter", "--frames", "3", "--out", "s"], p);
    ok(&["estimate", "--run", "s", "--perturb-truth", "--out", "raw.csv"], p);
    ok(&["estimate", "--run", "s", "--perturb-truth", "--filter", "corridor", "--out", "filtered.csv"], p);
    let (h, raw) = read_csv(&p.join("raw.csv"));
    let (_, filtered) = read_csv(&p.join("filtered.csv"));
    let n = h.iter().position(|c| c == "n_pts").unwrap();
    for (r, f) in raw.iter().zip(&filtered) {
        assert!(f[n].parse::<usize>().unwrap() < r[n].parse::<usize>().unwrap());
    }
}

#[test]
fn benchmark_header_is_exact() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&["benchmark", "--outliers", "10,50,150", "--repeats", "1", "--frames", "3"], tmp.path());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        lines[0],
        "n_o,n_pts_mean,n_pts_std,dt_ms_mean,dt_ms_std,acc_mean,acc_std,psi_e_mean,psi_e_std,a_e_mean,a_e_std"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 11));
}

fn write_frame(dir: &Path, pts: &[[f64; 3]]) {
    fs::create_dir_all(dir).unwrap();
    let mut text = String::from("x,y,z\n");
    for p in pts {
        text += &format!("{},{},{}\n", p[0], p[1], p[2]);
    }
    fs::write(dir.join("frame_00000.csv"), text).unwrap();
}

#[test]
fn filter_subcommand_methods() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    let inside: Vec<[f64; 3]> = (0..20).map(|i| [5.0 * i as f64, (i % 5) as f64 - 2.0, 25.0 + 0.1 * i as f64]).collect();
    write_frame(&p.join("in"), &inside);
    ok(&["filter", "--run", "in", "--method", "corridor", "--anchors", "0,0,30,100,0,30", "--half-width", "10", "--out", "in_f"], p);
    assert_eq!(fs::read(p.join("in/frame_00000.csv")).unwrap(), fs::read(p.join("in_f/frame_00000.csv")).unwrap());
    let (_, report) = read_csv(&p.join("in_f/filter_report.csv"));
    assert_eq!(report[0], ["0", "20", "20", "0"]);

    let mut plane_line: Vec<[f64; 3]> = (0..400).map(|i| [(i % 20) as f64, (i / 20) as f64, 0.0]).collect();
    plane_line.extend((0..30).map(|i| [i as f64, 5.0, 15.0]));
    write_frame(&p.join("pl"), &plane_line);
    ok(&["filter", "--run", "pl", "--method", "ground", "--out", "pl_f"], p);
    let (_, rows) = read_csv(&p.join("pl_f/frame_00000.csv"));
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r[2] == "15"));

    ok(&["simulate", "--mode", "partial", "--clutter", "--frames", "1", "--pts-per-line", "33", "--out", "sc"], p);
    ok(&["filter", "--run", "sc", "--method", "cluster", "--out", "sc_f"], p);
    let (_, labels) = read_csv(&p.join("sc_f/labels_00000.csv"));
    let (_, raw) = read_csv(&p.join("sc/labels_00000.csv"));
    let others = |l: &[Vec<String>]| l.iter().filter(|r| r[0] == "-1").count();
    assert!(others(&raw) >= 2500);
    assert!(others(&labels) <= 25, "{} non-conductor points kept", others(&labels));
    assert!(p.join("sc_f/truth.csv").exists());
}

#[test]
fn export_curves_counts_and_lies_on_the_model() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    ok(&["export-curves", "--config", "32", "--params", "1,-2,20,0.4,900,5,4,3", "--n", "100", "--x-min", "-30", "--x-max", "40", "--out", "c.csv"], p);
    let (h, rows) = read_csv(&p.join("c.csv"));
    assert_eq!(h, ["conductor_k", "x", "y", "z"]);
    assert_eq!(rows.len(), 500);
    let params = ParamVector::new(1.0, -2.0, 20.0, 0.4, 900.0, vec![5.0, 4.0, 3.0]);
    let config = ConductorConfig::three_two();
    for r in &rows {
        let pt = Point3::new(r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!(distance_to_model(&params, &config, &pt).unwrap().d < 1e-9);
    }
    let local_x: Vec<f64> = rows
        .iter()
        .filter(|r| r[0] == "0")
        .map(|r| {
            let (dx, dy) = (r[1].parse::<f64>().unwrap() - 1.0, r[2].parse::<f64>().unwrap() + 2.0);
            dx * 0.4f64.cos() + dy * 0.4f64.sin()
        })
        .collect();
    assert!((local_x[0] + 30.0).abs() < 1e-9 && (local_x[99] - 40.0).abs() < 1e-9);
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    fs::write(p.join("cfg.json"), r#"{"seed": 4, "simulate": {"frames": 3, "outliers": 2, "out": "from_file"}}"#).unwrap();
    ok(&["--config-file", "cfg.json", "simulate"], p);
    assert_eq!(count_frames(&p.join("from_file")), 3);
    ok(&["--config-file", "cfg.json", "simulate", "--frames", "2", "--out", "from_flag"], p);
    assert_eq!(count_frames(&p.join("from_flag")), 2);
    assert_eq!(
        fs::read(p.join("from_file/frame_00001.csv")).unwrap(),
        fs::read(p.join("from_flag/frame_00001.csv")).unwrap()
    );
    fs::write(p.join("bad.json"), r#"{"simulate": {"franes": 3}}"#).unwrap();
    assert_eq!(catenary(&["--config-file", "bad.json", "simulate"], p).status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    assert_eq!(catenary(&["--help"], p).status.code(), Some(0));
    assert_eq!(catenary(&["frobnicate"], p).status.code(), Some(1));
    assert_eq!(catenary(&["simulate", "--frames", "x"], p).status.code(), Some(1));
    assert_eq!(catenary(&["estimate"], p).status.code(), Some(1));
    assert_eq!(catenary(&["filter", "--run", "r", "--method", "sideways", "--out", "o"], p).status.code(), Some(1));
    assert_eq!(catenary(&["estimate", "--run", "missing", "--config", "222", "--prior", "0,0,0,0,1000,5,4"], p).status.code(), Some(2));
    ok(&["simulate", "--frames", "1", "--out", "r"], p);
    let mismatch = catenary(&["estimate", "--run", "r", "--config", "32", "--perturb-truth"], p);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("mismatch"));
    assert_eq!(catenary(&["simulate", "--noise=-1", "--out", "neg"], p).status.code(), Some(2));
}
