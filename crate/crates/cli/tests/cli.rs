use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hho_cli::{write_csv, CSV_HEADER};
use hho_core::verification::{ConvergenceRecord, LevelRecord};

fn hho(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hho"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("HHO_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn kovasznay_study_writes_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = hho(dir.path(), &["--case", "kovasznay", "--k", "1", "--grids", "4..32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_rows(&dir.path().join("convergence.csv"));
    assert_eq!(header, CSV_HEADER);
    assert_eq!(rows.len(), 4);
    for i in [3, 5, 7] {
        assert_eq!(rows[0][i], "--");
    }
    let ndof: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(ndof.windows(2).all(|w| w[1] > w[0]));
    // energy error approaching order k + 1 = 2; about 1.8 on the 16 to 32 pair
    let last: f64 = rows[3][3].parse().unwrap();
    assert!(last > 1.7, "{last}");
    for r in &rows {
        let e: f64 = r[2].parse().unwrap();
        assert!(e > 0.0 && e.is_finite());
    }
}

#[test]
fn single_level_has_no_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = hho(dir.path(), &["--case", "stokes-poly", "--k", "1", "--grids", "4"]);
    assert!(out.status.success());
    let (_, rows) = read_rows(&dir.path().join("convergence.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!([&rows[0][3], &rows[0][5], &rows[0][7]], ["--", "--", "--"]);
    // the polynomial solution is reproduced exactly
    let e: f64 = rows[0][2].parse().unwrap();
    assert!(e < 1e-9, "{e}");
}

#[test]
fn empty_record_is_header_only() {
    let mut buf = Vec::new();
    write_csv(&ConvergenceRecord::default(), &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
}

#[test]
fn csv_round_trip_keeps_three_digits() {
    let mut record = ConvergenceRecord::default();
    for (i, h) in [0.25, 0.125, 0.0625].into_iter().enumerate() {
        record.levels.push(LevelRecord {
            h,
            n_dof: 100 << (2 * i),
            nnz: 1000 << (2 * i),
            energy: 0.3 * h * h,
            l2_velocity: 0.07 * h.powi(3),
            l2_pressure: 0.011 * h * h,
            assembly_seconds: 0.01,
            solve_seconds: 0.02,
        });
    }
    let mut buf = Vec::new();
    write_csv(&record, &mut buf).unwrap();
    let mut r = csv::Reader::from_reader(buf.as_slice());
    let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for (row, level) in rows.iter().zip(&record.levels) {
        assert_eq!(row[0].parse::<usize>().unwrap(), level.n_dof);
        assert_eq!(row[1].parse::<usize>().unwrap(), level.nnz);
        for (col, exact) in [(2, level.energy), (4, level.l2_velocity), (6, level.l2_pressure)] {
            let v: f64 = row[col].parse().unwrap();
            assert!((v - exact).abs() <= 5e-3 * exact, "{v} vs {exact}");
        }
    }
    assert_eq!(&rows[2][3], "2.00");
    assert_eq!(&rows[2][5], "3.00");
}

#[test]
fn audits_pass_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = hho(dir.path(), &["--case", "audits", "--k", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let (header, rows) = read_rows(&dir.path().join("audits.csv"));
    assert_eq!(header, ["identity", "mesh", "k", "violation", "passed"]);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[4] == "true"));
    let ks: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert!(ks.contains(&"0") && ks.contains(&"1"));
}

#[test]
fn mesh_files_replace_the_grid_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("square.mesh");
    fs::write(&mesh, "POLYMESH 2\n5\n0 0\n1 0\n1 1\n0 1\n0.5 0.5\n4\n3 0 1 4\n3 1 2 4\n3 2 3 4\n3 3 0 4\n").unwrap();
    let out = hho(dir.path(), &["--case", "stokes-poly", "--k", "2", "--mesh", mesh.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_rows(&dir.path().join("convergence.csv"));
    assert_eq!(rows.len(), 1);
}

#[test]
fn invalid_mesh_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("clockwise.mesh");
    fs::write(&mesh, "POLYMESH 2\n4\n0 0\n1 0\n1 1\n0 1\n1\n4 0 3 2 1\n").unwrap();
    let out = hho(dir.path(), &["--case", "stokes-poly", "--mesh", mesh.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("counterclockwise"));
}

#[test]
fn lid_driven_cavity_has_a_recirculation() {
    let dir = tempfile::tempdir().unwrap();
    let out = hho(dir.path(), &["--case", "cavity2d", "--k", "1", "--grids", "16", "--re", "100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_rows(&dir.path().join("cavity_16x16_u1_vertical.csv"));
    assert_eq!(header, ["y", "u1"]);
    assert_eq!(rows.len(), 129);
    let u1: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((u1[128] - 1.0).abs() < 1e-12);
    assert!(u1[0].abs() < 1e-12);
    // reference minimum near -0.21 at y ~ 0.45 for Re = 100
    let min = u1.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((-0.25..-0.17).contains(&min), "{min}");
    let (_, rows) = read_rows(&dir.path().join("cavity_16x16_u2_horizontal.csv"));
    let u2: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(u2.iter().any(|&v| v > 0.1) && u2.iter().any(|&v| v < -0.1));
}

#[test]
fn cavity_at_reynolds_1000_matches_the_benchmark_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = hho(dir.path(), &["--case", "cavity2d", "--k", "2", "--grids", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Re=100 ") && stdout.contains("Re=400 ") && stdout.contains("Re=1000"), "{stdout}");
    let (_, rows) = read_rows(&dir.path().join("cavity_32x32_u1_vertical.csv"));
    let (y, min) = rows
        .iter()
        .map(|r| (r[0].parse::<f64>().unwrap(), r[1].parse::<f64>().unwrap()))
        .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    // benchmark minimum -0.383 at y = 0.172
    assert!((min + 0.383).abs() < 0.02, "{min}");
    assert!((y - 0.172).abs() < 0.03, "{y}");
}

#[test]
fn invalid_configuration_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = hho(dir.path(), &["--case", "kovasznay", "--re", "100", "--nu", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("disagree"));
    let out = hho(dir.path(), &["--case", "kovasznay", "--grids", "8,4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_solve_exits_nonzero_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = hho(dir.path(), &["--case", "kovasznay", "--k", "0", "--grids", "4", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("solve report for level 4x4"), "{err}");
    assert!(err.contains("solve failed"));
    assert!(!dir.path().join("convergence.csv").exists());
}
