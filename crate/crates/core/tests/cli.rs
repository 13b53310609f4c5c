use std::path::Path;
use std::process::{Command, Output};

fn fiberseg(args: &[&str], extra: &[&Path]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fiberseg"));
    c.args(args);
    for p in extra {
        c.arg(p);
    }
    c.output().unwrap()
}

fn generate(dir: &Path) {
    let out = fiberseg(&["generate", "--spec", "default", "--seeds", "0..11", "--out"], &[dir]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_writes_one_directory_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let dirs = std::fs::read_dir(&data).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 12);
}

#[test]
fn run_writes_report_grids_overlays_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    generate(&data);
    let o = fiberseg(&["run", "--method", "fourier2d", "--overlays", "--data"], &[&data]);
    assert_eq!(o.status.code(), Some(2), "missing --out is a usage error");
    let mut c = Command::new(env!("CARGO_BIN_EXE_fiberseg"));
    c.args(["run", "--method", "fourier2d", "--overlays", "--data"]).arg(&data).arg("--out").arg(&out);
    let o = c.output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "fourier2d");
    assert_eq!(row[3], "16x16x1");
    let acc: f64 = row[4].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(out.join("run.json").is_file());
    assert_eq!(std::fs::read_dir(out.join("grids")).unwrap().count(), 3);
    let overlays = std::fs::read_dir(out.join("overlays")).unwrap().next().unwrap().unwrap().path();
    assert_eq!(std::fs::read_dir(overlays).unwrap().count(), 32);

    let table = tmp.path().join("table");
    let o = fiberseg(&["report", "--inputs"], &[&out, Path::new("--out"), &table]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(table.join("table.csv")).unwrap().lines().count(), 2);

    // the written split reproduces the run
    let again = tmp.path().join("again");
    let mut c = Command::new(env!("CARGO_BIN_EXE_fiberseg"));
    c.args(["run", "--method", "fourier2d", "--data"]).arg(&data).arg("--split").arg(out.join("split.csv")).arg("--out").arg(&again);
    assert!(c.output().unwrap().status.success());
    assert_eq!(
        std::fs::read(out.join("records.csv")).unwrap(),
        std::fs::read(again.join("records.csv")).unwrap()
    );
}

#[test]
fn exit_codes_distinguish_usage_config_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(fiberseg(&["bogus"], &[]).status.code(), Some(2));
    assert_eq!(fiberseg(&["run", "--nonsense"], &[]).status.code(), Some(2));
    let out = tmp.path().join("o");
    let missing = tmp.path().join("missing");
    let o = fiberseg(&["run", "--method", "fourier2d", "--out"], &[&out, Path::new("--data"), &missing]);
    assert_eq!(o.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(stderr.trim().lines().count(), 1);
    assert!(stderr.starts_with("error[data]"));

    let data = tmp.path().join("data");
    generate(&data);
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[fourier]\npatch_size = 3\n").unwrap();
    let o = fiberseg(&["run", "--method", "fourier2d", "--out"], &[&out, Path::new("--data"), &data, Path::new("--config"), &bad]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let o = fiberseg(&["run", "--method", "unet", "--out"], &[&out, Path::new("--data"), &data]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn transfer_weights_writes_a_3d_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("w3.fswa");
    let o = fiberseg(&["transfer-weights", "--block", "64x64x16", "--out"], &[&path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = fiberseg::transfer::WeightArchive::load(&path).unwrap();
    assert!(a.kernels().all(|k| k.shape.len() == 5));
    let o = fiberseg(&["transfer-weights", "--strategy", "sideways", "--out"], &[&path]);
    assert_eq!(o.status.code(), Some(2));
}
