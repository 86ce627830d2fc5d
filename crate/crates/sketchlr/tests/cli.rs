use std::path::Path;
use std::process::Command;

fn run(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_sketchlr")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> bool {
    !Command::new(env!("CARGO_BIN_EXE_sketchlr")).current_dir(dir).args(args).output().unwrap().status.success()
}

#[test]
fn generate_sketch_recover_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["generate", "--n", "800", "--k", "15", "--r", "2", "--seed", "4", "--out", "gt.txt", "--entries", "e.csv"]);
    run(d, &["sketch", "--entries", "e.csv", "--n", "800", "--k", "15", "--r", "2", "--out", "s.bin"]);
    let out = run(d, &["recover", "--sketch", "s.bin", "--k", "15", "--r", "2", "--out", "f.txt", "--truth", "gt.txt", "--stage-a", "a.csv"]);
    assert!(out.contains("success=true"), "{out}");
    let factors = std::fs::read_to_string(d.join("f.txt")).unwrap();
    assert!(factors.starts_with("symmetric 2 800 15"));
    assert!(std::fs::read_to_string(d.join("a.csv")).unwrap().starts_with("index,value"));
}

#[test]
fn generate_sketch_recover_nonsymmetric_with_explicit_budget() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--shape", "nonsymmetric", "--n", "300", "--n2", "200"];
    let mut g = vec!["generate", "--k", "10", "--beta", "0.5", "--seed", "1", "--out", "gt.txt", "--entries", "e.csv"];
    g.extend(common);
    run(d, &g);
    let mut s = vec!["sketch", "--entries", "e.csv", "--m", "400", "--out", "s.bin"];
    s.extend(common);
    run(d, &s);
    let out = run(d, &["recover", "--sketch", "s.bin", "--k", "10", "--beta", "0.5", "--out", "f.txt", "--truth", "gt.txt"]);
    assert!(out.contains("success=true"), "{out}");
    assert!(std::fs::read_to_string(d.join("f.txt")).unwrap().starts_with("nonsymmetric 1 300 200 10 0.5"));
}

#[test]
fn noisy_sketch_recovers_approximately() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["generate", "--n", "500", "--k", "10", "--alphabet", "--seed", "2", "--out", "gt.txt", "--entries", "e.csv"]);
    run(d, &["sketch", "--entries", "e.csv", "--n", "500", "--k", "10", "--noise-sigma", "0.5", "--P", "24", "--bins", "150", "--out", "s.bin"]);
    let out = run(d, &["recover", "--sketch", "s.bin", "--k", "10", "--noise-sigma", "0.5", "--out", "f.txt", "--truth", "gt.txt"]);
    let nmse: f64 = out.split("nmse=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(nmse < 1e-2, "{out}");
    assert!(fails(d, &["recover", "--sketch", "s.bin", "--k", "10", "--out", "f.txt"]));
}

#[test]
fn experiment_writes_reproducible_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["experiment", "--n", "400", "--k", "10", "--trials", "8", "--grid", "m=50,400", "--no-timing", "--seed", "9"];
    let mut a = args.to_vec();
    a.extend(["--out", "a.csv"]);
    run(d, &a);
    let mut b = args.to_vec();
    b.extend(["--out", "b.csv", "--summary", "b_summary.csv"]);
    run(d, &b);
    let ta = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(ta, std::fs::read(d.join("b.csv")).unwrap());
    assert_eq!(String::from_utf8(ta).unwrap().lines().count(), 17);
    assert_eq!(std::fs::read(d.join("a.csv.summary.csv")).unwrap(), std::fs::read(d.join("b_summary.csv")).unwrap());
}

#[test]
fn invalid_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(fails(d, &["generate", "--n", "10", "--k", "20", "--out", "x"]));
    assert!(fails(d, &["experiment", "--n", "100", "--k", "5", "--m", "10", "--bins", "3", "--out", "x"]));
    assert!(fails(d, &["experiment", "--n", "100", "--k", "5", "--grid", "z=1", "--out", "x"]));
    assert!(fails(d, &["sketch", "--entries", "missing.csv", "--n", "10", "--m", "10", "--out", "x"]));
    assert!(fails(d, &["recover", "--sketch", "missing.bin", "--k", "2", "--out", "x"]));
}
