use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deqntk"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DEQNTK_DATA_DIR")
        .output()
        .unwrap()
}

#[test]
fn kernel_prints_value_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel", "--dot", "0", "--sw2", "0.5", "--su2", "0.5", "--sb2", "0", "--sv2", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!((v - 0.6075).abs() < 1e-4, "{v}");
    let csv = std::fs::read_to_string(dir.path().join("kernel.csv")).unwrap();
    assert!(csv.starts_with("dot,depth,theta\n"));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("# git_revision = ") && manifest.contains("sigma_w_sq = 5e-1"));
}

#[test]
fn manifest_reruns_to_identical_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let o = run(&["trace", "--n", "200", "--sw2", "0.25", "--su2", "0.75", "--trials", "3", "--seed", "9"], a.path());
    assert!(o.status.success());
    let manifest = a.path().join("manifest.txt");
    let o = run(&["trace", "--config", manifest.to_str().unwrap()], b.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |d: &Path| std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel", "--dot", "0", "--sw2", "1.0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma_w_sq < 1"));
    let o = run(&["regress", "--set", "data_dir=/nonexistent"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["regress"], dir.path());
    assert_eq!(o.status.code(), Some(2), "missing data directory is a configuration error");
    // Two forward iterations cannot reach the tolerance.
    let o = run(&["residual", "--widths", "64", "--trials", "1", "--set", "max_iter=2"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn spectrum_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spectrum", "--sw2", "0.25", "--su2", "0.75", "--n", "300"], dir.path());
    assert!(o.status.success());
    let lim = std::fs::read_to_string(dir.path().join("spectrum_limit.csv")).unwrap();
    let mut lines = lim.lines();
    assert!(lines.next().unwrap().starts_with("# sigma_w_sq="));
    assert_eq!(lines.next(), Some("lambda,density"));
    assert!(dir.path().join("spectrum_empirical.csv").exists());
}
