use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bmcumulant::format::read_model;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bmcumulant"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn field(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("{key} missing from {stdout}"))
        .parse()
        .unwrap()
}

fn generated(dir: &Path, nodes: &str, seed: &str) -> PathBuf {
    let path = dir.join(format!("m{nodes}_{seed}.bmtx"));
    ok(dir, &["gen", "--nodes", nodes, "--seed", seed, "-o", path.to_str().unwrap()]);
    path
}

#[test]
fn exact_without_couplings_is_a_softplus_sum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z.bmtx");
    std::fs::write(&path, "bm 3\nb 0 0.5\nb 1 -1.0\nb 2 2.0\nc 0.25\n").unwrap();
    let out = ok(dir.path(), &["exact", "z.bmtx"]);
    let expected: f64 = 0.25 + [0.5f64, -1.0, 2.0].iter().map(|b| b.exp().ln_1p()).sum::<f64>();
    assert!((field(&out, "log_z") - expected).abs() < 1e-10);
    assert!((field(&out, "mean 0") - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-10);
}

#[test]
fn gen_is_seeded_and_respects_topology() {
    let dir = tempfile::tempdir().unwrap();
    let a = generated(dir.path(), "6", "4");
    let b = dir.path().join("again.bmtx");
    ok(dir.path(), &["gen", "--nodes", "6", "--seed", "4", "-o", b.to_str().unwrap()]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    ok(dir.path(), &["gen", "--nodes", "6", "--topology", "chain", "--seed", "1", "-o", "c.bmtx"]);
    let chain = read_model(dir.path().join("c.bmtx")).unwrap();
    assert_eq!(chain.declared_edges, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
}

#[test]
fn mean_field_orders_bound_and_correct() {
    let dir = tempfile::tempdir().unwrap();
    let m = generated(dir.path(), "6", "9");
    let m = m.to_str().unwrap();
    let exact = field(&ok(dir.path(), &["exact", m]), "log_z");
    let first = ok(dir.path(), &["mf", m, "--order", "1"]);
    let second = ok(dir.path(), &["mf", m, "--order", "2"]);
    assert!(field(&first, "first_order") <= exact + 1e-9);
    let total = field(&second, "total");
    assert!((total - field(&second, "first_order") - field(&second, "correction")).abs() < 1e-9);
    assert!(field(&second, "correction") >= 0.0);

    let chain = ok(dir.path(), &["mf", m, "--approx", "decimatable", "--order", "2"]);
    assert!(field(&chain, "first_order") <= exact + 1e-9);
    assert!(field(&chain, "first_order") >= field(&first, "first_order") - 1e-9);
}

#[test]
fn moments_csv_has_upper_triangle_rows() {
    let dir = tempfile::tempdir().unwrap();
    let m = generated(dir.path(), "4", "2");
    ok(dir.path(), &["moments", m.to_str().unwrap(), "--method", "ratio2", "-o", "mo.csv"]);
    let text = std::fs::read_to_string(dir.path().join("mo.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "i,j,exact,variational,ratio1,ratio2,flags");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 7);
        assert!(cols[3].is_empty() && cols[4].is_empty());
        let exact: f64 = cols[2].parse().unwrap();
        let r2: f64 = cols[5].parse().unwrap();
        assert!((exact - r2).abs() < 0.2);
    }
}

#[test]
fn learn_writes_a_trace_per_update() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.pat"), "pat 4\n1 0 1 0\n0 1 1 0\n1 1 0 0\n").unwrap();
    ok(
        dir.path(),
        &["learn", "--visible", "4", "--hidden", "2", "--patterns", "p.pat", "--updates", "5", "-o", "t.csv"],
    );
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("update,exact_bound,first_bound,second_bound"));
    assert_eq!(lines.len(), 6);
}

#[test]
fn experiment_is_reproducible_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |jobs: &'static str, out: &'static str| {
        vec!["experiment", "--trials", "12", "--nodes", "5", "--seed", "3", "--jobs", jobs, "-o", out]
    };
    let s1 = ok(dir.path(), &args("1", "a.csv"));
    let s2 = ok(dir.path(), &args("3", "b.csv"));
    assert_eq!(s1, s2);
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.starts_with("trial,seed,log_z_exact,log_z_first,log_z_second"));
}

#[test]
fn exit_codes_separate_usage_input_and_convergence() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["mf", "missing.bmtx"]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));

    std::fs::write(dir.path().join("bad.bmtx"), "bm 2\nw 0 5 1.0\n").unwrap();
    let out = run(dir.path(), &["exact", "bad.bmtx"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.bmtx"));

    ok(dir.path(), &["gen", "--nodes", "30", "--sigma", "0.1", "-o", "big.bmtx"]);
    assert_eq!(run(dir.path(), &["exact", "big.bmtx"]).status.code(), Some(2));

    let full = generated(dir.path(), "5", "1");
    let out = run(dir.path(), &["mf", full.to_str().unwrap(), "--max-iter", "1", "--strict"]);
    assert_eq!(out.status.code(), Some(4));
}
