use std::fs::File;
use std::path::Path;
use std::process::{Command, Output};

use nzp_core::matio::{read_triple_stream, write_triple_stream};
use nzp_core::sparse::example_matrix;
use nzp_core::CooMatrix;

fn nzp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nzp")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_example(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("e.nzp");
    write_triple_stream(&example_matrix::<f64>(), File::create(&path).unwrap()).unwrap();
    path
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn gen_writes_a_valid_stream() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.nzp");
    let o = nzp(&["gen", "--m", "100", "--n", "5000", "--rho", "0.05", "--iminus", "2", "--iplus", "3", "--seed", "1", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a: CooMatrix<f64> = read_triple_stream(File::open(&out).unwrap()).unwrap();
    assert_eq!((a.nrows(), a.ncols()), (100, 5000));
    assert!(a.column_counts().iter().all(|&c| (3..=8).contains(&c)));
}

#[test]
fn gen_rejects_infeasible_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad.nzp");
    let o = nzp(&["gen", "--m", "100", "--n", "5000", "--rho", "0.05", "--iminus", "9", "--out", path_str(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert!(!out.exists());
}

#[test]
fn gen_sort_desc_orders_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.nzp");
    let o = nzp(&["gen", "--m", "64", "--n", "2000", "--rho", "0.1", "--iminus", "3", "--iplus", "6", "--dense-cols", "3", "--sort-desc", "--out", path_str(&out)]);
    assert!(o.status.success());
    let a: CooMatrix<f64> = read_triple_stream(File::open(&out).unwrap()).unwrap();
    let counts = a.column_counts();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(&counts[..3], &[58, 58, 58]);
}

#[test]
fn report_on_example() {
    let dir = tempfile::tempdir().unwrap();
    let e = write_example(dir.path());
    let csv_path = dir.path().join("r.csv");
    let o = nzp(&["report", "--in", path_str(&e), "--P", "1,7", "--csv", path_str(&csv_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&std::fs::read_to_string(&csv_path).unwrap());
    assert_eq!(rows[0], ["1", "0.000000", "0", "0.000000"]);
    assert_eq!((rows[1][0].as_str(), rows[1][2].as_str(), rows[1][3].as_str()), ("7", "3", "0.000000"));

    let o = nzp(&["report", "--in", path_str(&e), "--P", "22"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds the 21 nonzeros"));
}

#[test]
fn run_counts_zone_reductions() {
    let dir = tempfile::tempdir().unwrap();
    let e = write_example(dir.path());
    let o = nzp(&["run", "--mode", "nzp", "--P", "7", "--wraps", "10", "--in", path_str(&e), "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with(&nzp_bench::RUN_HEADER.join(",")));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][6], "30");
    assert_eq!(rows[0][5], "10");
}

#[test]
fn single_rank_modes_verify() {
    let dir = tempfile::tempdir().unwrap();
    let e = write_example(dir.path());
    for mode in ["nzp", "colp"] {
        let o = nzp(&["run", "--mode", mode, "--P", "1", "--wraps", "3", "--in", path_str(&e), "--verify"]);
        assert!(o.status.success(), "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("verify: ok"));
    }
}

#[test]
fn run_rejects_too_many_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let e = write_example(dir.path());
    let o = nzp(&["run", "--mode", "nzp", "--P", "22", "--wraps", "1", "--in", path_str(&e)]);
    assert!(!o.status.success());
}

#[test]
fn run_accepts_matrix_market() {
    let dir = tempfile::tempdir().unwrap();
    let mtx = dir.path().join("a.mtx");
    std::fs::write(
        &mtx,
        "%%MatrixMarket matrix coordinate real general\n3 6 7\n1 1 1.5\n2 2 -1\n3 3 2\n1 4 1\n2 5 1\n3 6 1\n3 1 0.25\n",
    )
    .unwrap();
    let o = nzp(&["run", "--mode", "nzp", "--P", "3", "--wraps", "4", "--in", path_str(&mtx), "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
