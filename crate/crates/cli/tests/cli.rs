use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ratnmf::data::read_csv;
use ratnmf::metrics::SIR_CAP_DB;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn ratnmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratnmf"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("spawn ratnmf")
}

fn ok(args: &[&str]) {
    let out = ratnmf(args);
    assert!(
        out.status.success(),
        "ratnmf {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> i32 {
    ratnmf(args).status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Column-major values of a CSV, without the header.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let t = read_csv(path).unwrap();
    let header = t.header.unwrap_or_default();
    let cols = (0..t.data.ncols()).map(|j| t.data.column(j).iter().copied().collect()).collect();
    (header, cols)
}

/// Noiseless synthetic data set in `<tmp>/synth`.
fn synth(tmp: &TempDir, n: usize, r: usize) -> PathBuf {
    let dir = tmp.path().join("synth");
    let (n, r) = (n.to_string(), r.to_string());
    ok(&["synth", "--n", &n, "--m", "60", "--r", &r, "--d1", "4", "--d2", "4", "--seed", "2", "--out", s(&dir)]);
    dir
}

fn write_signal(path: &Path, f: impl Fn(f64) -> f64) {
    let mut text = String::from("tau,y1\n");
    for i in 0..40 {
        let t = -1.0 + 2.0 * i as f64 / 39.0;
        text.push_str(&format!("{t:?},{:?}\n", f(t)));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn synth_noiseless_data_is_the_product_of_the_factors() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 7, 3);
    let (yh, y) = table(&dir.join("Y.csv"));
    let (ah, a) = table(&dir.join("A_true.csv"));
    let (_, x) = table(&dir.join("X_true.csv"));
    assert_eq!(yh[0], "tau");
    assert_eq!(ah[0], "tau");
    assert_eq!((y.len(), y[0].len()), (8, 60));
    assert_eq!((a.len(), x.len(), x[0].len()), (4, 3, 7));
    for i in 0..60 {
        for j in 0..7 {
            let p: f64 = (0..3).map(|k| a[k + 1][i] * x[k][j]).sum();
            assert!((y[j + 1][i] - p).abs() <= 1e-12 * (1.0 + p.abs()));
        }
    }
    for j in 0..7 {
        let total: f64 = (0..3).map(|k| x[k][j]).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    let meta = json(&dir.join("A_true.json"));
    assert_eq!(meta["models"].as_array().unwrap().len(), 3);
}

#[test]
fn manifest_hashes_inputs_and_lists_outputs() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 4, 2);
    let out = tmp.path().join("proj");
    let input = dir.join("A_true.csv");
    ok(&["project", "--input", s(&input), "--method", "ls", "--out", s(&out)]);
    let m = json(&out.join("manifest.json"));
    let digest: String = Sha256::digest(fs::read(&input).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    assert_eq!(m["inputs"][s(&input)], Value::String(digest));
    assert_eq!(m["status"], "complete");
    assert_eq!(m["subcommand"], "project");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn rkfit_recovers_exact_rational_columns() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 4, 3);
    let out = tmp.path().join("proj");
    ok(&["project", "--input", s(&dir.join("A_true.csv")), "--method", "rkfit+", "--d1", "4", "--d2", "4", "--out", s(&out)]);
    let report = json(&out.join("report.json"));
    let cols = report["columns"].as_array().unwrap();
    assert_eq!(cols.len(), 3);
    for c in cols {
        assert!(c["rel_err"].as_f64().unwrap() <= 1e-8, "{c}");
    }
}

#[test]
fn constant_signal_is_fitted_by_every_method() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("const.csv");
    write_signal(&input, |_| 2.5);
    for method in ["ls", "als", "conic", "rkfit+", "linproj"] {
        let out = tmp.path().join(method.replace('+', "p"));
        ok(&["project", "--input", s(&input), "--method", method, "--d1", "2", "--d2", "2", "--out", s(&out)]);
        let err = json(&out.join("report.json"))["columns"][0]["rel_err"].as_f64().unwrap();
        assert!(err <= 1e-10, "{method}: {err}");
    }
}

#[test]
fn single_column_projection() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 4, 3);
    let out = tmp.path().join("proj");
    ok(&["project", "--input", s(&dir.join("Y.csv")), "--column", "2", "--out", s(&out)]);
    let (header, cols) = table(&out.join("fitted.csv"));
    assert_eq!(header.len(), 2);
    assert_eq!(cols.len(), 2);
    assert_eq!(code(&["project", "--input", s(&dir.join("Y.csv")), "--column", "9", "--out", s(&out)]), 2);
}

#[test]
fn usage_and_io_errors_have_distinct_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("c.csv");
    write_signal(&input, |t| 1.0 + t * t);
    let out = tmp.path().join("o");
    assert_eq!(code(&["project", "--input", s(&input), "--method", "newton", "--out", s(&out)]), 2);
    assert_eq!(code(&["project", "--input", s(&input), "--d1", "3", "--out", s(&out)]), 2);
    assert_eq!(code(&["project", "--out", s(&out)]), 2);
    assert_eq!(code(&["project", "--input", s(&tmp.path().join("missing.csv")), "--out", s(&out)]), 3);
    assert_eq!(code(&["factor", "--input", s(&input), "--threads", "0", "--out", s(&out)]), 2);
    fs::write(tmp.path().join("bad.csv"), "tau,y1\n0.5,1\n0.1,2\n").unwrap();
    assert_eq!(code(&["project", "--input", s(&tmp.path().join("bad.csv")), "--out", s(&out)]), 2);
}

#[test]
fn rank_one_exact_data_is_factored() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 5, 1);
    let out = tmp.path().join("fac");
    ok(&["factor", "--input", s(&dir.join("Y.csv")), "--algorithm", "ranls", "--rank", "1", "--max-outer", "300", "--out", s(&out)]);
    let report = json(&out.join("report.json"));
    let res = report["residue_trace"].as_array().unwrap().last().unwrap().as_f64().unwrap();
    assert!(res < 1e-6, "residue {res}");
    assert!(out.join("models.json").exists());
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,residue,sc,seconds\n"));
    assert_eq!(trace.lines().count(), report["residue_trace"].as_array().unwrap().len() + 1);
}

#[test]
fn hals_needs_no_degrees_and_writes_no_models() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 6, 2);
    let out = tmp.path().join("fac");
    ok(&["factor", "--input", s(&dir.join("Y.csv")), "--algorithm", "hals", "--rank", "2", "--out", s(&out)]);
    let (ah, a) = table(&out.join("A.csv"));
    let (_, x) = table(&out.join("X.csv"));
    assert_eq!(ah[0], "tau");
    assert_eq!((a.len(), a[0].len(), x.len(), x[0].len()), (3, 60, 2, 6));
    assert!(a[1..].iter().chain(&x).flatten().all(|&v| v >= 0.0));
    assert!(!out.join("models.json").exists());
}

#[test]
fn exhausted_time_budget_marks_the_run_partial() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 6, 2);
    let out = tmp.path().join("fac");
    ok(&["factor", "--input", s(&dir.join("Y.csv")), "--rank", "2", "--time-budget", "1e-9", "--out", s(&out)]);
    assert_eq!(json(&out.join("report.json"))["status"], "time_budget");
    assert_eq!(json(&out.join("manifest.json"))["status"], "partial");
}

#[test]
fn combined_run_reports_the_switch() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 6, 2);
    let out = tmp.path().join("fac");
    ok(&[
        "factor", "--input", s(&dir.join("Y.csv")), "--rank", "2", "--algorithm", "ranls",
        "--combine", "rhanls", "--switch-residue", "1e300", "--max-outer", "5", "--out", s(&out),
    ]);
    let report = json(&out.join("report.json"));
    assert_eq!(report["algorithm"], "ranls+rhanls");
    assert_eq!(report["switch_at"], 0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 6, 2);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"algorithm": "hals", "rank": 1, "max-outer": 50}"#).unwrap();
    let out = tmp.path().join("fac");
    ok(&["factor", "--config", s(&cfg), "--input", s(&dir.join("Y.csv")), "--rank", "2", "--out", s(&out)]);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["rank"], 2);
    assert_eq!(m["config"]["algorithm"], "hals");
    assert_eq!(m["config"]["max-outer"], 50);
    assert_eq!(table(&out.join("X.csv")).1.len(), 2);

    fs::write(&cfg, r#"{"rnak": 2}"#).unwrap();
    assert_eq!(code(&["factor", "--config", s(&cfg), "--input", s(&dir.join("Y.csv")), "--out", s(&out)]), 2);
    fs::write(&cfg, r#"{"rank": "two"}"#).unwrap();
    assert_eq!(code(&["factor", "--config", s(&cfg), "--input", s(&dir.join("Y.csv")), "--out", s(&out)]), 2);
}

#[test]
fn manifest_of_another_subcommand_is_rejected_as_config() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 4, 2);
    let out = tmp.path().join("fac");
    assert_eq!(code(&["factor", "--config", s(&dir.join("manifest.json")), "--out", s(&out)]), 2);
}

#[test]
fn eval_of_the_truth_is_perfect_and_detects_permutations() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 6, 3);
    let (a, x) = (dir.join("A_true.csv"), dir.join("X_true.csv"));
    let out = tmp.path().join("eval");
    ok(&["eval", "--a-true", s(&a), "--x-true", s(&x), "--a-est", s(&a), "--x-est", s(&x), "--out", s(&out)]);
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["rel_residue"].as_f64().unwrap(), 0.0);
    assert_eq!(m["mean_sir_db"].as_f64().unwrap(), SIR_CAP_DB);
    assert_eq!(m["permutation"], serde_json::json!([0, 1, 2]));

    // swap columns 1 and 3 of both factors
    let swap = |src: &Path, dst: &Path, offset: usize| {
        let text = fs::read_to_string(src).unwrap();
        let lines: Vec<String> = text
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.swap(offset, offset + 2);
                f.join(",")
            })
            .collect();
        fs::write(dst, lines.join("\n") + "\n").unwrap();
    };
    let (pa, px) = (tmp.path().join("A.csv"), tmp.path().join("X.csv"));
    swap(&a, &pa, 1);
    swap(&x, &px, 0);
    ok(&["eval", "--a-true", s(&a), "--x-true", s(&x), "--a-est", s(&pa), "--x-est", s(&px), "--out", s(&out)]);
    let m = json(&out.join("metrics.json"));
    assert!(m["rel_residue"].as_f64().unwrap() < 1e-15);
    assert_eq!(m["permutation"], serde_json::json!([2, 1, 0]));
}

#[test]
fn eval_reads_convergence_from_a_report() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 6, 2);
    let fac = tmp.path().join("fac");
    ok(&["factor", "--input", s(&dir.join("Y.csv")), "--algorithm", "hals", "--rank", "2", "--out", s(&fac)]);
    let out = tmp.path().join("eval");
    ok(&[
        "eval", "--a-true", s(&dir.join("A_true.csv")), "--x-true", s(&dir.join("X_true.csv")),
        "--a-est", s(&fac.join("A.csv")), "--x-est", s(&fac.join("X.csv")),
        "--report", s(&fac.join("report.json")), "--out", s(&out),
    ]);
    let m = json(&out.join("metrics.json"));
    let report = json(&fac.join("report.json"));
    assert_eq!(m["converged_at"], report["converged_at"]);
}

#[test]
fn eval_rejects_mismatched_shapes() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 6, 2);
    let other = tmp.path().join("other");
    ok(&["synth", "--n", "6", "--m", "60", "--r", "3", "--out", s(&other)]);
    let out = tmp.path().join("eval");
    let c = code(&[
        "eval", "--a-true", s(&dir.join("A_true.csv")), "--x-true", s(&dir.join("X_true.csv")),
        "--a-est", s(&dir.join("A_true.csv")), "--x-est", s(&other.join("X_true.csv")), "--out", s(&out),
    ]);
    assert_eq!(c, 2);
    assert_eq!(json(&out.join("manifest.json"))["status"], "failed");
}

#[test]
fn bench_writes_one_row_per_method_and_trial() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench");
    ok(&["bench", "projection", "--methods", "ls,rkfit+", "--degrees", "4", "--points", "50", "--trials", "3", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("bench.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kind,method,n,m,r,d1,d2,snr_db,seed,seconds,iters,rel_err,mean_sir_db,status");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));

    let out = tmp.path().join("fact");
    ok(&[
        "bench", "factorization", "--algorithms", "hals", "--n", "8", "--points", "40", "--ranks", "2",
        "--snr", "inf,20", "--trials", "2", "--out", s(&out),
    ]);
    let text = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn empty_bench_sweep_writes_only_the_header() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench");
    ok(&["bench", "projection", "--trials", "0", "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("bench.csv")).unwrap().lines().count(), 1);
}

#[test]
fn same_seed_gives_identical_factors() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, 8, 2);
    let run = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "factor", "--input", s(&dir.join("Y.csv")), "--rank", "2", "--max-outer", "10",
            "--seed", "4", "--threads", threads, "--out", s(&out),
        ]);
        (fs::read(out.join("A.csv")).unwrap(), fs::read(out.join("X.csv")).unwrap())
    };
    let first = run("a", "1");
    assert_eq!(first, run("b", "1"));
    assert_eq!(first, run("c", "3"));
}
