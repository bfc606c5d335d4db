use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pairdiff"));
    c.current_dir(env!("CARGO_MANIFEST_DIR"));
    c.env_remove("PAIRDIFF_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_at(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn tmp(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

/// Weighted pairwise least squares by a plain double loop and Gaussian
/// elimination, independent of the library's accumulation.
fn brute_force_plr(rows: &[Vec<f64>], h: f64) -> (Vec<f64>, f64) {
    let k = rows[0].len() - 2;
    let n = rows.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let dw = rows[i][k + 1] - rows[j][k + 1];
            let wgt = (-0.5 * (dw / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
            let dx: Vec<f64> = (0..k).map(|c| rows[i][c + 1] - rows[j][c + 1]).collect();
            let dy = rows[i][0] - rows[j][0];
            for r in 0..k {
                for c in 0..k {
                    a[r][c] += wgt * dx[r] * dx[c];
                }
                a[r][k] += wgt * dx[r] * dy;
            }
            pairs.push((wgt, dx, dy));
        }
    }
    for p in 0..k {
        let piv = (p..k).max_by(|&x, &y| a[x][p].abs().total_cmp(&a[y][p].abs())).unwrap();
        a.swap(p, piv);
        for r in p + 1..k {
            let f = a[r][p] / a[p][p];
            for c in p..=k {
                a[r][c] -= f * a[p][c];
            }
        }
    }
    let mut theta = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r][c] * theta[c]).sum();
        theta[r] = (a[r][k] - s) / a[r][r];
    }
    let obj: f64 = pairs.iter().map(|(w, dx, dy)| w * 0.5 * (dy - dx.iter().zip(&theta).map(|(x, t)| x * t).sum::<f64>()).powi(2)).sum::<f64>() / pairs.len() as f64;
    (theta, obj)
}

#[test]
fn demo_estimate_reproduces_golden_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "est.json");
    let o = run(&["estimate", "--data", "data/demo_plr.csv", "--h", "0.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/estimate_demo_plr.json");
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&golden).unwrap());

    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo_plr.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let (theta, obj) = brute_force_plr(&rows, 0.5);
    let doc = json_at(&golden);
    let got: Vec<f64> = doc["result"]["theta"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (g, t) in got.iter().zip(&theta) {
        assert!((g - t).abs() <= 1e-10 * t.abs().max(1.0), "{g} vs {t}");
    }
    let gobj = doc["result"]["levels"][0]["objective"].as_f64().unwrap();
    assert!((gobj - obj).abs() <= 1e-10 * obj, "{gobj} vs {obj}");
}

#[test]
fn missing_data_file_is_an_io_error_naming_the_path() {
    let o = run(&["estimate", "--data", "data/absent.csv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data/absent.csv"));
}

#[test]
fn malformed_rows_report_their_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = tmp(&dir, "bad.csv");
    std::fs::write(&path, "y,x1,w1\n1,2,3\n4,oops,6\n7,8,9\n").unwrap();
    let o = run(&["estimate", "--data", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 2") && err.contains("oops"), "{err}");
}

#[test]
fn config_errors_have_their_own_exit_code() {
    assert_eq!(run(&["estimate", "--set", "dgp.n=50", "--h", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["estimate", "--set", "dgp.n=50", "--h-rule", "1,1.5"]).status.code(), Some(2));
    assert_eq!(run(&["estimate"]).status.code(), Some(2));
    assert_eq!(run(&["estimate", "--data", "data/demo_plr.csv", "--set", "dgp.n=5"]).status.code(), Some(2));
    let o = bin().args(["kernel-check"]).env("PAIRDIFF_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn h_rule_is_recorded() {
    let o = run(&["estimate", "--set", "dgp.n=625", "--h-rule", "1.0,0.2"]);
    assert!(o.status.success());
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    let h = doc["result"]["h"].as_f64().unwrap();
    assert!((h - 0.2759).abs() < 5e-5, "{h}");
    assert_eq!(doc["config"]["bandwidth"]["exponent"].as_f64(), Some(0.2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tmp(&dir, "run.cfg");
    std::fs::write(&cfg, "# demo\ndata.path = data/demo_plr.csv\nh = 0.9\nseed = 4\n").unwrap();
    let o = run(&["estimate", "--config", cfg.to_str().unwrap(), "--h", "0.5"]);
    assert!(o.status.success());
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["result"]["h"].as_f64(), Some(0.5));
    assert_eq!(doc["config"]["seed"].as_u64(), Some(4));
}

#[test]
fn bootstrap_ci_brackets_the_estimate() {
    let o = run(&["bootstrap-ci", "--data", "data/demo_plr.csv", "--h", "0.5", "--B", "99", "--contrast", "0,1", "--seed", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    let r = &doc["result"];
    let (lo, hi) = (r["interval"]["lower"].as_f64().unwrap(), r["interval"]["upper"].as_f64().unwrap());
    let point = r["theta"][1].as_f64().unwrap();
    assert!(lo < point && point < hi, "{lo} {point} {hi}");
    assert_eq!(r["bootstrap"]["successful"].as_u64(), Some(99));
    assert_eq!(r["bootstrap"]["bandwidths"][0].as_f64(), Some(1.5));
    assert!(r["bootstrap"].get("draws").is_none());

    let v = run(&["bootstrap-ci", "--data", "data/demo_plr.csv", "--h", "0.5", "--B", "5", "--verbose"]);
    let doc: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(doc["result"]["bootstrap"]["draws"].as_array().unwrap().len(), 5);
    assert!(doc["result"]["levels"][0].get("gradient_norm").is_some());
}

#[test]
fn coverage_se_matches_binomial_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "cov.json");
    let o = run(&["validate", "coverage", "--set", "dgp.n=60", "--reps", "25", "--B", "19", "--h", "0.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json_at(&out);
    let rep = &doc["result"][0];
    let p = rep["coverage"].as_f64().unwrap();
    let reps = rep["reps"].as_u64().unwrap() as f64;
    assert_eq!(p, rep["covered"].as_f64().unwrap() / reps);
    assert_eq!(rep["se"].as_f64().unwrap(), (p * (1.0 - p) / reps).sqrt());
    assert!(["pass", "fail", "inconclusive"].contains(&doc["verdict"].as_str().unwrap()));
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert!(csv.starts_with("model,order,nominal,coverage,se"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn kernel_check_passes_for_fourth_order_epanechnikov() {
    let o = run(&["kernel-check", "--kernel", "epanechnikov", "--L", "2", "--set", "kernel.d=2"]);
    assert!(o.status.success());
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["verdict"], "pass");
    assert_eq!(doc["result"]["kernel_order"].as_u64(), Some(4));
}

#[test]
fn thread_count_does_not_change_bytes() {
    let go = |threads: &str| {
        bin().args(["bootstrap-ci", "--data", "data/demo_plr.csv", "--h", "0.4", "--L", "2", "--B", "40", "--seed", "11"]).env("PAIRDIFF_THREADS", threads).output().unwrap().stdout
    };
    let one = go("1");
    assert!(!one.is_empty());
    assert_eq!(one, go("4"));
}
