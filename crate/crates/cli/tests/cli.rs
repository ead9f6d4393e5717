use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use henry_mlmc_cli::config::StudyConfig;
use henry_mlmc_cli::study::Study;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_henry-mlmc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).skip(1).map(String::from).collect()
}

const TABLE: &str = "level,s,V\n0,1.156,1.4e-5\n1,4.113,0.2e-5\n2,20.382,0.5e-6\n3,139,0.1e-6\n4,993,0.5e-7\n5,8053,1e-7\n";

#[test]
fn allocate_reproduces_the_reference_rows() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("stats.csv");
    fs::write(&stats, TABLE).unwrap();
    let s = stats.to_str().unwrap();
    assert!(ok(&["allocate", "--stats-file", s, "--eps2", "5e-6"]).starts_with("m = 35,7,2,1,1,1\n"));
    assert!(ok(&["allocate", "--stats-file", s, "--eps2", "1e-6"]).starts_with("m = 172,35,8,2,1,1\n"));
    let plan = dir.path().join("plan.csv");
    ok(&["allocate", "--stats-file", s, "--eps2", "1e-6", "--out", plan.to_str().unwrap()]);
    let text = fs::read_to_string(&plan).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert_eq!(data_rows(&plan)[0], "0,172,0.000014,1.156");
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "command = mc\n# comment\nn = ten\n").unwrap();
    let out = bin(&["run", "--config", conf.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn solve_and_fields_print_cell_tables() {
    let out = ok(&["fields", "--xi", "-0.5,0.5,0", "--level", "0"]);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "x,y,phi,K");
    assert_eq!(lines.len(), 2 + 512);
    let out = ok(&["solve", "--level", "0", "--snapshot-at", "0"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[1], "x,y,c,p");
    assert_eq!(lines.len(), 2 + 512);
    let c: Vec<f64> = lines[2..].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(c.iter().all(|&v| v == 0.0));
}

#[test]
fn ensemble_study_is_idempotent_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("qmc");
    let o = out.to_str().unwrap();
    ok(&["qmc", "--n", "6", "--level", "0", "--qoi", "point:1.6:-0.95,fwint", "--out", o, "--workers", "2"]);
    let level_file = out.join("cache/level_0.csv");
    let before = fs::read(&level_file).unwrap();
    ok(&["qmc", "--n", "6", "--level", "0", "--qoi", "point:1.6:-0.95,fwint", "--out", o]);
    assert_eq!(fs::read(&level_file).unwrap(), before, "rerun touched the cache");
    assert_eq!(data_rows(&level_file).len(), 6);

    ok(&["stats", "--study", o]);
    let q = data_rows(&out.join("quantiles.csv"));
    assert_eq!(q.len(), 2 * 48 * 5);
    let fields = data_rows(&out.join("fields_mean_var.csv"));
    assert_eq!(fields.len(), 512);
    let max_var = fields.iter().map(|r| r.split(',').nth(3).unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!(max_var <= 0.06, "{max_var}");

    ok(&["plot", "--study", o]);
    let svg = fs::read_to_string(out.join("quantiles_0.svg")).unwrap();
    assert_eq!(svg.matches("stroke-dasharray").count(), 5);
    assert_eq!(svg.matches("<polyline").count(), 6 + 5);
    assert!(out.join("pdf_1.svg").exists());
}

#[test]
fn reports_on_an_empty_study_fail_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = StudyConfig::parse("command = mc\nlevel = 0\nn = 4").unwrap();
    config.output = dir.path().to_path_buf();
    drop(Study::open(config).unwrap());
    let d = dir.path().to_str().unwrap();
    assert!(!bin(&["stats", "--study", d]).status.success());
    assert!(!dir.path().join("quantiles.csv").exists());
    assert!(!bin(&["plot", "--study", d]).status.success());
    assert!(fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().path().extension().is_some_and(|x| x == "svg")));
}

#[test]
fn mlmc_estimate_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut estimates = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("w{workers}"));
        let o = out.to_str().unwrap();
        ok(&["mlmc", "--eps2", "1e-2", "--max-level", "1", "--qoi", "fwint", "--out", o, "--workers", workers, "--set", "m_pilot=3"]);
        estimates.push(fs::read(out.join("estimate.csv")).unwrap());
        if workers == "1" {
            ok(&["plot", "--study", o]);
            let svg = fs::read_to_string(out.join("error_decay_0.svg")).unwrap();
            assert!(svg.contains(r#"text-anchor="middle">0</text>"#) && svg.contains(r#"text-anchor="middle">1</text>"#));
            let out = bin(&["rates", "--study", o]);
            assert!(!out.status.success(), "two levels cannot give a rate fit");
        }
    }
    assert_eq!(estimates[0], estimates[1]);
    assert_eq!(data_rows(&dir.path().join("w1/estimate.csv")).len(), 48);
}

#[test]
fn rates_are_fitted_from_level_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = StudyConfig::parse("command = mlmc\nmax_level = 3").unwrap();
    config.output = dir.path().to_path_buf();
    drop(Study::open(config).unwrap());
    let mut text = String::from("# config_hash=x\nspec,k,level,m,mean_y,var_y,mean_cost\n");
    for l in 0..4 {
        let lf = l as f64;
        text.push_str(&format!("fwint,48,{l},10,{},{},{}\n", 0.5 * 2f64.powf(-lf), 8.0 * 2f64.powf(-1.5 * lf), 2f64.powf(3.0 * lf)));
    }
    fs::write(dir.path().join("level_stats.csv"), text).unwrap();
    ok(&["rates", "--study", dir.path().to_str().unwrap()]);
    let rows = data_rows(&dir.path().join("rates.csv"));
    let f: Vec<&str> = rows[0].split(',').collect();
    let num = |i: usize| f[i].parse::<f64>().unwrap();
    assert!((num(2) - 1.0).abs() < 1e-12);
    assert!((num(3) - 1.5).abs() < 1e-12);
    assert!((num(4) - 1.5).abs() < 1e-12);
    assert!((num(5) - 3.0).abs() < 1e-12);
    assert!((num(7) - 8.0).abs() < 1e-9);
    assert_eq!(f[12], "eps^-3.500");
    assert_eq!(f[13], "true");
}
