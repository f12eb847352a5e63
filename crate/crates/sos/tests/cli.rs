use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use sos::csv_data::CsvDataset;
use sos::generate::{default_covariate_names, gen_airline, write_csv_file, AIRLINE_COVARIATES, AIRLINE_RESPONSE, AIRLINE_THETA};
use sos::report::{cmd_fit, FitConfig, Report};
use sos::runner::{stream_rng, BenchReport, MetricsTable};
use sos::scenario::{CiMethod, Scenario};
use sos_core::estimators::{fit_full_newton, NewtonOptions};
use sos_core::inference::scaling_constants;
use sos_core::models::{LossModel, ModelKind};
use sos_core::simulate::gen_logistic;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sos"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("SOS_THREADS", "1").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn config(data: &Path, covariates: Vec<String>, n: usize) -> FitConfig {
    FitConfig {
        data: data.to_path_buf(),
        response: "y".into(),
        covariates,
        model: ModelKind::Logistic,
        n,
        seed: 11,
        level: 0.95,
        mc_draws: Some(500),
        ci: CiMethod::MonteCarlo,
        newton: NewtonOptions::default(),
        chunk_rows: 65_536,
    }
}

/// Logistic file with three covariates.
fn logistic_csv(dir: &Path, rows: usize, seed: u64) -> (PathBuf, sos_core::data::Table) {
    let t = gen_logistic(&mut stream_rng(seed, 0), rows, &[0.1, 0.5, -0.5, 0.25]).unwrap();
    let path = dir.join(format!("logistic_{rows}_{seed}.csv"));
    write_csv_file(&t, "y", &default_covariate_names(3), &path).unwrap();
    (path, t)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn full_rate_csv_fit_matches_full_newton() {
    let dir = tempfile::tempdir().unwrap();
    let (path, table) = logistic_csv(dir.path(), 3000, 1);
    let report = cmd_fit(&config(&path, default_covariate_names(3), 3000)).unwrap();
    assert_eq!(report.realized_m, 3000);
    let full = fit_full_newton(&ModelKind::Logistic, &table, &[0.0; 4], &NewtonOptions::default()).unwrap();
    assert!(max_abs_diff(&report.theta_sos, &full.theta) < 1e-8);
    assert!(max_abs_diff(&report.theta_uni, &full.theta) < 1e-8);
}

fn strip_timings(json: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    serde_json::to_string(&v).unwrap()
}

#[test]
fn repeated_fits_give_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = logistic_csv(dir.path(), 5000, 2);
    let out = dir.path().join("r.json");
    let args = [
        "fit", "--data", path.to_str().unwrap(), "--response", "y", "--covariates", "x1,x2,x3",
        "--model", "logistic", "--n", "800", "--seed", "5", "--mc-draws", "300",
        "--out", out.to_str().unwrap(),
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let (a, b) = (String::from_utf8(a.stdout).unwrap(), String::from_utf8(b.stdout).unwrap());
    assert_eq!(strip_timings(&a), strip_timings(&b));
    let from_file = std::fs::read_to_string(&out).unwrap();
    assert_eq!(strip_timings(&from_file), strip_timings(&a));

    let report: Report = serde_json::from_str(&a).unwrap();
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.parameters, ["intercept", "x1", "x2", "x3"]);
    assert_eq!(serde_json::from_str::<Report>(&report.to_json()).unwrap(), report);
    let ci = report.ci.unwrap();
    assert_eq!(ci.draws, Some(300));
    assert_eq!(ci.intervals.len(), 4);
}

#[test]
fn airline_schema_fit_agrees_with_full_fit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flights.csv");
    let rows = 400_000;
    let t = gen_airline(&mut stream_rng(3, 0), rows);
    let cols = names(&AIRLINE_COVARIATES);
    write_csv_file(&t, AIRLINE_RESPONSE, &cols, &path).unwrap();

    let data = CsvDataset::open(&path, AIRLINE_RESPONSE, &cols).unwrap();
    let full = fit_full_newton(&ModelKind::Logistic, &data, &[0.0; 5], &NewtonOptions::default()).unwrap();
    let mut cfg = config(&path, cols, 20_000);
    cfg.response = AIRLINE_RESPONSE.into();
    cfg.mc_draws = None;
    let report = cmd_fit(&cfg).unwrap();
    let ci = report.ci.as_ref().unwrap();
    assert_eq!(ci.draws, Some(20_000));
    for (j, iv) in ci.intervals.iter().enumerate() {
        let half = 0.5 * (iv.upper - iv.lower);
        let gap = (report.theta_sos[j] - full.theta[j]).abs();
        assert!(gap <= half, "{}: |sos - full| = {gap} > {half}", iv.parameter);
    }
    // the file was labelled with AIRLINE_THETA; the full fit should see it
    for (j, (&f, &truth)) in full.theta.iter().zip(&AIRLINE_THETA).enumerate() {
        assert!((f - truth).abs() < 0.2, "coordinate {j}: {f} vs {truth}");
    }
    assert_eq!(report.parameters[0], "intercept");
    assert_eq!(report.parameters[4], "dep_delay15");
}

#[test]
fn chunk_size_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    // ten times the smallest chunk budget below
    let (path, _) = logistic_csv(dir.path(), 20_000, 4);
    let base = cmd_fit(&config(&path, default_covariate_names(3), 2000)).unwrap();
    for rows in [2000, 777, 1] {
        let mut cfg = config(&path, default_covariate_names(3), 2000);
        cfg.chunk_rows = rows;
        let r = cmd_fit(&cfg).unwrap();
        assert_eq!(r.realized_m, base.realized_m);
        assert!(max_abs_diff(&r.theta_uni, &base.theta_uni) <= 1e-12);
        assert!(max_abs_diff(&r.theta_sos, &base.theta_sos) <= 1e-12, "{rows}");
        let (a, b) = (r.ci.unwrap(), base.ci.clone().unwrap());
        for (x, y) in a.intervals.iter().zip(&b.intervals) {
            assert!((x.lower - y.lower).abs() <= 1e-12 && (x.upper - y.upper).abs() <= 1e-12);
        }
    }
}

#[test]
fn normal_intervals_and_reported_constants() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = logistic_csv(dir.path(), 10_000, 5);
    let mut cfg = config(&path, default_covariate_names(3), 5000);
    cfg.ci = CiMethod::Normal;
    let r = cmd_fit(&cfg).unwrap();
    assert_eq!(r.s, scaling_constants(5000, 10_000).unwrap().s);
    assert_eq!(r.big_n, 10_000);
    for (iv, &t) in r.ci.unwrap().intervals.iter().zip(&r.theta_sos) {
        assert!(iv.lower < t && t < iv.upper);
        assert!((0.5 * (iv.lower + iv.upper) - t).abs() < 1e-12);
        assert!(iv.g_lower.is_none());
    }
    cfg.ci = CiMethod::None;
    assert!(cmd_fit(&cfg).unwrap().ci.is_none());
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = logistic_csv(dir.path(), 200, 6);
    let p = path.to_str().unwrap();
    let fit = |extra: &[&str]| {
        let mut args = vec!["fit", "--response", "y", "--model", "logistic", "--n", "100"];
        args.extend_from_slice(extra);
        run(&args)
    };

    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));

    let o = fit(&["--data", p, "--covariates", "x1,x9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'x9'"));

    let o = run(&["fit", "--data", p, "--response", "y", "--covariates", "x1", "--model", "probit", "--n", "50"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--model"), "{}", stderr(&o));

    assert_eq!(fit(&["--data", p, "--covariates", "x1", "--level", "1.5"]).status.code(), Some(1));
    assert_eq!(fit(&["--data", p, "--covariates", "x1", "--mc-draws", "10"]).status.code(), Some(1));
    // more rows requested than the file holds
    let o = run(&["fit", "--data", p, "--response", "y", "--covariates", "x1", "--model", "logistic", "--n", "500"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = fit(&["--data", "/nonexistent/data.csv", "--covariates", "x1"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = write(dir.path(), "bad.csv", &format!("y,x1\n{}1,oops\n", "0,0.5\n1,0.25\n".repeat(60)));
    let o = fit(&["--data", bad.to_str().unwrap(), "--covariates", "x1"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 122") && msg.contains("'x1'") && msg.contains("oops"), "{msg}");

    let nonbinary = write(dir.path(), "nb.csv", &format!("y,x1\n{}", "0.5,1\n".repeat(10)));
    let o = run(&["fit", "--data", nonbinary.to_str().unwrap(), "--response", "y", "--covariates", "x1", "--model", "logistic", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let separated = write(dir.path(), "sep.csv", "y,x1\n0,-2\n0,-1\n1,1\n1,2\n0,-3\n1,3\n");
    let o = run(&["fit", "--data", separated.to_str().unwrap(), "--response", "y", "--covariates", "x1", "--model", "logistic", "--n", "6"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let sc = write(dir.path(), "bad_model.json", r#"{"model": "probit", "theta0": [0, 1], "N": 100, "n": 50}"#);
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'model'"), "{}", stderr(&o));

    let o = run(&["bench", "--scenario", "/nonexistent/s.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bundled_table_scenario_has_the_published_layout() {
    let path = scenarios().join("logistic_t1_k1.json");
    let mut sc = Scenario::load(&path).unwrap();
    assert_eq!((sc.big_n, sc.n, sc.replications), (1_000_000, 10_000, 1000));
    assert_eq!(sc.theta0.len(), 10);

    // same file with fewer replications and rows, to keep the test short
    sc.replications = 2;
    sc.big_n = 100_000;
    let dir = tempfile::tempdir().unwrap();
    let small = write(dir.path(), "t1.json", &serde_json::to_string(&sc).unwrap());
    let out = dir.path().join("out");
    let o = run(&["simulate", "--scenario", small.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let table = std::fs::read_to_string(out.join("bias_sd.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "j,parameter,UNI_bias,UNI_sd,SOS_bias,SOS_sd");
    assert_eq!(lines.len(), 11);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 6);
    }
    let metrics: MetricsTable = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.replications.len(), 2);
    assert_eq!(metrics.coverage.as_ref().map(Vec::len), Some(10));
    assert!(out.join("summary.csv").exists() && out.join("coverage.csv").exists());
}

#[test]
fn smoke_scenario_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = run(&[
        "simulate",
        "--scenario",
        scenarios().join("smoke.json").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed().as_secs_f64() < 5.0);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn bench_report_round_trips() {
    let o = run(&["bench", "--scenario", scenarios().join("smoke.json").to_str().unwrap(), "--repeats", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let r: BenchReport = serde_json::from_str(&text).unwrap();
    assert_eq!(r.repeats, 2);
    assert_eq!(r.timings.len(), 3);
    assert_eq!(serde_json::to_string_pretty(&r).unwrap().trim(), text.trim());
}

#[test]
fn generated_files_can_be_fitted() {
    let dir = tempfile::tempdir().unwrap();
    let flights = dir.path().join("f.csv");
    let o = run(&["generate", "--kind", "airline", "--rows", "3000", "--seed", "1", "--out", flights.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let head = std::fs::read_to_string(&flights).unwrap();
    assert!(head.starts_with("arr_delay15,night,distance,weekend,dep_delay15\n"));

    let w = dir.path().join("w.csv");
    let o = run(&["generate", "--kind", "weibull", "--rows", "4000", "--theta", "0.5,0,0.2,-0.2", "--out", w.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "fit", "--data", w.to_str().unwrap(), "--response", "y", "--covariates", "x1,x2",
        "--model", "weibull", "--n", "1000", "--ci", "normal",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Report = serde_json::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(r.parameters, ["shape", "intercept", "x1", "x2"]);
    assert!(ModelKind::Weibull.check_theta(&r.theta_sos).is_ok());
    assert!((r.theta_sos[0] - 0.5).abs() < 0.1);

    let o = run(&["generate", "--kind", "weibull", "--rows", "10", "--theta", "-1,0", "--out", w.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
