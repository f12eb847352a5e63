//! Monte Carlo replications of a scenario and their aggregate metrics.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sos_core::data::{Dataset, Table};
use sos_core::estimators::{draw_subsample, fit_uniform, newton_with, NewtonOptions, SosFit, Subsample};
use sos_core::inference::{monte_carlo_ci, normal_ci};
use sos_core::linalg::JitterPolicy;
use sos_core::models::{LossModel, ModelKind};
use sos_core::simulate::{error_moments, generate, interval_coverage};

use crate::error::{CliError, Result};
use crate::parallel::{par_full_gradient_mean, par_pass_sums, pool};
use crate::report::{normal_critical_value, parameter_names, SCHEMA_VERSION};
use crate::scenario::{CiMethod, Estimator, Scenario};

/// Generator for replication `k`: one ChaCha stream per replication under
/// the scenario seed, so results do not depend on scheduling.
pub fn stream_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitSeconds {
    pub full: Option<f64>,
    pub uni: Option<f64>,
    /// Includes the uniform fit it corrects.
    pub sos: Option<f64>,
    pub ci: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub k: usize,
    pub realized_m: Option<usize>,
    pub full: Option<Vec<f64>>,
    pub uni: Option<Vec<f64>>,
    pub sos: Option<Vec<f64>>,
    pub ci: Option<Vec<(f64, f64)>>,
    pub psd_repaired: bool,
    pub seconds: FitSeconds,
    pub failures: Vec<String>,
}

impl ReplicationRecord {
    pub fn estimate(&self, e: Estimator) -> Option<&Vec<f64>> {
        match e {
            Estimator::Full => self.full.as_ref(),
            Estimator::Uni => self.uni.as_ref(),
            Estimator::Sos => self.sos.as_ref(),
        }
    }

    fn seconds(&self, e: Estimator) -> Option<f64> {
        match e {
            Estimator::Full => self.seconds.full,
            Estimator::Uni => self.seconds.uni,
            Estimator::Sos => self.seconds.sos,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: Estimator,
    pub successes: usize,
    pub failures: usize,
    /// Per coordinate; empty when every replication failed.
    pub bias: Vec<f64>,
    pub sd: Vec<f64>,
    pub rmse: Option<f64>,
    pub mean_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub parameters: Vec<String>,
    pub estimators: Vec<EstimatorMetrics>,
    /// SOS interval coverage per coordinate.
    pub coverage: Option<Vec<f64>>,
    pub intervals: usize,
    pub psd_repairs: usize,
    pub failed_replications: usize,
    pub replications: Vec<ReplicationRecord>,
}

fn fail(record: &mut ReplicationRecord, what: &str, e: impl std::fmt::Display) {
    record.failures.push(format!("{what}: {e}"));
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// One replication. Failures are recorded, never propagated.
pub fn replicate(sc: &Scenario, model: ModelKind, k: usize) -> ReplicationRecord {
    let mut rec = ReplicationRecord {
        k,
        realized_m: None,
        full: None,
        uni: None,
        sos: None,
        ci: None,
        psd_repaired: false,
        seconds: FitSeconds::default(),
        failures: vec![],
    };
    let mut rng = stream_rng(sc.seed, k as u64);
    let data = match generate(model, &mut rng, sc.big_n, &sc.theta0) {
        Ok(d) => d,
        Err(e) => {
            fail(&mut rec, "data", e);
            return rec;
        }
    };
    let opts = NewtonOptions::default();
    let init = model.initial_theta(data.covariates());

    if sc.wants(Estimator::Full) {
        let t = Instant::now();
        match newton_with(&model, |th, o| par_pass_sums(&model, &data, th, o), &init, &opts) {
            Ok(fit) => {
                rec.seconds.full = Some(secs(t));
                rec.full = Some(fit.theta);
            }
            Err(e) => fail(&mut rec, "FULL", e),
        }
    }
    if !(sc.wants(Estimator::Uni) || sc.wants(Estimator::Sos)) {
        return rec;
    }

    let t = Instant::now();
    let uni = draw_subsample(&mut rng, sc.big_n, sc.n)
        .and_then(|draw| Subsample::collect(&data, draw))
        .and_then(|sub| fit_uniform(&model, &sub, &init, &opts).map(|fit| (sub, fit)));
    let uni_secs = secs(t);
    let (sub, uni) = match uni {
        Ok(v) => v,
        Err(e) => {
            fail(&mut rec, "UNI", &e);
            if sc.wants(Estimator::Sos) {
                fail(&mut rec, "SOS", e);
            }
            return rec;
        }
    };
    rec.realized_m = Some(sub.realized_m());
    if sc.wants(Estimator::Uni) {
        rec.seconds.uni = Some(uni_secs);
        rec.uni = Some(uni.theta.clone());
    }
    if !sc.wants(Estimator::Sos) {
        return rec;
    }

    let t = Instant::now();
    let fit = par_full_gradient_mean(&model, &data, &uni.theta)
        .and_then(|g| SosFit::from_parts(&model, sub, uni, g));
    let fit = match fit {
        Ok(fit) => fit,
        Err(e) => {
            fail(&mut rec, "SOS", e);
            return rec;
        }
    };
    rec.seconds.sos = Some(uni_secs + secs(t));
    rec.sos = Some(fit.theta_sos.clone());
    drop(data);

    let t = Instant::now();
    let ci = match sc.ci {
        CiMethod::None => return rec,
        CiMethod::MonteCarlo => monte_carlo_ci(
            &model,
            &fit,
            sc.level,
            sc.draws(),
            &mut rng,
            &JitterPolicy::default(),
        )
        .map(|r| {
            rec.psd_repaired = r.psd_repair.is_some();
            r.intervals
        }),
        CiMethod::Normal => normal_ci(&model, &fit, normal_critical_value(sc.level)),
    };
    match ci {
        Ok(iv) => {
            rec.seconds.ci = Some(secs(t));
            rec.ci = Some(iv);
        }
        Err(e) => fail(&mut rec, "CI", e),
    }
    rec
}

/// Runs all replications on `threads` workers (`0` = all cores) and
/// aggregates them in replication order.
pub fn run_replications(sc: &Scenario, threads: usize) -> Result<MetricsTable> {
    sc.validate()?;
    let model = sc.model_kind()?;
    let records: Vec<ReplicationRecord> = pool(threads).install(|| {
        (0..sc.replications)
            .into_par_iter()
            .map(|k| replicate(sc, model, k))
            .collect()
    });
    aggregate(sc, model, records)
}

pub fn aggregate(sc: &Scenario, model: ModelKind, records: Vec<ReplicationRecord>) -> Result<MetricsTable> {
    let mut estimators = Vec::new();
    for &e in &sc.estimators {
        let ok: Vec<Vec<f64>> = records.iter().filter_map(|r| r.estimate(e).cloned()).collect();
        let (bias, sd, rmse) = if ok.is_empty() {
            (vec![], vec![], None)
        } else {
            let m = error_moments(&ok, &sc.theta0)?;
            (m.bias, m.sd, Some(m.rmse))
        };
        let times: Vec<f64> = records.iter().filter_map(|r| r.seconds(e)).collect();
        estimators.push(EstimatorMetrics {
            estimator: e,
            successes: ok.len(),
            failures: records.len() - ok.len(),
            bias,
            sd,
            rmse,
            mean_seconds: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        });
    }
    let intervals: Vec<&[(f64, f64)]> = records.iter().filter_map(|r| r.ci.as_deref()).collect();
    let coverage = if intervals.is_empty() {
        None
    } else {
        Some(interval_coverage(&intervals, &sc.theta0)?)
    };
    Ok(MetricsTable {
        schema_version: SCHEMA_VERSION,
        scenario: sc.clone(),
        parameters: parameter_names(model, sc.covariates(), &[]),
        estimators,
        coverage,
        intervals: intervals.len(),
        psd_repairs: records.iter().filter(|r| r.psd_repaired).count(),
        failed_replications: records.iter().filter(|r| !r.failures.is_empty()).count(),
        replications: records,
    })
}

impl MetricsTable {
    pub fn metrics(&self, e: Estimator) -> Option<&EstimatorMetrics> {
        self.estimators.iter().find(|m| m.estimator == e)
    }

    pub fn rmse(&self, e: Estimator) -> Option<f64> {
        self.metrics(e).and_then(|m| m.rmse)
    }

    /// The table with every wall-clock field cleared; what remains is a
    /// deterministic function of the scenario.
    pub fn without_timings(&self) -> MetricsTable {
        let mut t = self.clone();
        for m in &mut t.estimators {
            m.mean_seconds = None;
        }
        for r in &mut t.replications {
            r.seconds = FitSeconds::default();
        }
        t
    }

    /// `j, parameter, <EST>_bias, <EST>_sd, ...` with one row per coordinate.
    pub fn write_bias_sd_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["j".to_string(), "parameter".to_string()];
        for m in &self.estimators {
            header.push(format!("{}_bias", m.estimator.as_str()));
            header.push(format!("{}_sd", m.estimator.as_str()));
        }
        w.write_record(&header).map_err(csv_write_error)?;
        for (j, name) in self.parameters.iter().enumerate() {
            let mut row = vec![(j + 1).to_string(), name.clone()];
            for m in &self.estimators {
                row.push(m.bias.get(j).map(|v| v.to_string()).unwrap_or_default());
                row.push(m.sd.get(j).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row).map_err(csv_write_error)?;
        }
        w.flush().map_err(|e| CliError::io("<csv>", e))?;
        Ok(())
    }

    /// `estimator, rmse, mean_seconds, successes, failures`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["estimator", "rmse", "mean_seconds", "successes", "failures"])
            .map_err(csv_write_error)?;
        for m in &self.estimators {
            w.write_record([
                m.estimator.as_str().to_string(),
                m.rmse.map(|v| v.to_string()).unwrap_or_default(),
                m.mean_seconds.map(|v| v.to_string()).unwrap_or_default(),
                m.successes.to_string(),
                m.failures.to_string(),
            ])
            .map_err(csv_write_error)?;
        }
        w.flush().map_err(|e| CliError::io("<csv>", e))?;
        Ok(())
    }

    /// `j, parameter, coverage`; header only when no intervals were built.
    pub fn write_coverage_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "parameter", "coverage"]).map_err(csv_write_error)?;
        if let Some(cov) = &self.coverage {
            for (j, (name, c)) in self.parameters.iter().zip(cov).enumerate() {
                w.write_record([(j + 1).to_string(), name.clone(), c.to_string()])
                    .map_err(csv_write_error)?;
            }
        }
        w.flush().map_err(|e| CliError::io("<csv>", e))?;
        Ok(())
    }
}

fn csv_write_error(e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => CliError::io("<csv>", e),
        kind => CliError::config(format!("{kind:?}")),
    }
}

/// Wall-clock timings of FULL, UNI and SOS on one generated data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub scenario: String,
    pub model: String,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub n: usize,
    pub repeats: usize,
    pub timings: Vec<BenchTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTiming {
    pub estimator: Estimator,
    pub seconds: Vec<f64>,
    pub median_seconds: f64,
}

impl BenchReport {
    pub fn median(&self, e: Estimator) -> Option<f64> {
        self.timings.iter().find(|t| t.estimator == e).map(|t| t.median_seconds)
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    sos_core::linalg::quantile_sorted(&v, 0.5).unwrap_or(f64::NAN)
}

/// Times every requested estimator `repeats` times on a single data set.
/// Repeat `r` of UNI and SOS uses the same subsample.
pub fn bench(sc: &Scenario, repeats: usize, threads: usize) -> Result<BenchReport> {
    sc.validate()?;
    if repeats == 0 {
        return Err(CliError::config("repeats must be at least 1"));
    }
    let model = sc.model_kind()?;
    let data: Table = generate(model, &mut stream_rng(sc.seed, 0), sc.big_n, &sc.theta0)?;
    let opts = NewtonOptions::default();
    let init = model.initial_theta(data.covariates());
    let pool = pool(threads);

    let time_one = |e: Estimator, r: usize| -> Result<f64> {
        let mut rng = stream_rng(sc.seed, 1 + r as u64);
        let t = Instant::now();
        match e {
            Estimator::Full => {
                newton_with(&model, |th, o| par_pass_sums(&model, &data, th, o), &init, &opts)?;
            }
            Estimator::Uni | Estimator::Sos => {
                let sub = Subsample::collect(&data, draw_subsample(&mut rng, sc.big_n, sc.n)?)?;
                let uni = fit_uniform(&model, &sub, &init, &opts)?;
                if e == Estimator::Sos {
                    let g = par_full_gradient_mean(&model, &data, &uni.theta)?;
                    SosFit::from_parts(&model, sub, uni, g)?;
                }
            }
        }
        Ok(secs(t))
    };

    let mut timings = Vec::new();
    for &e in &sc.estimators {
        let seconds = pool.install(|| (0..repeats).map(|r| time_one(e, r)).collect::<Result<Vec<_>>>())?;
        timings.push(BenchTiming {
            estimator: e,
            median_seconds: median(&seconds),
            seconds,
        });
    }
    Ok(BenchReport {
        schema_version: SCHEMA_VERSION,
        scenario: sc.name.clone(),
        model: model.as_str().to_string(),
        big_n: sc.big_n,
        n: sc.n,
        repeats,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(k: usize) -> Scenario {
        Scenario::from_json(&format!(
            r#"{{"model": "logistic", "theta0": [0, 0.2, 0.2, 0.2], "N": 20000, "n": 1000, "K": {k},
                "seed": 7, "estimators": ["FULL", "UNI", "SOS"], "B": 500}}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_replication_is_its_own_decomposition() {
        let sc = scenario(1);
        let t = run_replications(&sc, 1).unwrap();
        let rec = &t.replications[0];
        for e in [Estimator::Full, Estimator::Uni, Estimator::Sos] {
            let m = t.metrics(e).unwrap();
            let est = rec.estimate(e).unwrap();
            let err: Vec<f64> = est.iter().zip(&sc.theta0).map(|(a, b)| a - b).collect();
            assert_eq!(m.bias, err);
            assert!(m.sd.iter().all(|&s| s == 0.0));
            let norm = err.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((m.rmse.unwrap() - norm).abs() < 1e-15);
        }
        let cov = t.coverage.as_ref().unwrap();
        let iv = rec.ci.as_ref().unwrap();
        for (j, c) in cov.iter().enumerate() {
            let hit = iv[j].0 <= sc.theta0[j] && sc.theta0[j] <= iv[j].1;
            assert_eq!(*c, hit as u8 as f64);
        }
    }

    #[test]
    fn tables_do_not_depend_on_worker_count() {
        let sc = scenario(6);
        let a = run_replications(&sc, 1).unwrap().without_timings();
        let b = run_replications(&sc, 4).unwrap().without_timings();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn rmse_identity_from_stored_records() {
        let sc = scenario(8);
        let t = run_replications(&sc, 0).unwrap();
        for m in &t.estimators {
            let errs: Vec<Vec<f64>> = t
                .replications
                .iter()
                .filter_map(|r| r.estimate(m.estimator))
                .map(|e| e.iter().zip(&sc.theta0).map(|(a, b)| a - b).collect())
                .collect();
            let mse = errs.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / errs.len() as f64;
            let decomposed: f64 = m.bias.iter().zip(&m.sd).map(|(b, s)| b * b + s * s).sum();
            assert!((m.rmse.unwrap().powi(2) - mse).abs() < 1e-10);
            assert!((mse - decomposed).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_exports_have_one_row_per_coordinate() {
        let t = run_replications(&scenario(2), 1).unwrap();
        let mut buf = Vec::new();
        t.write_bias_sd_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "j,parameter,FULL_bias,FULL_sd,UNI_bias,UNI_sd,SOS_bias,SOS_sd");
        assert_eq!(lines.len(), 5);
        let mut buf = Vec::new();
        t.write_coverage_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        // a near-empty subsample cannot be fitted
        let mut sc = scenario(3);
        sc.big_n = 200;
        sc.n = 5;
        let t = run_replications(&sc, 1).unwrap();
        assert_eq!(t.replications.len(), 3);
        let uni = t.metrics(Estimator::Uni).unwrap();
        assert_eq!(uni.successes + uni.failures, 3);
        assert!(t.failed_replications >= uni.failures);
    }

    #[test]
    fn bench_reports_every_estimator() {
        let r = bench(&scenario(1), 2, 1).unwrap();
        assert_eq!(r.timings.len(), 3);
        assert!(r.timings.iter().all(|t| t.seconds.len() == 2 && t.median_seconds > 0.0));
        let back: BenchReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
