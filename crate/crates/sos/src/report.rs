//! The `fit` command and its JSON report.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sos_core::data::Dataset;
use sos_core::estimators::{fit_uniform, full_gradient_mean, NewtonOptions, SosFit, StreamingDraw};
use sos_core::inference::{monte_carlo_ci, normal_ci, scaling_constants, MIN_DRAWS};
use sos_core::linalg::JitterPolicy;
use sos_core::models::{LossModel, ModelKind};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::csv_data::CsvDataset;
use crate::error::{CliError, Result};
use crate::runner::stream_rng;
use crate::scenario::CiMethod;

pub const SCHEMA_VERSION: u32 = 1;

/// Two-sided standard normal critical value for `level`.
pub fn normal_critical_value(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Labels for the parameter vector of `model` over `p` covariates. Missing
/// covariate names become `x1, x2, ...`.
pub fn parameter_names(model: ModelKind, p: usize, covariates: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(p + 2);
    if model == ModelKind::Weibull {
        out.push("shape".to_string());
    }
    out.push("intercept".to_string());
    for j in 0..p {
        out.push(covariates.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1)));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub data: PathBuf,
    pub response: String,
    pub covariates: Vec<String>,
    pub model: ModelKind,
    pub n: usize,
    pub seed: u64,
    pub level: f64,
    /// Defaults to `n`.
    pub mc_draws: Option<usize>,
    pub ci: CiMethod,
    pub newton: NewtonOptions,
    pub chunk_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub parameter: String,
    pub lower: f64,
    pub upper: f64,
    /// Quantiles of `g` behind the endpoints (Monte Carlo intervals only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_upper: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiSection {
    pub method: CiMethod,
    pub level: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub draws: Option<usize>,
    pub intervals: Vec<Interval>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTimings {
    /// Counting pass, subsample draw and uniform fit.
    pub subsample_seconds: f64,
    pub gradient_pass_seconds: f64,
    pub ci_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub model: String,
    pub response: String,
    pub parameters: Vec<String>,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub realized_m: usize,
    /// `min(√N, n)`
    pub s: f64,
    pub theta_uni: Vec<f64>,
    pub theta_sos: Vec<f64>,
    pub ci: Option<CiSection>,
    pub uni_iterations: usize,
    pub timings: FitTimings,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Fits `θ_SOS` on a CSV file in two streaming passes. Only the subsample
/// and one chunk of rows are held in memory.
pub fn cmd_fit(cfg: &FitConfig) -> Result<Report> {
    cfg.newton.validate()?;
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(CliError::config("--level must lie strictly between 0 and 1"));
    }
    let data = CsvDataset::open(&cfg.data, &cfg.response, &cfg.covariates)?.with_chunk_rows(cfg.chunk_rows);
    let model = cfg.model;
    let p = data.covariates();
    let d = model.dim(p);
    if cfg.n <= d {
        return Err(CliError::config(format!(
            "--n must exceed the parameter dimension {d}"
        )));
    }
    let draws = cfg.mc_draws.unwrap_or(cfg.n.max(MIN_DRAWS));
    if cfg.ci == CiMethod::MonteCarlo && draws < MIN_DRAWS {
        return Err(CliError::config(format!("--mc-draws must be at least {MIN_DRAWS}")));
    }
    let start = Instant::now();
    let mut rng = stream_rng(cfg.seed, 0);

    // pass 1: count rows and draw the subsample together
    let mut stream = StreamingDraw::new(p, cfg.n);
    data.for_each_chunk(&mut |c| {
        for i in 0..c.rows() {
            let (x, y) = c.row(i);
            stream.offer(&mut rng, x, y)?;
        }
        Ok(())
    })?;
    if stream.rows_seen() == 0 {
        return Err(sos_core::Error::EmptyInput("data file has no rows").into());
    }
    let sub = stream.finish()?;
    let uni = fit_uniform(&model, &sub, &model.initial_theta(p), &cfg.newton)?;
    let subsample_seconds = start.elapsed().as_secs_f64();

    // pass 2: full-data mean gradient at the uniform fit
    let t = Instant::now();
    let grad = full_gradient_mean(&model, &data, &uni.theta)?;
    let fit = SosFit::from_parts(&model, sub, uni, grad)?;
    let gradient_pass_seconds = t.elapsed().as_secs_f64();

    let names = parameter_names(model, p, data.covariate_names());
    let mut warnings = Vec::new();
    let t = Instant::now();
    let ci = match cfg.ci {
        CiMethod::None => None,
        CiMethod::MonteCarlo => {
            let r = monte_carlo_ci(&model, &fit, cfg.level, draws, &mut rng, &JitterPolicy::default())?;
            if let Some(rep) = &r.psd_repair {
                warnings.push(format!(
                    "plug-in covariance was not positive semidefinite (min eigenvalue {:e}); clipped {} eigenvalue(s) and added jitter {:e}",
                    rep.min_eigenvalue, rep.clipped, rep.jitter
                ));
            }
            Some(CiSection {
                method: CiMethod::MonteCarlo,
                level: cfg.level,
                draws: Some(r.draws),
                intervals: names
                    .iter()
                    .zip(r.intervals.iter().zip(&r.quantiles))
                    .map(|(name, (&(lower, upper), &(gl, gu)))| Interval {
                        parameter: name.clone(),
                        lower,
                        upper,
                        g_lower: Some(gl),
                        g_upper: Some(gu),
                    })
                    .collect(),
            })
        }
        CiMethod::Normal => {
            let iv = normal_ci(&model, &fit, normal_critical_value(cfg.level))?;
            Some(CiSection {
                method: CiMethod::Normal,
                level: cfg.level,
                draws: None,
                intervals: names
                    .iter()
                    .zip(iv)
                    .map(|(name, (lower, upper))| Interval {
                        parameter: name.clone(),
                        lower,
                        upper,
                        g_lower: None,
                        g_upper: None,
                    })
                    .collect(),
            })
        }
    };
    let ci_seconds = t.elapsed().as_secs_f64();
    let consts = scaling_constants(fit.expected_n(), fit.big_n())?;
    if fit.realized_m() < fit.expected_n() / 2 {
        warnings.push(format!(
            "realized subsample size {} is far below the requested {}",
            fit.realized_m(),
            fit.expected_n()
        ));
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        model: model.as_str().to_string(),
        response: cfg.response.clone(),
        parameters: names,
        n: fit.expected_n(),
        big_n: fit.big_n(),
        realized_m: fit.realized_m(),
        s: consts.s,
        uni_iterations: fit.uni_iterations,
        theta_uni: fit.theta_uni,
        theta_sos: fit.theta_sos,
        ci,
        timings: FitTimings {
            subsample_seconds,
            gradient_pass_seconds,
            ci_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
        warnings,
    })
}
