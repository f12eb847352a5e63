//! Synthetic designs and replication metrics.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::Distribution;

use crate::data::Table;
use crate::error::{Error, Result};
use crate::inference::CiReport;
use crate::models::{sigmoid, ModelKind};

fn uniform_row<R: Rng + ?Sized>(rng: &mut R, x: &mut [f64]) {
    for v in x {
        *v = 2.0 * rng.random::<f64>() - 1.0;
    }
}

/// Logistic design: `Xᵢⱼ ~ U(−1, 1)` and `Yᵢ ~ Bernoulli(σ(γ₀ + Xᵢᵀβ₀))`
/// with `θ₀ = (γ₀, β₀)`.
pub fn gen_logistic<R: Rng + ?Sized>(rng: &mut R, big_n: usize, theta0: &[f64]) -> Result<Table> {
    if theta0.is_empty() {
        return Err(Error::dimension("parameter vector", 1, 0));
    }
    let p = theta0.len() - 1;
    let mut t = Table::with_capacity(p, big_n);
    let mut x = vec![0.0; p];
    for _ in 0..big_n {
        uniform_row(rng, &mut x);
        let eta = theta0[0] + crate::linalg::dot(&theta0[1..], &x);
        let y = (rng.random::<f64>() < sigmoid(eta)) as u8 as f64;
        t.push(&x, y)?;
    }
    Ok(t)
}

/// Gaussian linear design: `Yᵢ = γ₀ + Xᵢᵀβ₀ + εᵢ`, `εᵢ ~ N(0, 1)`.
pub fn gen_linear<R: Rng + ?Sized>(rng: &mut R, big_n: usize, theta0: &[f64]) -> Result<Table> {
    if theta0.is_empty() {
        return Err(Error::dimension("parameter vector", 1, 0));
    }
    let p = theta0.len() - 1;
    let mut t = Table::with_capacity(p, big_n);
    let mut x = vec![0.0; p];
    for _ in 0..big_n {
        uniform_row(rng, &mut x);
        let e: f64 = rng.sample(rand_distr::StandardNormal);
        t.push(&x, theta0[0] + crate::linalg::dot(&theta0[1..], &x) + e)?;
    }
    Ok(t)
}

/// Draws from the design matching `model`.
pub fn generate<R: Rng + ?Sized>(
    model: ModelKind,
    rng: &mut R,
    big_n: usize,
    theta0: &[f64],
) -> Result<Table> {
    match model {
        ModelKind::Linear => gen_linear(rng, big_n, theta0),
        ModelKind::Logistic => gen_logistic(rng, big_n, theta0),
        ModelKind::Weibull => gen_weibull(rng, big_n, theta0),
    }
}

/// Weibull AFT design: `Yᵢ = Wᵢ exp(γ₀ + Xᵢᵀβ₀ / α₀)` with `W` Weibull of
/// shape `α₀` and scale 1 and `Xᵢⱼ ~ U(−1, 1)`, `θ₀ = (α₀, γ₀, β₀)`.
pub fn gen_weibull<R: Rng + ?Sized>(rng: &mut R, big_n: usize, theta0: &[f64]) -> Result<Table> {
    if theta0.len() < 2 {
        return Err(Error::dimension("parameter vector", 2, theta0.len()));
    }
    let alpha = theta0[0];
    let w = rand_distr::Weibull::new(1.0, alpha)
        .map_err(|_| Error::domain("Weibull shape must be positive and finite"))?;
    let p = theta0.len() - 2;
    let mut t = Table::with_capacity(p, big_n);
    let mut x = vec![0.0; p];
    for _ in 0..big_n {
        uniform_row(rng, &mut x);
        let lin = theta0[1] + crate::linalg::dot(&theta0[2..], &x) / alpha;
        let y = w.sample(rng) * libm::exp(lin);
        t.push(&x, y)?;
    }
    Ok(t)
}

fn check_estimates(estimates: &[Vec<f64>], theta0: &[f64]) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("no estimates"));
    }
    if let Some(e) = estimates.iter().find(|e| e.len() != theta0.len()) {
        return Err(Error::dimension("estimate", theta0.len(), e.len()));
    }
    Ok(())
}

/// `[K⁻¹ Σ ‖θᵏ − θ₀‖²]^½`.
pub fn rmse(estimates: &[Vec<f64>], theta0: &[f64]) -> Result<f64> {
    check_estimates(estimates, theta0)?;
    let total: f64 = estimates
        .iter()
        .map(|e| e.iter().zip(theta0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(libm::sqrt(total / estimates.len() as f64))
}

/// Per-coordinate bias and spread of a set of estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMoments {
    pub bias: Vec<f64>,
    /// Population standard deviation (divisor `K`), so that
    /// `rmse² = Σ bias² + Σ sd²`.
    pub sd: Vec<f64>,
    pub rmse: f64,
}

pub fn error_moments(estimates: &[Vec<f64>], theta0: &[f64]) -> Result<ErrorMoments> {
    check_estimates(estimates, theta0)?;
    let k = estimates.len() as f64;
    let d = theta0.len();
    let mut bias = vec![0.0; d];
    for e in estimates {
        for j in 0..d {
            bias[j] += (e[j] - theta0[j]) / k;
        }
    }
    let mut var = vec![0.0; d];
    for e in estimates {
        for j in 0..d {
            let c = e[j] - theta0[j] - bias[j];
            var[j] += c * c / k;
        }
    }
    Ok(ErrorMoments {
        bias,
        sd: var.into_iter().map(libm::sqrt).collect(),
        rmse: rmse(estimates, theta0)?,
    })
}

/// Fraction of intervals containing `θ₀,j`, per coordinate.
pub fn coverage(reports: &[CiReport], theta0: &[f64]) -> Result<Vec<f64>> {
    let intervals: Vec<&[(f64, f64)]> = reports.iter().map(|r| r.intervals.as_slice()).collect();
    interval_coverage(&intervals, theta0)
}

/// [`coverage`] on bare interval lists.
pub fn interval_coverage(intervals: &[&[(f64, f64)]], theta0: &[f64]) -> Result<Vec<f64>> {
    if intervals.is_empty() {
        return Err(Error::EmptyInput("no intervals"));
    }
    let mut hits = vec![0usize; theta0.len()];
    for iv in intervals {
        if iv.len() != theta0.len() {
            return Err(Error::dimension("interval list", theta0.len(), iv.len()));
        }
        for (j, &(lo, hi)) in iv.iter().enumerate() {
            hits[j] += (lo <= theta0[j] && theta0[j] <= hi) as usize;
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| h as f64 / intervals.len() as f64)
        .collect())
}
