//! Confidence intervals for the SOS estimator.
//!
//! With `s = min(√N, n)`, `s(θ_SOS − θ₀)` converges to `g(U)` for a Gaussian
//! `U = (U₁, U₂, U₃)` of dimension `2d + d(d+1)/2`, where
//!
//! ```text
//! g(U) = H⁻¹ [ c₁ (M/2)(a ⊗ a) − c₂ U₂ − c₁ U_C a ],   a = H⁻¹ U₁,
//! ```
//!
//! `U_C` is the symmetric matrix whose upper triangle holds `U₃` row by row,
//! and `M` is the `d × d²` third-derivative matrix. [`monte_carlo_ci`] plugs
//! subsample estimates of `H`, `M` and `Cov(U)` in at `θ_SOS`, simulates
//! `g`, and reads interval endpoints off the coordinate quantiles.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{Dataset, Table};
use crate::error::{Error, Result};
use crate::estimators::SosFit;
use crate::linalg::{
    kron, quantile_sorted, sym_from_vech, vech_len, vech_upper, JitterPolicy, LuFactor, Mat,
    MvnSampler, PsdRepair, SymMat,
};
use crate::models::{DerivativeBundle, LossModel, Order};

/// Finite-sample rate constants. `n` is the expected subsample size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingConstants {
    /// `min(√N, n)`
    pub s: f64,
    /// `s / n`
    pub c1: f64,
    /// `s / √N`
    pub c2: f64,
    /// `n / N`
    pub r: f64,
}

pub fn scaling_constants(n: usize, big_n: usize) -> Result<ScalingConstants> {
    if n == 0 || n > big_n {
        return Err(Error::InvalidSizes { n, big_n });
    }
    let (n, big_n) = (n as f64, big_n as f64);
    let root = libm::sqrt(big_n);
    let s = root.min(n);
    Ok(ScalingConstants {
        s,
        c1: s / n,
        c2: s / root,
        r: n / big_n,
    })
}

/// The non-redundant blocks of `Cov(U)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceBlocks {
    pub r: f64,
    pub v11: SymMat,
    /// `d × q`, `q = d(d+1)/2`
    pub v13: Mat,
    pub v33: SymMat,
}

impl CovarianceBlocks {
    pub fn d(&self) -> usize {
        self.v11.dim()
    }

    pub fn q(&self) -> usize {
        self.v33.dim()
    }

    /// Full `(2d+q) × (2d+q)` covariance:
    ///
    /// ```text
    /// [ V11     √r V11  V13 ]
    /// [ √r V11  V11     0   ]
    /// [ V13ᵀ    0       V33 ]
    /// ```
    pub fn assemble(&self) -> SymMat {
        let (d, q) = (self.d(), self.q());
        let sr = libm::sqrt(self.r);
        SymMat::from_upper_fn(2 * d + q, |i, j| match (i < d, i < 2 * d, j < d, j < 2 * d) {
            (true, _, true, _) => self.v11.get(i, j),
            (true, _, false, true) => sr * self.v11.get(i, j - d),
            (true, _, false, false) => self.v13[(i, j - 2 * d)],
            (false, true, _, true) => self.v11.get(i - d, j - d),
            (false, true, _, false) => 0.0,
            _ => self.v33.get(i - 2 * d, j - 2 * d),
        })
    }
}

/// Subsample plug-in estimates at one parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsampleMoments {
    pub h: SymMat,
    pub m: Mat,
    pub v: CovarianceBlocks,
    pub rows: usize,
}

/// Averages `∇²L`, `∇³L` and the moments feeding `Cov(U)` over `rows`.
/// `r` must lie in `(0, 1]`.
pub fn subsample_moments<M: LossModel + ?Sized>(
    model: &M,
    rows: &Table,
    theta: &[f64],
    r: f64,
) -> Result<SubsampleMoments> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "sampling rate {r} outside (0, 1]"
        )));
    }
    let d = model.dim(rows.covariates());
    if theta.len() != d {
        return Err(Error::dimension("parameter vector", d, theta.len()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("subsample has no rows"));
    }
    let q = vech_len(d);
    let mut h = SymMat::zeros(d);
    let mut m = Mat::zeros(d, d * d);
    let mut v11 = SymMat::zeros(d);
    let mut v13 = Mat::zeros(d, q);
    let mut v33 = SymMat::zeros(q);
    let mut b = DerivativeBundle::new(d);
    for i in 0..rows.rows() {
        let (x, y) = rows.row(i);
        model
            .eval_into(x, y, theta, Order::Third, &mut b)
            .map_err(|e| e.at_row(i))?;
        let ve = vech_upper(&b.hess);
        h.add_scaled(1.0, &b.hess);
        m.add_scaled(1.0, &b.third);
        v11.add_outer(1.0, &b.grad);
        for (j, gj) in b.grad.iter().enumerate() {
            for (k, vk) in ve.iter().enumerate() {
                v13[(j, k)] += gj * vk;
            }
        }
        v33.add_outer(1.0, &ve);
    }
    let inv = 1.0 / rows.rows() as f64;
    h.scale(inv);
    m.scale(inv);
    v11.scale(inv);
    v13.scale((1.0 - r) * inv);
    v33.scale((1.0 - r) * inv);
    Ok(SubsampleMoments {
        h,
        m,
        v: CovarianceBlocks { r, v11, v13, v33 },
        rows: rows.rows(),
    })
}

pub fn estimate_h<M: LossModel + ?Sized>(model: &M, rows: &Table, theta: &[f64]) -> Result<SymMat> {
    Ok(subsample_moments(model, rows, theta, 1.0)?.h)
}

pub fn estimate_m<M: LossModel + ?Sized>(model: &M, rows: &Table, theta: &[f64]) -> Result<Mat> {
    Ok(subsample_moments(model, rows, theta, 1.0)?.m)
}

pub fn estimate_v<M: LossModel + ?Sized>(
    model: &M,
    rows: &Table,
    theta: &[f64],
    r: f64,
) -> Result<CovarianceBlocks> {
    Ok(subsample_moments(model, rows, theta, r)?.v)
}

/// `g(U)` with `H` factored once.
#[derive(Clone, Debug)]
pub struct GTransform {
    h: LuFactor,
    m: Mat,
    consts: ScalingConstants,
    d: usize,
}

impl GTransform {
    pub fn new(h: &SymMat, m: &Mat, consts: ScalingConstants) -> Result<Self> {
        let d = h.dim();
        if m.rows() != d || m.cols() != d * d {
            return Err(Error::dimension("third-derivative matrix", d * d * d, m.rows() * m.cols()));
        }
        Ok(GTransform {
            h: LuFactor::new(h.as_mat())?,
            m: m.clone(),
            consts,
            d,
        })
    }

    pub fn input_dim(&self) -> usize {
        2 * self.d + vech_len(self.d)
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        if u.len() != self.input_dim() {
            return Err(Error::dimension("U", self.input_dim(), u.len()));
        }
        let ScalingConstants { c1, c2, .. } = self.consts;
        let a = self.h.solve(&u[..d])?;
        let quad = self.m.mul_vec(&kron(&a, &a))?;
        let uc = sym_from_vech(&u[2 * d..], d)?;
        let cross = uc.as_mat().mul_vec(&a)?;
        let mut rhs: Vec<f64> = (0..d)
            .map(|j| c1 * 0.5 * quad[j] - c2 * u[d + j] - c1 * cross[j])
            .collect();
        self.h.solve_in_place(&mut rhs)?;
        Ok(rhs)
    }
}

pub fn g_transform(h: &SymMat, m: &Mat, consts: ScalingConstants, u: &[f64]) -> Result<Vec<f64>> {
    GTransform::new(h, m, consts)?.apply(u)
}

/// Interval for one coordinate from the `α/2` and `1 − α/2` quantiles of
/// `g_j`: `[θ_j − g_hi / s, θ_j − g_lo / s]`.
pub fn interval(theta_j: f64, g_lo: f64, g_hi: f64, s: f64) -> (f64, f64) {
    (theta_j - g_hi / s, theta_j - g_lo / s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CiReport {
    pub level: f64,
    pub draws: usize,
    pub s: f64,
    /// Per coordinate `(lower, upper)`.
    pub intervals: Vec<(f64, f64)>,
    /// Per coordinate `(g_L, g_U)`.
    pub quantiles: Vec<(f64, f64)>,
    pub draw_mean: Vec<f64>,
    pub draw_sd: Vec<f64>,
    /// Set when the plug-in covariance needed repair before sampling.
    pub psd_repair: Option<PsdRepair>,
}

impl CiReport {
    pub fn covers(&self, j: usize, value: f64) -> bool {
        let (lo, hi) = self.intervals[j];
        lo <= value && value <= hi
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    Ok(())
}

pub const MIN_DRAWS: usize = 100;

/// Monte Carlo interval for every coordinate of `fit.theta_sos`.
///
/// Plug-in `H`, `M` and `Cov(U)` come from the subsample at `θ_SOS`; `draws`
/// Gaussian vectors are pushed through `g` and the per-coordinate quantiles
/// give the endpoints.
pub fn monte_carlo_ci<M: LossModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    fit: &SosFit,
    level: f64,
    draws: usize,
    rng: &mut R,
    policy: &JitterPolicy,
) -> Result<CiReport> {
    check_level(level)?;
    if draws < MIN_DRAWS {
        return Err(Error::InvalidArgument(alloc::format!(
            "at least {MIN_DRAWS} Monte Carlo draws are required, got {draws}"
        )));
    }
    let consts = scaling_constants(fit.expected_n(), fit.big_n())?;
    let mom = subsample_moments(model, &fit.subsample.rows, &fit.theta_sos, consts.r)?;
    let g = GTransform::new(&mom.h, &mom.m, consts)?;
    let mut sampler = MvnSampler::new(&mom.v.assemble(), policy)?;

    let d = fit.theta_sos.len();
    let mut u = vec![0.0; g.input_dim()];
    let mut cols = vec![Vec::with_capacity(draws); d];
    for _ in 0..draws {
        sampler.sample_into(rng, &mut u);
        for (col, v) in cols.iter_mut().zip(g.apply(&u)?) {
            col.push(v);
        }
    }

    let alpha = 1.0 - level;
    let mut intervals = Vec::with_capacity(d);
    let mut quantiles = Vec::with_capacity(d);
    let mut draw_mean = Vec::with_capacity(d);
    let mut draw_sd = Vec::with_capacity(d);
    for (j, col) in cols.iter_mut().enumerate() {
        let mean = col.iter().sum::<f64>() / draws as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / draws as f64;
        draw_mean.push(mean);
        draw_sd.push(libm::sqrt(var));
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Monte Carlo draw".into()));
        }
        col.sort_by(f64::total_cmp);
        let lo = quantile_sorted(col, alpha / 2.0)?;
        let hi = quantile_sorted(col, 1.0 - alpha / 2.0)?;
        quantiles.push((lo, hi));
        intervals.push(interval(fit.theta_sos[j], lo, hi, consts.s));
    }
    Ok(CiReport {
        level,
        draws,
        s: consts.s,
        intervals,
        quantiles,
        draw_mean,
        draw_sd,
        psd_repair: sampler.factor().repair.clone(),
    })
}

/// Gaussian interval `θ_j ± z √(V_c,jj / N)` with `V_c = H⁻¹ V₁₁ H⁻¹`,
/// for the regime `n ≫ √N`. `z` is the two-sided normal critical value
/// for the wanted level.
pub fn normal_ci<M: LossModel + ?Sized>(model: &M, fit: &SosFit, z: f64) -> Result<Vec<(f64, f64)>> {
    let mom = subsample_moments(model, &fit.subsample.rows, &fit.theta_sos, 1.0)?;
    let lu = LuFactor::new(mom.h.as_mat())?;
    let d = fit.theta_sos.len();
    let big_n = fit.big_n() as f64;
    (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let hj = lu.solve(&e)?;
            let w = mom.v.v11.as_mat().mul_vec(&hj)?;
            let var = crate::linalg::dot(&hj, &w).max(0.0);
            let half = z * libm::sqrt(var / big_n);
            Ok((fit.theta_sos[j] - half, fit.theta_sos[j] + half))
        })
        .collect()
}
