//! Per-observation loss models with analytic first, second and third
//! derivatives.
//!
//! Parameter layouts:
//!
//! * linear and logistic: `(γ, β₁, …, β_p)`, `d = p + 1`, with linear
//!   predictor `η = γ + xᵀβ`;
//! * Weibull: `(α, γ, β₁, …, β_p)`, `d = p + 2`.
//!
//! The Weibull model is the regression `Y = W · exp(γ + xᵀβ / α)` where `W`
//! has density `α w^(α-1) exp(-w^α)`, i.e. shape `α` and scale 1. At scale 1
//! the "scale" form `(α/λ)(w/λ)^(α-1) exp(-(w/λ)^α)` and the "rate" form
//! `αλ w^(α-1) exp(-λ w^α)` coincide, so there is a single density to
//! implement. Writing `t = α(ln y − γ) − xᵀβ`, `Y` has negative log-density
//!
//! ```text
//! L = −ln α + ln y − t + exp(t)
//! ```
//!
//! and at the true parameter `exp(t)` is a standard exponential variable.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMat};

/// How many derivative levels [`LossModel::eval_into`] fills.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Loss = 0,
    Gradient = 1,
    Hessian = 2,
    Third = 3,
}

/// Loss value and derivative arrays at one observation.
///
/// `third` is `d x d²`; row `j` is the row-major vec of the Hessian of
/// `∂L/∂θ_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub hess: SymMat,
    pub third: Mat,
    work: Vec<f64>,
}

impl DerivativeBundle {
    pub fn new(d: usize) -> Self {
        DerivativeBundle {
            loss: 0.0,
            grad: vec![0.0; d],
            hess: SymMat::zeros(d),
            third: Mat::zeros(d, d * d),
            work: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    /// Worst relative discrepancy of `(grad, hess, third)` against `other`,
    /// each measured as `max |a − b| / max(‖a‖∞, floor)`.
    pub fn relative_errors(&self, other: &DerivativeBundle, floor: f64) -> [f64; 3] {
        fn rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
            let diff = a
                .iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            diff / scale
        }
        [
            rel(&self.grad, &other.grad, floor),
            rel(self.hess.as_mat().as_slice(), other.hess.as_mat().as_slice(), floor),
            rel(self.third.as_slice(), other.third.as_slice(), floor),
        ]
    }
}

/// A per-observation loss `L(z; θ)` with analytic derivatives.
pub trait LossModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameter dimension for `p` covariates.
    fn dim(&self, p: usize) -> usize;

    /// Newton starting point.
    fn initial_theta(&self, p: usize) -> Vec<f64>;

    fn check_theta(&self, theta: &[f64]) -> Result<()>;

    fn check_observation(&self, x: &[f64], y: f64) -> Result<()>;

    /// Evaluates the loss and derivatives up to `order` into `out`. Arrays
    /// above `order` are left untouched.
    fn eval_into(
        &self,
        x: &[f64],
        y: f64,
        theta: &[f64],
        order: Order,
        out: &mut DerivativeBundle,
    ) -> Result<()>;

    /// Gradient only, for passes that need nothing else. `theta` must
    /// already satisfy [`LossModel::check_theta`]; `out.loss` may be left
    /// stale.
    fn gradient_into(&self, x: &[f64], y: f64, theta: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        self.eval_into(x, y, theta, Order::Gradient, out)
    }
}

/// Allocating convenience wrapper around [`LossModel::eval_into`].
pub fn eval_derivatives<M: LossModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: f64,
    theta: &[f64],
    order: Order,
) -> Result<DerivativeBundle> {
    let mut out = DerivativeBundle::new(theta.len());
    model.eval_into(x, y, theta, order, &mut out)?;
    Ok(out)
}

fn check_len(theta: &[f64], x: &[f64], extra: usize) -> Result<()> {
    if theta.len() != x.len() + extra {
        return Err(Error::dimension("parameter vector", x.len() + extra, theta.len()));
    }
    Ok(())
}

fn check_finite(x: &[f64], y: f64) -> Result<()> {
    if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite observation"));
    }
    Ok(())
}

/// Fills derivatives for losses of the form `ℓ(γ + xᵀβ)` given the first
/// three derivatives of `ℓ` in the linear predictor.
fn fill_single_index(
    x: &[f64],
    [a1, a2, a3]: [f64; 3],
    order: Order,
    out: &mut DerivativeBundle,
) {
    if order < Order::Gradient {
        return;
    }
    let d = x.len() + 1;
    out.work[0] = 1.0;
    out.work[1..].copy_from_slice(x);
    let w = &out.work;
    for (g, wi) in out.grad.iter_mut().zip(w) {
        *g = a1 * wi;
    }
    if order < Order::Hessian {
        return;
    }
    out.hess.fill_from_upper(|i, j| a2 * w[i] * w[j]);
    if order < Order::Third {
        return;
    }
    fill_sym3(d, out.third.as_mut_slice(), |i, j, k| a3 * w[i] * w[j] * w[k]);
}

/// Same values as the gradient written by [`fill_single_index`].
fn single_index_gradient(x: &[f64], a1: f64, grad: &mut [f64]) {
    grad[0] = a1 * 1.0;
    for (g, xi) in grad[1..].iter_mut().zip(x) {
        *g = a1 * xi;
    }
}

/// Writes a symmetric `d × d²` array, evaluating `f` once per sorted index
/// triple so that every permutation holds the identical value.
fn fill_sym3(d: usize, third: &mut [f64], mut f: impl FnMut(usize, usize, usize) -> f64) {
    for a in 0..d {
        for b in a..d {
            for c in b..d {
                let v = f(a, b, c);
                for (i, j, k) in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
                    third[i * d * d + j * d + k] = v;
                }
            }
        }
    }
}

fn linear_predictor(x: &[f64], theta: &[f64]) -> f64 {
    theta[0] + crate::linalg::dot(&theta[1..], x)
}

/// Squared error `½(y − γ − xᵀβ)²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Linear;

impl LossModel for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn dim(&self, p: usize) -> usize {
        p + 1
    }

    fn initial_theta(&self, p: usize) -> Vec<f64> {
        vec![0.0; p + 1]
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite parameter"));
        }
        Ok(())
    }

    fn check_observation(&self, x: &[f64], y: f64) -> Result<()> {
        check_finite(x, y)
    }

    fn eval_into(
        &self,
        x: &[f64],
        y: f64,
        theta: &[f64],
        order: Order,
        out: &mut DerivativeBundle,
    ) -> Result<()> {
        check_len(theta, x, 1)?;
        self.check_theta(theta)?;
        self.check_observation(x, y)?;
        let r = y - linear_predictor(x, theta);
        out.loss = 0.5 * r * r;
        fill_single_index(x, [-r, 1.0, 0.0], order, out);
        Ok(())
    }

    fn gradient_into(&self, x: &[f64], y: f64, theta: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        check_len(theta, x, 1)?;
        self.check_observation(x, y)?;
        let r = y - linear_predictor(x, theta);
        single_index_gradient(x, -r, &mut out.grad);
        Ok(())
    }
}

/// `log(1 + e^η)` without overflow.
pub fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + libm::log1p(libm::exp(-eta.abs()))
}

/// Logistic function evaluated on the side that cannot overflow.
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + libm::exp(-eta))
    } else {
        let e = libm::exp(eta);
        e / (1.0 + e)
    }
}

/// Negative Bernoulli log-likelihood with success probability `σ(γ + xᵀβ)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Logistic;

impl LossModel for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn dim(&self, p: usize) -> usize {
        p + 1
    }

    fn initial_theta(&self, p: usize) -> Vec<f64> {
        vec![0.0; p + 1]
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        Linear.check_theta(theta)
    }

    fn check_observation(&self, x: &[f64], y: f64) -> Result<()> {
        check_finite(x, y)?;
        if y != 0.0 && y != 1.0 {
            return Err(Error::domain("logistic response must be 0 or 1"));
        }
        Ok(())
    }

    fn eval_into(
        &self,
        x: &[f64],
        y: f64,
        theta: &[f64],
        order: Order,
        out: &mut DerivativeBundle,
    ) -> Result<()> {
        check_len(theta, x, 1)?;
        self.check_theta(theta)?;
        self.check_observation(x, y)?;
        let eta = linear_predictor(x, theta);
        // every term below is a function of e = exp(-|η|)
        let e = libm::exp(-eta.abs());
        out.loss = eta.max(0.0) + libm::log1p(e) - y * eta;
        if order >= Order::Gradient {
            let q = 1.0 / (1.0 + e);
            let mu = if eta >= 0.0 { q } else { e * q };
            let var = e * q * q;
            // -tanh(η/2)
            let skew = if order >= Order::Third { -libm::tanh(0.5 * eta) } else { 0.0 };
            fill_single_index(x, [mu - y, var, var * skew], order, out);
        }
        Ok(())
    }

    fn gradient_into(&self, x: &[f64], y: f64, theta: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        check_len(theta, x, 1)?;
        self.check_observation(x, y)?;
        let eta = linear_predictor(x, theta);
        let e = libm::exp(-eta.abs());
        let q = 1.0 / (1.0 + e);
        let mu = if eta >= 0.0 { q } else { e * q };
        single_index_gradient(x, mu - y, &mut out.grad);
        Ok(())
    }
}

/// Weibull accelerated-failure-time negative log-likelihood, see the module
/// docs for the parameterization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Weibull;

impl LossModel for Weibull {
    fn name(&self) -> &'static str {
        "weibull"
    }

    fn dim(&self, p: usize) -> usize {
        p + 2
    }

    fn initial_theta(&self, p: usize) -> Vec<f64> {
        let mut t = vec![0.0; p + 2];
        t[0] = 1.0;
        t
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        Linear.check_theta(theta)?;
        match theta.first() {
            Some(&a) if a > 0.0 => Ok(()),
            Some(_) => Err(Error::domain("Weibull shape must be positive")),
            None => Err(Error::dimension("parameter vector", 2, 0)),
        }
    }

    fn check_observation(&self, x: &[f64], y: f64) -> Result<()> {
        check_finite(x, y)?;
        if y <= 0.0 {
            return Err(Error::domain("Weibull response must be positive"));
        }
        Ok(())
    }

    fn eval_into(
        &self,
        x: &[f64],
        y: f64,
        theta: &[f64],
        order: Order,
        out: &mut DerivativeBundle,
    ) -> Result<()> {
        check_len(theta, x, 2)?;
        self.check_theta(theta)?;
        self.check_observation(x, y)?;
        let d = theta.len();
        let alpha = theta[0];
        let ln_y = libm::log(y);
        let u = ln_y - theta[1];
        let t = alpha * u - crate::linalg::dot(&theta[2..], x);
        let e = libm::exp(t);
        out.loss = -libm::log(alpha) + ln_y - t + e;
        if order < Order::Gradient {
            return Ok(());
        }

        // gradient of t; its Hessian is -1 at (α, γ) and zero elsewhere
        out.work[0] = u;
        out.work[1] = -alpha;
        for (w, xi) in out.work[2..].iter_mut().zip(x) {
            *w = -xi;
        }
        let tg = &out.work;
        for (g, ti) in out.grad.iter_mut().zip(tg) {
            *g = (e - 1.0) * ti;
        }
        out.grad[0] -= 1.0 / alpha;
        if order < Order::Hessian {
            return Ok(());
        }

        let t_hess = |a: usize, b: usize| -> f64 {
            if (a == 0 && b == 1) || (a == 1 && b == 0) {
                -1.0
            } else {
                0.0
            }
        };
        out.hess
            .fill_from_upper(|a, b| e * tg[a] * tg[b] + (e - 1.0) * t_hess(a, b));
        out.hess.set(0, 0, out.hess.get(0, 0) + 1.0 / (alpha * alpha));
        if order < Order::Third {
            return Ok(());
        }

        let third = out.third.as_mut_slice();
        fill_sym3(d, third, |a, b, c| {
            e * (tg[a] * tg[b] * tg[c]
                + t_hess(a, b) * tg[c]
                + t_hess(a, c) * tg[b]
                + t_hess(b, c) * tg[a])
        });
        third[0] -= 2.0 / (alpha * alpha * alpha);
        Ok(())
    }
}

/// Model selection by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Linear,
    Logistic,
    Weibull,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Linear, ModelKind::Logistic, ModelKind::Weibull];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Logistic => "logistic",
            ModelKind::Weibull => "weibull",
        }
    }

    fn inner(&self) -> &'static dyn LossModel {
        match self {
            ModelKind::Linear => &Linear,
            ModelKind::Logistic => &Logistic,
            ModelKind::Weibull => &Weibull,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "logistic" => Ok(ModelKind::Logistic),
            "weibull" => Ok(ModelKind::Weibull),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown model `{other}` (expected linear, logistic or weibull)"
            ))),
        }
    }
}

impl LossModel for ModelKind {
    fn name(&self) -> &'static str {
        self.as_str()
    }

    fn dim(&self, p: usize) -> usize {
        self.inner().dim(p)
    }

    fn initial_theta(&self, p: usize) -> Vec<f64> {
        self.inner().initial_theta(p)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        self.inner().check_theta(theta)
    }

    fn check_observation(&self, x: &[f64], y: f64) -> Result<()> {
        self.inner().check_observation(x, y)
    }

    fn eval_into(
        &self,
        x: &[f64],
        y: f64,
        theta: &[f64],
        order: Order,
        out: &mut DerivativeBundle,
    ) -> Result<()> {
        match self {
            ModelKind::Linear => Linear.eval_into(x, y, theta, order, out),
            ModelKind::Logistic => Logistic.eval_into(x, y, theta, order, out),
            ModelKind::Weibull => Weibull.eval_into(x, y, theta, order, out),
        }
    }

    fn gradient_into(&self, x: &[f64], y: f64, theta: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        match self {
            ModelKind::Linear => Linear.gradient_into(x, y, theta, out),
            ModelKind::Logistic => Logistic.gradient_into(x, y, theta, out),
            ModelKind::Weibull => Weibull.gradient_into(x, y, theta, out),
        }
    }
}

/// Default central-difference step for coordinate value `v`.
pub fn default_step(v: f64) -> f64 {
    1e-5 * (1.0 + v.abs())
}

/// Central-difference derivatives: gradient from the loss, Hessian from the
/// analytic gradient, third tensor from the analytic Hessian. `steps`
/// overrides the per-coordinate step sizes.
pub fn fd_oracle<M: LossModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: f64,
    theta: &[f64],
    steps: Option<&[f64]>,
) -> Result<DerivativeBundle> {
    let d = theta.len();
    let h: Vec<f64> = match steps {
        Some(s) if s.len() == d => s.to_vec(),
        Some(s) => return Err(Error::dimension("finite-difference steps", d, s.len())),
        None => theta.iter().map(|&v| default_step(v)).collect(),
    };
    let shifted = |j: usize, by: f64| -> Vec<f64> {
        let mut t = theta.to_vec();
        t[j] += by;
        t
    };
    for j in 0..d {
        for sign in [-2.0, 2.0] {
            model.check_theta(&shifted(j, sign * h[j])).map_err(|_| {
                Error::domain(String::from("finite-difference stencil leaves the parameter domain"))
            })?;
        }
    }

    let mut out = eval_derivatives(model, x, y, theta, Order::Loss)?;
    let mut hess = Mat::zeros(d, d);
    let mut plus = DerivativeBundle::new(d);
    let mut minus = DerivativeBundle::new(d);
    for j in 0..d {
        let tp = shifted(j, h[j]);
        let tm = shifted(j, -h[j]);
        model.eval_into(x, y, &tp, Order::Hessian, &mut plus)?;
        model.eval_into(x, y, &tm, Order::Hessian, &mut minus)?;
        let inv = 1.0 / (2.0 * h[j]);
        out.grad[j] = (plus.loss - minus.loss) * inv;
        for k in 0..d {
            hess[(k, j)] = (plus.grad[k] - minus.grad[k]) * inv;
        }
        let row = out.third.row_mut(j);
        for (r, (a, b)) in row.iter_mut().zip(
            plus.hess
                .as_mat()
                .as_slice()
                .iter()
                .zip(minus.hess.as_mat().as_slice()),
        ) {
            *r = (a - b) * inv;
        }
    }
    out.hess = SymMat::symmetrize(&hess)?;
    Ok(out)
}

/// Remainder of the third-order Taylor expansion of the loss along `delta`.
/// For a smooth loss it is `O(‖δ‖⁴)`.
pub fn taylor_consistency_check<M: LossModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: f64,
    theta: &[f64],
    delta: &[f64],
) -> Result<f64> {
    let d = theta.len();
    if delta.len() != d {
        return Err(Error::dimension("Taylor step", d, delta.len()));
    }
    let base = eval_derivatives(model, x, y, theta, Order::Third)?;
    let moved: Vec<f64> = theta.iter().zip(delta).map(|(t, s)| t + s).collect();
    let shifted = eval_derivatives(model, x, y, &moved, Order::Loss)?;
    let lin = crate::linalg::dot(&base.grad, delta);
    let hd = base.hess.as_mat().mul_vec(delta)?;
    let quad = 0.5 * crate::linalg::dot(delta, &hd);
    let dd = crate::linalg::kron(delta, delta);
    let md = base.third.mul_vec(&dd)?;
    let cubic = crate::linalg::dot(delta, &md) / 6.0;
    Ok((shifted.loss - base.loss - lin - quad - cubic).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, kron};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: usize = 3;

    /// Random observation and parameter for a model, with responses drawn
    /// from the model itself.
    fn random_case(kind: ModelKind, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, Vec<f64>) {
        let x: Vec<f64> = (0..P).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let mut theta: Vec<f64> = (0..kind.dim(P)).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y = match kind {
            ModelKind::Linear => rng.random::<f64>() * 4.0 - 2.0,
            ModelKind::Logistic => {
                let p = sigmoid(linear_predictor(&x, &theta));
                f64::from(rng.random::<f64>() < p)
            }
            ModelKind::Weibull => {
                theta[0] = 0.4 + 1.6 * rng.random::<f64>();
                let e = -libm::log(1.0 - rng.random::<f64>() * 0.999);
                let w = libm::pow(e, 1.0 / theta[0]);
                w * libm::exp(theta[1] + dot(&theta[2..], &x) / theta[0])
            }
        };
        (x, y, theta)
    }

    #[test]
    fn linear_zero_residual() {
        let b = eval_derivatives(&Linear, &[1.0], 0.0, &[0.0, 0.0], Order::Third).unwrap();
        assert_eq!(b.loss, 0.0);
        assert_eq!(b.grad, vec![0.0, 0.0]);
        assert!(b.third.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logistic_at_zero() {
        let b = eval_derivatives(&Logistic, &[0.0], 1.0, &[0.0, 0.0], Order::Hessian).unwrap();
        assert!((b.loss - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(b.grad, vec![-0.5, 0.0]);
        assert_eq!(b.hess.get(0, 0), 0.25);
    }

    #[test]
    fn logistic_survives_saturation() {
        for eta in [-800.0, -40.0, 40.0, 800.0] {
            for y in [0.0, 1.0] {
                let b = eval_derivatives(&Logistic, &[], y, &[eta], Order::Third).unwrap();
                assert!(b.loss.is_finite() && b.loss >= 0.0);
                assert!(b.grad[0].is_finite());
                assert!(b.hess.get(0, 0) >= 0.0);
                assert!(b.third.as_slice()[0].is_finite());
            }
        }
        let b = eval_derivatives(&Logistic, &[], 0.0, &[800.0], Order::Loss).unwrap();
        assert_eq!(b.loss, 800.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            eval_derivatives(&Weibull, &[0.0], 1.0, &[0.0, 0.0, 0.0], Order::Loss),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            eval_derivatives(&Weibull, &[0.0], -1.0, &[1.0, 0.0, 0.0], Order::Loss),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            eval_derivatives(&Logistic, &[0.0], 0.5, &[0.0, 0.0], Order::Loss),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            fd_oracle(&Weibull, &[0.0], 1.0, &[1e-5, 0.0, 0.0], None),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn model_names_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.as_str().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("probit".parse::<ModelKind>().is_err());
    }

    #[test]
    fn gradient_only_path_matches_full_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in ModelKind::ALL {
            let mut out = DerivativeBundle::new(kind.dim(P));
            for _ in 0..50 {
                let (x, y, theta) = random_case(kind, &mut rng);
                let full = eval_derivatives(&kind, &x, y, &theta, Order::Hessian).unwrap();
                kind.gradient_into(&x, y, &theta, &mut out).unwrap();
                assert_eq!(out.grad, full.grad, "{kind}");
            }
        }
        let mut out = DerivativeBundle::new(3);
        assert!(Logistic.gradient_into(&[0.1, 0.2], 0.5, &[0.0; 3], &mut out).is_err());
        assert!(Linear.gradient_into(&[0.1], 0.5, &[0.0; 3], &mut out).is_err());
    }

    #[test]
    fn fd_is_exact_for_linear_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (x, y, theta) = random_case(ModelKind::Linear, &mut rng);
            let a = eval_derivatives(&Linear, &x, y, &theta, Order::Third).unwrap();
            let f = fd_oracle(&Linear, &x, y, &theta, None).unwrap();
            for (g, h) in a.grad.iter().zip(&f.grad) {
                assert!((g - h).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for kind in ModelKind::ALL {
            let mut worst = [0.0f64; 3];
            for _ in 0..100 {
                let (x, y, theta) = random_case(kind, &mut rng);
                let a = eval_derivatives(&kind, &x, y, &theta, Order::Third).unwrap();
                let f = fd_oracle(&kind, &x, y, &theta, None).unwrap();
                let e = a.relative_errors(&f, 1e-6);
                for k in 0..3 {
                    worst[k] = worst[k].max(e[k]);
                }
            }
            assert!(worst[0] <= 1e-5 && worst[1] <= 1e-5 && worst[2] <= 1e-4, "{kind}: {worst:?}");
            if kind == ModelKind::Logistic {
                assert!(worst[0] <= 1e-6, "{worst:?}");
            }
        }
    }

    #[test]
    fn derivative_arrays_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for kind in ModelKind::ALL {
            for _ in 0..50 {
                let (x, y, theta) = random_case(kind, &mut rng);
                let b = eval_derivatives(&kind, &x, y, &theta, Order::Third).unwrap();
                let d = theta.len();
                for j in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            let t = b.third[(j, k * d + l)];
                            assert_eq!(t, b.third[(j, l * d + k)]);
                            assert_eq!(t, b.third[(k, j * d + l)]);
                        }
                        assert_eq!(b.hess.get(j, k), b.hess.get(k, j));
                    }
                }
            }
        }
    }

    #[test]
    fn third_row_contracts_to_directional_hessian_of_partial() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let eps = 1e-4;
        for kind in [ModelKind::Logistic, ModelKind::Weibull] {
            for _ in 0..20 {
                let (x, y, theta) = random_case(kind, &mut rng);
                let d = theta.len();
                let a: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
                let b = eval_derivatives(&kind, &x, y, &theta, Order::Third).unwrap();
                let contracted = b.third.mul_vec(&kron(&a, &a)).unwrap();
                let at = |s: f64| {
                    let t: Vec<f64> = theta.iter().zip(&a).map(|(t, v)| t + s * v).collect();
                    eval_derivatives(&kind, &x, y, &t, Order::Gradient).unwrap().grad
                };
                let (gp, g0, gm) = (at(eps), at(0.0), at(-eps));
                for j in 0..d {
                    let second = (gp[j] - 2.0 * g0[j] + gm[j]) / (eps * eps);
                    let scale = contracted.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
                    assert!((second - contracted[j]).abs() / scale < 1e-4, "{kind} {j}");
                }
            }
        }
    }

    #[test]
    fn taylor_remainder_is_fourth_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for kind in [ModelKind::Logistic, ModelKind::Weibull] {
            let mut big = 0.0;
            let mut small = 0.0;
            for _ in 0..100 {
                let (x, y, theta) = random_case(kind, &mut rng);
                let dir: Vec<f64> = (0..theta.len()).map(|_| rng.random::<f64>() - 0.5).collect();
                let n = crate::linalg::norm2(&dir);
                let delta: Vec<f64> = dir.iter().map(|v| 1e-2 * v / n).collect();
                let half: Vec<f64> = delta.iter().map(|v| 0.5 * v).collect();
                big += taylor_consistency_check(&kind, &x, y, &theta, &delta).unwrap();
                small += taylor_consistency_check(&kind, &x, y, &theta, &half).unwrap();
            }
            let ratio = big / small;
            assert!((12.0..=20.0).contains(&ratio), "{kind}: {ratio}");
        }
    }

    #[test]
    fn taylor_remainder_vanishes_for_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..20 {
            let (x, y, theta) = random_case(ModelKind::Linear, &mut rng);
            let delta: Vec<f64> = (0..theta.len()).map(|_| 1e-2 * (rng.random::<f64>() - 0.5)).collect();
            assert!(taylor_consistency_check(&Linear, &x, y, &theta, &delta).unwrap() < 1e-14);
        }
    }

    #[test]
    fn logistic_hessian_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let (x, y, theta) = random_case(ModelKind::Logistic, &mut rng);
            let b = eval_derivatives(&Logistic, &x, y, &theta, Order::Hessian).unwrap();
            let eig = b.hess.as_mat().to_dmatrix().symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l >= -1e-10));
        }
    }
}
