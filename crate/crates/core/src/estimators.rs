//! Point estimators: full-data Newton–Raphson, the uniform-subsample
//! M-estimator and its one-step (SOS) correction.
//!
//! Subsample sums are averaged over the realized subsample size `|S|`; the
//! expected size `n` only enters the rate constants in [`crate::inference`].

use alloc::vec::Vec;

use rand::Rng;

use crate::data::{collect_rows, Chunk, Dataset, Table};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, norm2, norm_inf, Kahan, KahanVec, LuFactor, SymMat};
use crate::models::{DerivativeBundle, LossModel, Order};

/// Bernoulli subsample: row `i` is kept independently with probability
/// `expected_n / big_n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsampleDraw {
    /// Strictly increasing row ids.
    pub indices: Vec<usize>,
    pub expected_n: usize,
    pub big_n: usize,
}

impl SubsampleDraw {
    pub fn realized_m(&self) -> usize {
        self.indices.len()
    }

    /// The whole data set, as drawn at rate one.
    pub fn full(big_n: usize) -> Self {
        SubsampleDraw {
            indices: (0..big_n).collect(),
            expected_n: big_n,
            big_n,
        }
    }

    pub fn rate(&self) -> f64 {
        self.expected_n as f64 / self.big_n as f64
    }
}

fn check_rate(expected_n: usize, big_n: usize) -> Result<()> {
    if expected_n == 0 || expected_n > big_n {
        return Err(Error::InvalidRate {
            expected_n,
            rows: big_n,
        });
    }
    Ok(())
}

/// Draws one uniform `u` per row in order and keeps row `i` when
/// `u < expected_n / big_n`.
pub fn draw_subsample<R: Rng + ?Sized>(
    rng: &mut R,
    big_n: usize,
    expected_n: usize,
) -> Result<SubsampleDraw> {
    check_rate(expected_n, big_n)?;
    let rate = expected_n as f64 / big_n as f64;
    let indices = (0..big_n).filter(|_| rng.random::<f64>() < rate).collect();
    Ok(SubsampleDraw {
        indices,
        expected_n,
        big_n,
    })
}

/// One-pass version of [`draw_subsample`] for sources whose length is only
/// known at the end. Consumes the same uniforms in the same order, so for a
/// given seed the selected rows are identical.
///
/// A row is retained while its uniform is below `expected_n / rows_seen`,
/// which can only shrink, so memory stays near `expected_n · ln(N/n)` rows
/// at worst and close to `2·expected_n` after pruning.
#[derive(Clone, Debug)]
pub struct StreamingDraw {
    expected_n: usize,
    seen: usize,
    candidates: Vec<(usize, f64)>,
    rows: Table,
    next_prune: usize,
}

impl StreamingDraw {
    pub fn new(p: usize, expected_n: usize) -> Self {
        StreamingDraw {
            expected_n,
            seen: 0,
            candidates: Vec::new(),
            rows: Table::with_capacity(p, 0),
            next_prune: 4 * expected_n.max(1),
        }
    }

    pub fn rows_seen(&self) -> usize {
        self.seen
    }

    /// Offers the next row of the source.
    pub fn offer<R: Rng + ?Sized>(&mut self, rng: &mut R, x: &[f64], y: f64) -> Result<()> {
        let u: f64 = rng.random();
        let i = self.seen;
        self.seen += 1;
        if u < self.expected_n as f64 / self.seen as f64 {
            self.candidates.push((i, u));
            self.rows.push(x, y)?;
            if self.candidates.len() >= self.next_prune {
                self.prune();
                self.next_prune = (2 * self.candidates.len()).max(4 * self.expected_n.max(1));
            }
        }
        Ok(())
    }

    fn prune(&mut self) {
        let rate = self.expected_n as f64 / self.seen as f64;
        self.retain(|u| u < rate);
    }

    fn retain(&mut self, keep: impl Fn(f64) -> bool) {
        let mut rows = Table::with_capacity(self.rows.covariates(), self.candidates.len());
        let mut kept = Vec::with_capacity(self.candidates.len());
        for (k, &(i, u)) in self.candidates.iter().enumerate() {
            if keep(u) {
                let (x, y) = self.rows.row(k);
                rows.push(x, y).expect("row width is fixed");
                kept.push((i, u));
            }
        }
        self.candidates = kept;
        self.rows = rows;
    }

    /// Applies the final rate `expected_n / rows_seen` and returns the draw
    /// together with the selected rows.
    pub fn finish(mut self) -> Result<Subsample> {
        check_rate(self.expected_n, self.seen)?;
        self.prune();
        Ok(Subsample {
            draw: SubsampleDraw {
                indices: self.candidates.iter().map(|&(i, _)| i).collect(),
                expected_n: self.expected_n,
                big_n: self.seen,
            },
            rows: self.rows,
        })
    }
}

/// A draw together with its rows, held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Subsample {
    pub draw: SubsampleDraw,
    pub rows: Table,
}

impl Subsample {
    pub fn collect<D: Dataset + ?Sized>(data: &D, draw: SubsampleDraw) -> Result<Self> {
        let rows = collect_rows(data, &draw.indices)?;
        Ok(Subsample { draw, rows })
    }

    pub fn realized_m(&self) -> usize {
        self.draw.realized_m()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Converged once the mean-gradient norm is at most this.
    pub grad_tol: f64,
    /// ...and the Newton step's largest component is at most this.
    pub step_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            grad_tol: 1e-8,
            step_tol: 1e-6,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::InvalidArgument("Newton tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonFit {
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// Euclidean norm of the mean gradient at the last iterate before the
    /// final Newton step; the gradient at `theta` is smaller still.
    pub grad_norm: f64,
}

/// Per-row sums from one pass, compensated for the loss and gradient.
#[derive(Clone, Debug)]
pub struct PassSums {
    pub rows: usize,
    loss: Kahan,
    grad: KahanVec,
    hess: SymMat,
}

impl PassSums {
    pub fn new(d: usize) -> Self {
        PassSums {
            rows: 0,
            loss: Kahan::default(),
            grad: KahanVec::new(d),
            hess: SymMat::zeros(d),
        }
    }

    fn add_block(&mut self, rows: usize, loss: f64, grad: &[f64], order: Order) {
        self.rows += rows;
        self.loss.add(loss);
        if order >= Order::Gradient {
            self.grad.add(grad);
        }
    }

    /// Folds in the sums of a later block of rows. Merging a fixed sequence
    /// of blocks in order gives the same result however they were computed.
    pub fn merge(&mut self, other: &PassSums) {
        self.rows += other.rows;
        self.loss.add(other.loss.total());
        self.grad.add(&other.grad.total());
        self.hess.add_upper(&other.hess);
    }

    fn inv_rows(&self) -> Result<f64> {
        if self.rows == 0 {
            return Err(Error::EmptyInput("data set has no rows"));
        }
        Ok(1.0 / self.rows as f64)
    }

    pub fn mean_loss(&self) -> Result<f64> {
        Ok(self.loss.total() * self.inv_rows()?)
    }

    pub fn mean_grad(&self) -> Result<Vec<f64>> {
        let c = self.inv_rows()?;
        Ok(self.grad.total().into_iter().map(|g| g * c).collect())
    }

    pub fn mean_hess(&self) -> Result<SymMat> {
        let mut h = self.hess.clone();
        h.mirror_upper();
        h.scale(self.inv_rows()?);
        Ok(h)
    }
}

const BLOCK_ROWS: usize = 256;

/// Sums over one chunk. Errors name the global row.
pub fn chunk_sums<M: LossModel + ?Sized>(
    model: &M,
    chunk: Chunk<'_>,
    theta: &[f64],
    order: Order,
) -> Result<PassSums> {
    let d = theta.len();
    let mut sums = PassSums::new(d);
    let mut bundle = DerivativeBundle::new(d);
    // plain sums over short blocks, compensated across blocks
    let mut loss = 0.0;
    let mut grad = alloc::vec![0.0; d];
    for (b, start) in (0..chunk.rows()).step_by(BLOCK_ROWS).enumerate() {
        let end = (start + BLOCK_ROWS).min(chunk.rows());
        if b > 0 {
            loss = 0.0;
            grad.fill(0.0);
        }
        for i in start..end {
            let (x, y) = chunk.row(i);
            model
                .eval_into(x, y, theta, order, &mut bundle)
                .map_err(|e| e.at_row(chunk.first_row + i))?;
            loss += bundle.loss;
            if order >= Order::Gradient {
                for (s, v) in grad.iter_mut().zip(&bundle.grad) {
                    *s += v;
                }
            }
            if order >= Order::Hessian {
                sums.hess.add_upper(&bundle.hess);
            }
        }
        sums.add_block(end - start, loss, &grad, order);
    }
    Ok(sums)
}

/// Sequential pass: chunk sums merged in row order.
pub fn pass_sums<M: LossModel + ?Sized, D: Dataset + ?Sized>(
    model: &M,
    data: &D,
    theta: &[f64],
    order: Order,
) -> Result<PassSums> {
    let d = model.dim(data.covariates());
    if theta.len() != d {
        return Err(Error::dimension("parameter vector", d, theta.len()));
    }
    let mut total = PassSums::new(d);
    data.for_each_chunk(&mut |c| {
        total.merge(&chunk_sums(model, c, theta, order)?);
        Ok(())
    })?;
    Ok(total)
}

/// Compensated gradient sum over a run of rows.
#[derive(Clone, Debug)]
pub struct GradientSums {
    pub rows: usize,
    grad: KahanVec,
}

impl GradientSums {
    pub fn new(d: usize) -> Self {
        GradientSums {
            rows: 0,
            grad: KahanVec::new(d),
        }
    }

    /// Folds in the sums of a later block of rows.
    pub fn merge(&mut self, other: &GradientSums) {
        self.rows += other.rows;
        self.grad.add(&other.grad.total());
    }

    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.rows == 0 {
            return Err(Error::EmptyInput("data set has no rows"));
        }
        let c = 1.0 / self.rows as f64;
        Ok(self.grad.total().into_iter().map(|g| g * c).collect())
    }
}

/// Gradient sum over one chunk. `theta` must already satisfy
/// [`LossModel::check_theta`].
pub fn chunk_gradient<M: LossModel + ?Sized>(model: &M, chunk: Chunk<'_>, theta: &[f64]) -> Result<GradientSums> {
    let d = theta.len();
    let mut sums = GradientSums::new(d);
    let mut bundle = DerivativeBundle::new(d);
    let mut block = alloc::vec![0.0; d];
    for start in (0..chunk.rows()).step_by(BLOCK_ROWS) {
        let end = (start + BLOCK_ROWS).min(chunk.rows());
        block.fill(0.0);
        for i in start..end {
            let (x, y) = chunk.row(i);
            model
                .gradient_into(x, y, theta, &mut bundle)
                .map_err(|e| e.at_row(chunk.first_row + i))?;
            for (s, v) in block.iter_mut().zip(&bundle.grad) {
                *s += v;
            }
        }
        sums.rows += end - start;
        sums.grad.add(&block);
    }
    Ok(sums)
}

/// `N⁻¹ Σ ∇L(Zᵢ; θ)` in one streaming pass.
pub fn full_gradient_mean<M: LossModel + ?Sized, D: Dataset + ?Sized>(
    model: &M,
    data: &D,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let d = model.dim(data.covariates());
    if theta.len() != d {
        return Err(Error::dimension("parameter vector", d, theta.len()));
    }
    model.check_theta(theta)?;
    let mut total = GradientSums::new(d);
    data.for_each_chunk(&mut |c| {
        total.merge(&chunk_gradient(model, c, theta)?);
        Ok(())
    })?;
    total.mean()
}

/// Newton direction `−H⁻¹g`, falling back to a damped `−(H + λI)⁻¹g` when
/// the plain step is not a descent direction.
fn newton_direction(h: &SymMat, g: &[f64]) -> Result<Vec<f64>> {
    let plain = LuFactor::new(h.as_mat()).and_then(|lu| lu.solve(g));
    match plain {
        Ok(step) if dot(&step, g) > 0.0 => return Ok(step.into_iter().map(|v| -v).collect()),
        Ok(_) => {}
        Err(Error::SingularMatrix { .. }) => return Err(Error::SingularHessian),
        Err(e) => return Err(e),
    }
    let mut lambda = 1e-3 * h.max_diag().max(1e-12);
    for _ in 0..40 {
        let mut damped = h.clone();
        for i in 0..h.dim() {
            damped.set(i, i, h.get(i, i) + lambda);
        }
        if let Some(l) = cholesky(&damped) {
            return Ok(cholesky_solve(&l, g).into_iter().map(|v| -v).collect());
        }
        lambda *= 10.0;
    }
    Err(Error::SingularHessian)
}

/// Newton–Raphson with step halving on the mean loss over `data`. The
/// reported `grad_norm` is measured before the final, undamped step.
pub fn newton<M: LossModel + ?Sized, D: Dataset + ?Sized>(
    model: &M,
    data: &D,
    init: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonFit> {
    newton_with(model, |theta, order| pass_sums(model, data, theta, order), init, opts)
}

/// [`newton`] over any source of pass sums, e.g. a parallel pass.
pub fn newton_with<M, F>(model: &M, mut pass: F, init: &[f64], opts: &NewtonOptions) -> Result<NewtonFit>
where
    M: LossModel + ?Sized,
    F: FnMut(&[f64], Order) -> Result<PassSums>,
{
    opts.validate()?;
    model.check_theta(init)?;
    let mut theta = init.to_vec();
    let mut sums = pass(&theta, Order::Hessian)?;
    let mut grad_norm = f64::NAN;
    for iter in 0..opts.max_iter {
        let loss = sums.mean_loss()?;
        let g = sums.mean_grad()?;
        grad_norm = norm2(&g);
        if !grad_norm.is_finite() {
            break;
        }
        let step = match newton_direction(&sums.mean_hess()?, &g) {
            Ok(step) => step,
            // curvature that vanishes along the path means the minimizer is
            // not attained, e.g. separated logistic data
            Err(Error::SingularHessian) if iter > 0 => {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    grad_norm,
                })
            }
            Err(e) => return Err(e),
        };
        if grad_norm <= opts.grad_tol && norm_inf(&step) <= opts.step_tol {
            // the last step is already paid for; take it without another pass
            let polished: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + s).collect();
            if model.check_theta(&polished).is_ok() {
                theta = polished;
            }
            return Ok(NewtonFit {
                theta,
                iterations: iter,
                grad_norm,
            });
        }

        let slack = 1e-13 * loss.abs().max(1e-300);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            if model.check_theta(&cand).is_ok() {
                let next = pass(&cand, Order::Hessian);
                match next {
                    Ok(next) if next.mean_loss()? <= loss + slack => {
                        accepted = Some((cand, next));
                        break;
                    }
                    Ok(_) | Err(Error::Domain { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, next)) => {
                theta = cand;
                sums = next;
            }
            None => break,
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        grad_norm,
    })
}

/// Newton–Raphson on the full data.
pub fn fit_full_newton<M: LossModel + ?Sized, D: Dataset + ?Sized>(
    model: &M,
    data: &D,
    init: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonFit> {
    newton(model, data, init, opts)
}

/// Minimizer of the mean loss over the subsample rows.
pub fn fit_uniform<M: LossModel + ?Sized>(
    model: &M,
    subsample: &Subsample,
    init: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonFit> {
    let d = model.dim(subsample.rows.covariates());
    if subsample.realized_m() < d + 1 {
        return Err(Error::SubsampleTooSmall {
            realized: subsample.realized_m(),
            required: d + 1,
        });
    }
    newton(model, &subsample.rows, init, opts)
}

/// Subsample mean Hessian `|S|⁻¹ Σ_S ∇²L(Zᵢ; θ)`.
pub fn subsample_hessian<M: LossModel + ?Sized>(
    model: &M,
    subsample: &Subsample,
    theta: &[f64],
) -> Result<SymMat> {
    pass_sums(model, &subsample.rows, theta, Order::Hessian)?.mean_hess()
}

/// Uniform fit plus its one-step correction.
#[derive(Clone, Debug, PartialEq)]
pub struct SosFit {
    pub theta_uni: Vec<f64>,
    pub theta_sos: Vec<f64>,
    /// Subsample mean Hessian at `theta_uni`.
    pub h_tilde: SymMat,
    pub subsample: Subsample,
    /// Full-data mean gradient at `theta_uni`.
    pub full_grad_at_uni: Vec<f64>,
    pub uni_iterations: usize,
}

impl SosFit {
    /// Applies `θ_SOS = θ_uni − H̃⁻¹ ḡ` given the uniform fit and the
    /// full-data mean gradient at it.
    pub fn from_parts<M: LossModel + ?Sized>(
        model: &M,
        subsample: Subsample,
        uni: NewtonFit,
        full_grad_at_uni: Vec<f64>,
    ) -> Result<Self> {
        if full_grad_at_uni.len() != uni.theta.len() {
            return Err(Error::dimension(
                "full-data gradient",
                uni.theta.len(),
                full_grad_at_uni.len(),
            ));
        }
        let h_tilde = subsample_hessian(model, &subsample, &uni.theta)?;
        let delta = LuFactor::new(h_tilde.as_mat())
            .and_then(|lu| lu.solve(&full_grad_at_uni))
            .map_err(|e| match e {
                Error::SingularMatrix { .. } => Error::SingularHessian,
                e => e,
            })?;
        let theta_sos = uni.theta.iter().zip(&delta).map(|(t, s)| t - s).collect();
        Ok(SosFit {
            theta_uni: uni.theta,
            theta_sos,
            h_tilde,
            subsample,
            full_grad_at_uni,
            uni_iterations: uni.iterations,
        })
    }

    pub fn expected_n(&self) -> usize {
        self.subsample.draw.expected_n
    }

    pub fn big_n(&self) -> usize {
        self.subsample.draw.big_n
    }

    pub fn realized_m(&self) -> usize {
        self.subsample.realized_m()
    }
}

/// Collects the subsample, fits it from the model's default start and
/// applies the one-step correction with one pass over `data`.
pub fn fit_sos<M: LossModel + ?Sized, D: Dataset + ?Sized>(
    model: &M,
    data: &D,
    draw: SubsampleDraw,
    opts: &NewtonOptions,
) -> Result<SosFit> {
    let subsample = Subsample::collect(data, draw)?;
    let init = model.initial_theta(data.covariates());
    let uni = fit_uniform(model, &subsample, &init, opts)?;
    let grad = full_gradient_mean(model, data, &uni.theta)?;
    SosFit::from_parts(model, subsample, uni, grad)
}
