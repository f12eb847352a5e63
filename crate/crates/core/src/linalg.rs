//! Small dense kernels: row-major matrices, Kronecker products, upper-triangle
//! vectorization, PSD factorization with repair, Gaussian sampling, quantiles
//! and linear solves.
//!
//! Every matrix here is row-major. `kron(a, b)[i * len(b) + j] = a[i] * b[j]`,
//! and row `j` of a third-derivative matrix is the row-major vec of a `d x d`
//! block, so `M * (a ⊗ a)` contracts each block as `aᵀ B_j a`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension("matrix entries", rows * cols, data.len()));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dimension("matrix-vector product", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::dimension("matrix product", self.cols, other.rows));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other`, shapes must agree.
    pub fn add_scaled(&mut self, c: f64, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Square matrix that is exactly symmetric. All mutation goes through methods
/// that write both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        SymMat(Mat::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMat(Mat::identity(dim))
    }

    /// Build from the upper triangle; `f` is only called with `i <= j`.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMat(m)
    }

    /// Overwrites every entry from the upper triangle; `f` sees `i <= j`.
    pub fn fill_from_upper(&mut self, mut f: impl FnMut(usize, usize) -> f64) {
        let d = self.dim();
        for i in 0..d {
            for j in i..d {
                let v = f(i, j);
                self.0[(i, j)] = v;
                self.0[(j, i)] = v;
            }
        }
    }

    /// Accepts only matrices that are already exactly symmetric.
    pub fn try_from_mat(m: Mat) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::dimension("symmetric matrix", m.rows, m.cols));
        }
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMat(m))
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrize(m: &Mat) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::dimension("symmetric matrix", m.rows, m.cols));
        }
        Ok(SymMat::from_upper_fn(m.rows, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
        self.0[(j, i)] = v;
    }

    /// `self += c * w wᵀ`.
    pub fn add_outer(&mut self, c: f64, w: &[f64]) {
        let d = self.dim();
        debug_assert_eq!(w.len(), d);
        for i in 0..d {
            let cwi = c * w[i];
            for j in i..d {
                let v = self.0[(i, j)] + cwi * w[j];
                self.0[(i, j)] = v;
                self.0[(j, i)] = v;
            }
        }
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &SymMat) {
        self.0.add_scaled(c, &other.0);
    }

    /// Adds the upper triangle of `other` and leaves the lower one stale;
    /// [`SymMat::mirror_upper`] restores symmetry.
    pub(crate) fn add_upper(&mut self, other: &SymMat) {
        let d = self.dim();
        let (a, b) = (&mut self.0.data, &other.0.data);
        for i in 0..d {
            let row = i * d;
            for (s, v) in a[row + i..row + d].iter_mut().zip(&b[row + i..row + d]) {
                *s += v;
            }
        }
    }

    pub(crate) fn mirror_upper(&mut self) {
        let d = self.dim();
        for i in 0..d {
            for j in 0..i {
                self.0.data[i * d + j] = self.0.data[j * d + i];
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.0.scale(c);
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.dim()).fold(0.0, |m, i| m.max(self.get(i, i)))
    }
}

impl Index<(usize, usize)> for SymMat {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Kronecker product of two vectors, `out[i * b.len() + j] = a[i] * b[j]`.
pub fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &ai in a {
        out.extend(b.iter().map(|bj| ai * bj));
    }
    out
}

/// Length of the upper-triangle vectorization of a `d x d` matrix.
pub const fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Upper triangle (diagonal included), row by row.
pub fn vech_upper(a: &SymMat) -> Vec<f64> {
    let d = a.dim();
    let mut out = Vec::with_capacity(vech_len(d));
    for i in 0..d {
        out.extend_from_slice(&a.as_mat().row(i)[i..]);
    }
    out
}

/// Inverse of [`vech_upper`].
pub fn sym_from_vech(v: &[f64], d: usize) -> Result<SymMat> {
    if v.len() != vech_len(d) {
        return Err(Error::dimension("vech length", vech_len(d), v.len()));
    }
    let mut it = v.iter();
    Ok(SymMat::from_upper_fn(d, |_, _| *it.next().unwrap()))
}

/// Jitter ladder used by [`chol_psd`] once eigenvalue clipping has run.
#[derive(Clone, Debug, PartialEq)]
pub struct JitterPolicy {
    /// Base jitter as a fraction of the largest diagonal entry.
    pub relative: f64,
    /// Multipliers of the base jitter tried in order.
    pub ladder: [f64; 3],
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            relative: 1e-10,
            ladder: [1.0, 10.0, 100.0],
        }
    }
}

/// What [`chol_psd`] had to do to obtain a factor.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdRepair {
    pub min_eigenvalue: f64,
    pub clipped: usize,
    pub jitter: f64,
    /// The matrix that was actually factored.
    pub repaired: SymMat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsdFactor {
    /// Lower triangular, `L Lᵀ` reproduces the input (or its repair).
    pub lower: Mat,
    pub repair: Option<PsdRepair>,
}

fn try_cholesky(m: &Mat) -> Option<Mat> {
    let chol = m.to_dmatrix().cholesky()?;
    let l = chol.l();
    let out = Mat::from_dmatrix(&l);
    out.is_finite().then_some(out)
}

/// Cholesky factor of an approximately PSD matrix. If the plain factorization
/// fails, negative eigenvalues are clipped to zero and a diagonal jitter from
/// `policy` is added before retrying.
pub fn chol_psd(v: &SymMat, policy: &JitterPolicy) -> Result<PsdFactor> {
    let d = v.dim();
    if !v.as_mat().is_finite() {
        return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
    }
    if v.as_mat().max_abs() == 0.0 {
        return Ok(PsdFactor {
            lower: Mat::zeros(d, d),
            repair: None,
        });
    }
    if let Some(lower) = try_cholesky(v.as_mat()) {
        return Ok(PsdFactor {
            lower,
            repair: None,
        });
    }

    let eig = v.as_mat().to_dmatrix().symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let clipped = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    let q = &eig.eigenvectors;
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let clipped_mat = SymMat::from_upper_fn(d, |i, j| {
        (0..d).map(|k| q[(i, k)] * lambda[k] * q[(j, k)]).sum()
    });

    let scale = v.max_diag().max(v.as_mat().max_abs());
    let base = policy.relative * scale;
    for mult in policy.ladder {
        let jitter = base * mult;
        let mut candidate = clipped_mat.clone();
        for i in 0..d {
            candidate.set(i, i, candidate.get(i, i) + jitter);
        }
        if let Some(lower) = try_cholesky(candidate.as_mat()) {
            return Ok(PsdFactor {
                lower,
                repair: Some(PsdRepair {
                    min_eigenvalue,
                    clipped,
                    jitter,
                    repaired: candidate,
                }),
            });
        }
    }
    Err(Error::NotPsd { min_eigenvalue })
}

/// Draws `N(0, V)` vectors from a precomputed lower factor.
#[derive(Clone, Debug)]
pub struct MvnSampler {
    factor: PsdFactor,
    scratch: Vec<f64>,
}

impl MvnSampler {
    pub fn new(v: &SymMat, policy: &JitterPolicy) -> Result<Self> {
        let factor = chol_psd(v, policy)?;
        let d = v.dim();
        Ok(MvnSampler {
            factor,
            scratch: vec![0.0; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.scratch.len()
    }

    pub fn factor(&self) -> &PsdFactor {
        &self.factor
    }

    /// Fills `out` with one draw. Consumes exactly `dim` standard normals.
    pub fn sample_into<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(out.len(), d);
        for z in self.scratch.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let l = &self.factor.lower;
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&l.row(i)[..=i], &self.scratch[..=i]);
        }
    }
}

/// `count` i.i.d. rows from `N(0, V)`.
pub fn mvn_sample<R: Rng + ?Sized>(rng: &mut R, v: &SymMat, count: usize) -> Result<Mat> {
    let mut sampler = MvnSampler::new(v, &JitterPolicy::default())?;
    let d = v.dim();
    let mut out = Mat::zeros(count, d);
    for i in 0..count {
        sampler.sample_into(rng, out.row_mut(i));
    }
    Ok(out)
}

/// Quantile by linear interpolation between order statistics at zero-based
/// position `p * (len - 1)`.
pub fn empirical_quantile(xs: &[f64], p: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("quantile sample"));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Same as [`empirical_quantile`] on data that is already sorted ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput("quantile sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(alloc::format!(
            "quantile probability {p} outside [0, 1]"
        )));
    }
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("quantile sample has non-finite values".into()));
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Relative pivot threshold below which a matrix is treated as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// LU factorization with partial pivoting, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct LuFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    dim: usize,
}

impl LuFactor {
    pub fn new(a: &Mat) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::dimension("square matrix", a.rows(), a.cols()));
        }
        if !a.is_finite() {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        let scale = a.max_abs();
        let lu = a.to_dmatrix().lu();
        let u = lu.u();
        let pivot = (0..a.rows()).fold(f64::INFINITY, |m, i| m.min(u[(i, i)].abs()));
        if a.rows() > 0 && (scale == 0.0 || pivot < SINGULAR_PIVOT * scale) {
            return Err(Error::SingularMatrix { pivot, scale });
        }
        Ok(LuFactor { lu, dim: a.rows() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        if b.len() != self.dim {
            return Err(Error::dimension("right-hand side", self.dim, b.len()));
        }
        let mut rhs = DVector::from_column_slice(b);
        if !self.lu.solve_mut(&mut rhs) {
            return Err(Error::SingularMatrix {
                pivot: 0.0,
                scale: 0.0,
            });
        }
        b.copy_from_slice(rhs.as_slice());
        Ok(())
    }
}

/// Solves `A x = b` without forming an inverse.
pub fn solve_linear(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    LuFactor::new(a)?.solve(b)
}

/// Lower Cholesky factor for a strictly positive definite matrix, `None`
/// otherwise.
pub fn cholesky(a: &SymMat) -> Option<Mat> {
    try_cholesky(a.as_mat())
}

/// Solves `(L Lᵀ) x = b` given a lower Cholesky factor.
pub fn cholesky_solve(lower: &Mat, b: &[f64]) -> Vec<f64> {
    let d = lower.rows();
    let mut y = b.to_vec();
    for i in 0..d {
        let s = dot(&lower.row(i)[..i], &y[..i]);
        y[i] = (y[i] - s) / lower[(i, i)];
    }
    for i in (0..d).rev() {
        let s: f64 = ((i + 1)..d).map(|k| lower[(k, i)] * y[k]).sum();
        y[i] = (y[i] - s) / lower[(i, i)];
    }
    y
}

/// Compensated (Neumaier) running sums for a fixed-length vector.
#[derive(Clone, Debug)]
pub struct KahanVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanVec {
    pub fn new(len: usize) -> Self {
        KahanVec {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    pub fn add(&mut self, values: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    pub fn add_scaled(&mut self, c: f64, values: &[f64]) {
        for ((s, k), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            let v = c * v;
            let t = *s + v;
            if s.abs() >= v.abs() {
                *k += (*s - t) + v;
            } else {
                *k += (v - t) + *s;
            }
            *s = t;
        }
    }

    pub fn total(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }
}

/// Scalar Neumaier sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}
