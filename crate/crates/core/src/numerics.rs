//! Gaussian algebra, sigma points, resampling and the seeded random stream
//! shared by every other module. All arithmetic is `f64`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinematic state `[px, py, vx, vy]` (m, m, m/s, m/s).
pub type StateVec = Vector4<f64>;
pub type StateCov = Matrix4<f64>;
pub const STATE_DIM: usize = 4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean and covariance of a multivariate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cov.nrows().max(cov.ncols()),
            });
        }
        Ok(Self { mean, cov })
    }

    pub fn from_state(mean: &StateVec, cov: &StateCov) -> Self {
        Self {
            mean: DVector::from_column_slice(mean.as_slice()),
            cov: DMatrix::from_column_slice(4, 4, cov.as_slice()),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The leading four entries as a kinematic state.
    pub fn state_mean(&self) -> StateVec {
        StateVec::from_iterator(self.mean.iter().take(4).copied())
    }

    pub fn state_cov(&self) -> StateCov {
        self.cov.fixed_view::<4, 4>(0, 0).into_owned()
    }
}

/// Weighted particle representation of a kinematic state density.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<StateVec>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn uniform(particles: Vec<StateVec>) -> Self {
        let n = particles.len();
        let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        Self {
            particles,
            weights: vec![w; n],
        }
    }

    /// Draws `n` equally weighted particles from `N(mean, cov)`.
    pub fn sample(mean: &StateVec, cov: &StateCov, n: usize, rng: &mut Rng) -> Result<Self> {
        let l = cholesky4(cov)?;
        let particles = (0..n)
            .map(|_| {
                let e = StateVec::new(rng.normal(), rng.normal(), rng.normal(), rng.normal());
                mean + l * e
            })
            .collect();
        Ok(Self::uniform(particles))
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Weighted mean (the MMSE estimate).
    pub fn mean(&self) -> StateVec {
        let total: f64 = self.weights.iter().sum();
        let mut m = StateVec::zeros();
        for (x, w) in self.particles.iter().zip(&self.weights) {
            m += x * *w;
        }
        if total > 0.0 {
            m / total
        } else {
            m
        }
    }

    /// Weighted covariance about the weighted mean.
    pub fn covariance(&self) -> StateCov {
        let total: f64 = self.weights.iter().sum();
        let m = self.mean();
        let mut c = StateCov::zeros();
        for (x, w) in self.particles.iter().zip(&self.weights) {
            let d = x - m;
            c += d * d.transpose() * *w;
        }
        if total > 0.0 {
            c /= total;
        }
        symmetrize4(&c)
    }

    pub fn effective_size(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        if s2 > 0.0 {
            s * s / s2
        } else {
            0.0
        }
    }
}

/// Scaling parameters of the unscented transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UtParams {
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub weights_mean: Vec<f64>,
    pub weights_cov: Vec<f64>,
}

impl SigmaPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> DVector<f64> {
        let n = self.points[0].len();
        let mut m = DVector::zeros(n);
        for (p, w) in self.points.iter().zip(&self.weights_mean) {
            m.axpy(*w, p, 1.0);
        }
        m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let n = m.len();
        let mut c = DMatrix::zeros(n, n);
        for (p, w) in self.points.iter().zip(&self.weights_cov) {
            let d = p - &m;
            c.ger(*w, &d, &d, 1.0);
        }
        c
    }
}

/// Seeded, counter-based random stream (ChaCha8).
///
/// Identical seed and call sequence always give an identical stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from `seed`, selected by `stream`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn poisson(&mut self, mean: f64) -> usize {
        if mean <= 0.0 {
            return 0;
        }
        let d = Poisson::new(mean).expect("positive Poisson mean");
        let k: f64 = d.sample(&mut self.inner);
        k as usize
    }

    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        Beta::new(a, b)
            .expect("valid Beta shape")
            .sample(&mut self.inner)
    }
}

fn symmetric_within(c: &DMatrix<f64>, rel: f64) -> bool {
    let scale = c.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let n = c.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (c[(i, j)] - c[(j, i)]).abs() > rel * scale {
                return false;
            }
        }
    }
    true
}

fn try_cholesky(c: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    let n = c.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = c[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = 0.5 * (c[(i, j)] + c[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Lower-triangular Cholesky factor with one jitter retry.
///
/// The retry adds `1e-9 * trace(C) / n` to the diagonal. The zero matrix
/// factors to the zero matrix.
pub fn cholesky(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    if c.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: c.ncols(),
        });
    }
    if !symmetric_within(c, 1e-9) {
        return Err(Error::NotPositiveDefinite);
    }
    if c.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    if let Some(l) = try_cholesky(c, 0.0) {
        return Ok(l);
    }
    let jitter = 1e-9 * c.trace() / n as f64;
    if jitter > 0.0 {
        if let Some(l) = try_cholesky(c, jitter) {
            return Ok(l);
        }
    }
    Err(Error::NotPositiveDefinite)
}

pub fn cholesky4(c: &StateCov) -> Result<StateCov> {
    let d = DMatrix::from_column_slice(4, 4, c.as_slice());
    let l = cholesky(&d)?;
    Ok(StateCov::from_column_slice(l.as_slice()))
}

pub fn symmetrize4(c: &StateCov) -> StateCov {
    (c + c.transpose()) * 0.5
}

/// `log N(x; g.mean, g.cov)`.
pub fn gaussian_logpdf(x: &DVector<f64>, g: &GaussianState) -> Result<f64> {
    let n = g.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let l = cholesky(&g.cov)?;
    if (0..n).any(|i| l[(i, i)] == 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let d = x - &g.mean;
    let y = l
        .solve_lower_triangular(&d)
        .ok_or(Error::NotPositiveDefinite)?;
    let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    Ok(-0.5 * y.dot(&y) - log_det_half - 0.5 * n as f64 * LN_2PI)
}

/// Systematic resampling: one uniform offset, `n` evenly spaced pointers.
pub fn systematic_resample(weights: &[f64], n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) || !total.is_finite() {
        return Err(Error::EmptyWeights);
    }
    let step = 1.0 / n as f64;
    let u0 = rng.uniform() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0] / total;
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 * step;
        while u >= cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i] / total;
        }
        out.push(i);
    }
    Ok(out)
}

/// Scaled unscented-transform sigma points: `2n + 1` points for an
/// `n`-dimensional Gaussian.
pub fn generate_sigma_points(g: &GaussianState, ut: &UtParams) -> Result<SigmaPointSet> {
    let n = g.dim();
    let lambda = ut.lambda(n);
    let spread = n as f64 + lambda;
    if !(spread > 0.0) {
        return Err(Error::config("ut", "n + lambda must be positive"));
    }
    let l = cholesky(&g.cov)?;
    let scale = spread.sqrt();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(g.mean.clone());
    for i in 0..n {
        let col = l.column(i) * scale;
        points.push(&g.mean + &col);
    }
    for i in 0..n {
        let col = l.column(i) * scale;
        points.push(&g.mean - &col);
    }
    let w0m = lambda / spread;
    let w0c = w0m + 1.0 - ut.alpha * ut.alpha + ut.beta;
    let wi = 0.5 / spread;
    let mut weights_mean = vec![wi; 2 * n + 1];
    let mut weights_cov = vec![wi; 2 * n + 1];
    weights_mean[0] = w0m;
    weights_cov[0] = w0c;
    Ok(SigmaPointSet {
        points,
        weights_mean,
        weights_cov,
    })
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues. Returns the input unchanged if it is already PSD.
pub fn clip_to_psd4(c: &StateCov) -> StateCov {
    let c = symmetrize4(c);
    let eig = c.symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| *v >= 0.0) {
        return c;
    }
    let d = eig.eigenvalues.map(|v| v.max(0.0));
    let q = eig.eigenvectors;
    symmetrize4(&(q * StateCov::from_diagonal(&d) * q.transpose()))
}
