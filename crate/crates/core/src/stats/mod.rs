//! KL divergences between folded and multivariate Gaussians, windowed
//! parameter estimation, and a quadrature reference for validation.

pub mod quadrature;

use std::collections::VecDeque;
use std::f64::consts::{FRAC_2_PI, PI};

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::linalg::FlooredSym;

/// Variance / eigenvalue floor used by every fit and covariance inversion.
pub const VARIANCE_FLOOR: f64 = 1e-9;
pub const MIN_FOLDED_SAMPLES: usize = 8;
pub const ORACLE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("variance {0} is below the floor or not finite")]
    DegenerateVariance(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample {0} is negative or not finite")]
    InvalidSample(f64),
    #[error("quadrature did not converge")]
    QuadratureFailure,
}

/// Folded normal |X| with X ~ N(mu, sigma2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldedGaussianParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl FoldedGaussianParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self, StatsError> {
        let p = Self { mu, sigma2 };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<(), StatsError> {
        if !self.sigma2.is_finite() || self.sigma2 < VARIANCE_FLOOR || !self.mu.is_finite() {
            return Err(StatsError::DegenerateVariance(self.sigma2));
        }
        Ok(())
    }

    pub fn log_density(&self, q: f64) -> f64 {
        let s2 = 2.0 * self.sigma2;
        let a = -(q - self.mu).powi(2) / s2;
        let b = -(q + self.mu).powi(2) / s2;
        let hi = a.max(b);
        hi + ((a - hi).exp() + (b - hi).exp()).ln() - 0.5 * (2.0 * PI * self.sigma2).ln()
    }

    pub fn density(&self, q: f64) -> f64 {
        if q < 0.0 {
            0.0
        } else {
            self.log_density(q).exp()
        }
    }
}

/// Series form of D(p || q) between folded Gaussians: a Gaussian part plus
/// a truncated expansion of the fold terms. Exact when both means are zero;
/// see the README for its measured accuracy elsewhere.
pub fn folded_gaussian_kl(p: &FoldedGaussianParams, q: &FoldedGaussianParams) -> Result<f64, StatsError> {
    p.check()?;
    q.check()?;
    let (mu1, s1) = (p.mu, p.sigma2);
    let (mu2, s2) = (q.mu, q.sigma2);
    let gaussian = 0.5 * ((s2 / s1).ln() - 1.0 + s1 / s2) + 0.5 * (mu2 - mu1).powi(2) / s2;
    let a = mu1 * mu1 / s1;
    let shift = mu2 * s1 / s2;
    let rho = [mu1 - 2.0 * shift, mu1 + 2.0 * shift, mu1 - 4.0 * shift, mu1 + 4.0 * shift];
    let e = |r: f64| (r * r / (2.0 * s1)).exp();
    let series = 1.0
        + 0.5 * (4.0 * a).exp() * (1.0 - (8.0 * a).exp())
        + (-a / 2.0).exp() * (0.5 * (e(rho[2]) + e(rho[3])) - (e(rho[0]) + e(rho[1])));
    Ok(gaussian + series)
}

const FOLDED_QUAD_PANELS: usize = 6;

/// log f(x) for x >= 0 with the constants hoisted:
/// -(x - |mu|)^2 / (2 sigma2) + ln(1 + exp(-2 x |mu| / sigma2)) - ln(2 pi sigma2) / 2.
struct FoldedLogDensity {
    mu: f64,
    inv_two_s2: f64,
    fold: f64,
    log_norm: f64,
}

impl FoldedLogDensity {
    fn new(p: &FoldedGaussianParams) -> Self {
        Self {
            mu: p.mu.abs(),
            inv_two_s2: 0.5 / p.sigma2,
            fold: 2.0 * p.mu.abs() / p.sigma2,
            log_norm: 0.5 * (2.0 * PI * p.sigma2).ln(),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let d = x - self.mu;
        -d * d * self.inv_two_s2 + (-x * self.fold).exp().ln_1p() - self.log_norm
    }
}
const FOLDED_QUAD_HALF_WIDTH: f64 = 12.0;

/// D(p || q) between folded Gaussians by composite Gauss-Legendre quadrature
/// of p (log p - log q) over the bulk of p, in log space.
pub fn folded_gaussian_kl_exact(p: &FoldedGaussianParams, q: &FoldedGaussianParams) -> Result<f64, StatsError> {
    p.check()?;
    q.check()?;
    if p == q {
        return Ok(0.0);
    }
    let sd = p.sigma2.sqrt();
    let lo = (p.mu.abs() - FOLDED_QUAD_HALF_WIDTH * sd).max(0.0);
    let hi = p.mu.abs() + FOLDED_QUAD_HALF_WIDTH * sd;
    let (lp, lq) = (FoldedLogDensity::new(p), FoldedLogDensity::new(q));
    let integrand = |x: f64| {
        let a = lp.eval(x);
        a.exp() * (a - lq.eval(x))
    };
    Ok(quadrature::composite_gauss_legendre(integrand, lo, hi, FOLDED_QUAD_PANELS).max(0.0))
}

/// Multivariate normal N(mean, cov).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, StatsError> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(StatsError::DimensionMismatch(mean.len(), cov.nrows()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Precomputed reference distribution for repeated D(. || q) evaluations.
#[derive(Debug, Clone)]
pub struct GaussianKlTarget {
    mean: DVector<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
    source: GaussianParams,
}

fn decompose(cov: &DMatrix<f64>) -> Result<FlooredSym, StatsError> {
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::DegenerateVariance(f64::NAN));
    }
    let f = FlooredSym::new(cov, VARIANCE_FLOOR);
    if f.raw_min < -1e-9 * cov.norm().max(1.0) {
        return Err(StatsError::DegenerateVariance(f.raw_min));
    }
    Ok(f)
}

impl GaussianKlTarget {
    pub fn new(q: &GaussianParams) -> Result<Self, StatsError> {
        let f = decompose(&q.cov)?;
        Ok(Self { mean: q.mean.clone(), inv: f.inverse(), log_det: f.log_det(), source: q.clone() })
    }

    /// D(p || target).
    pub fn kl_from(&self, p: &GaussianParams) -> Result<f64, StatsError> {
        let d = self.mean.len();
        if p.dim() != d {
            return Err(StatsError::DimensionMismatch(p.dim(), d));
        }
        if *p == self.source {
            return Ok(0.0);
        }
        let fp = decompose(&p.cov)?;
        let cov_p = &fp.vectors * DMatrix::from_diagonal(&fp.values) * fp.vectors.transpose();
        let diff = &self.mean - &p.mean;
        let trace = (&self.inv * cov_p).trace();
        let quad = diff.dot(&(&self.inv * &diff));
        Ok(0.5 * (self.log_det - fp.log_det() - d as f64 + trace + quad))
    }
}

/// D(p || q) for multivariate Gaussians.
pub fn gaussian_kl(p: &GaussianParams, q: &GaussianParams) -> Result<f64, StatsError> {
    if p.dim() != q.dim() {
        return Err(StatsError::DimensionMismatch(p.dim(), q.dim()));
    }
    GaussianKlTarget::new(q)?.kl_from(p)
}

/// Reference value of integral p log(p/q) over `support` by adaptive
/// Gauss-Kronrod quadrature to absolute tolerance 1e-8.
pub fn kl_numeric_oracle(
    p_density: impl Fn(f64) -> f64,
    q_density: impl Fn(f64) -> f64,
    support: (f64, f64),
) -> Result<f64, StatsError> {
    let integrand = |x: f64| {
        let px = p_density(x);
        if px <= 0.0 {
            0.0
        } else {
            px * (px / q_density(x)).ln()
        }
    };
    quadrature::adaptive_gauss_kronrod(integrand, support.0, support.1, ORACLE_TOL).ok_or(StatsError::QuadratureFailure)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// E|X| / sigma for X ~ N(theta sigma, sigma^2).
#[cfg(test)]
fn folded_mean_ratio(theta: f64) -> f64 {
    FRAC_2_PI.sqrt() * (-0.5 * theta * theta).exp() + theta * (1.0 - 2.0 * normal_cdf(-theta))
}

/// Method-of-moments fit of a folded Gaussian to nonnegative samples.
pub fn window_estimate_folded<I>(samples: I) -> Result<FoldedGaussianParams, StatsError>
where
    I: IntoIterator<Item = f64>,
{
    // Sums are shifted by the first sample, which keeps the one-pass
    // variance accurate without per-sample divisions.
    let mut iter = samples.into_iter().peekable();
    let shift = iter.peek().copied().unwrap_or(0.0);
    let (n, s1, s2) = iter.try_fold((0usize, 0.0, 0.0), |(n, s1, s2), x| {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(StatsError::InvalidSample(x));
        }
        let y = x - shift;
        Ok((n + 1, s1 + y, s2 + y * y))
    })?;
    folded_from_sums(n, shift, s1, s2)
}

fn folded_from_sums(n: usize, shift: f64, s1: f64, s2: f64) -> Result<FoldedGaussianParams, StatsError> {
    if n < MIN_FOLDED_SAMPLES {
        return Err(StatsError::TooFewSamples { needed: MIN_FOLDED_SAMPLES, got: n });
    }
    let nf = n as f64;
    let var = ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0);
    Ok(fit_folded_moments(shift + s1 / nf, var))
}

/// Solves E|X| = m, Var|X| = v for the underlying (mu, sigma2).
pub fn fit_folded_moments(m: f64, v: f64) -> FoldedGaussianParams {
    let second = m * m + v.max(0.0);
    if second <= VARIANCE_FLOOR {
        return FoldedGaussianParams { mu: 0.0, sigma2: VARIANCE_FLOOR };
    }
    let r = m * m / second;
    if r <= FRAC_2_PI {
        return FoldedGaussianParams { mu: 0.0, sigma2: second };
    }
    if r >= 1.0 - 1e-15 {
        return FoldedGaussianParams { mu: m, sigma2: v.max(VARIANCE_FLOOR) };
    }
    // h(theta) = g^2 / (1 + theta^2) - r with g = E|X|/sigma is increasing on
    // theta >= 0 and g' = erf(theta / sqrt 2). Newton steps are kept inside
    // a shrinking bracket.
    let h = |t: f64| {
        let dg = 1.0 - 2.0 * normal_cdf(-t);
        let g = FRAC_2_PI.sqrt() * (-0.5 * t * t).exp() + t * dg;
        let q = 1.0 + t * t;
        (g * g / q - r, 2.0 * g * (dg * q - t * g) / (q * q))
    };
    let (mut lo, mut hi) = (0.0, 2.0);
    while h(hi).0 < 0.0 && hi < 1e8 {
        lo = hi;
        hi *= 2.0;
    }
    // Large theta: r ~ 1 - 1/theta^2.
    let mut theta = if hi > 2.0 { (1.0 / (1.0 - r)).sqrt().clamp(lo, hi) } else { 1.0 };
    for _ in 0..100 {
        let (val, slope) = h(theta);
        if val < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let newton = theta - val / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let done = (next - theta).abs() <= 1e-13 * theta.max(1.0) || hi - lo <= 1e-14 * hi.max(1.0);
        theta = next;
        if done {
            break;
        }
    }
    let sigma2 = (second / (1.0 + theta * theta)).max(VARIANCE_FLOOR);
    FoldedGaussianParams { mu: theta * sigma2.sqrt(), sigma2 }
}

/// Shifted first and second sums of vector samples: (n, shift, s1, upper(s2)).
type MomentSums = (usize, Vec<f64>, Vec<f64>, Vec<f64>);

fn moment_sums_fixed<'a, const D: usize>(
    samples: impl Iterator<Item = &'a [f64]>,
    shift: [f64; D],
) -> Result<MomentSums, StatsError> {
    let mut n = 0usize;
    let mut s1 = [0.0; D];
    let mut s2 = [[0.0; D]; D];
    for s in samples {
        let s: &[f64; D] = s.try_into().map_err(|_| StatsError::DimensionMismatch(s.len(), D))?;
        if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
            return Err(StatsError::InvalidSample(*bad));
        }
        n += 1;
        let mut y = [0.0; D];
        for k in 0..D {
            y[k] = s[k] - shift[k];
            s1[k] += y[k];
        }
        for r in 0..D {
            for c in r..D {
                s2[r][c] += y[r] * y[c];
            }
        }
    }
    Ok((n, shift.to_vec(), s1.to_vec(), s2.iter().flatten().copied().collect()))
}

fn moment_sums_dyn<'a>(samples: impl Iterator<Item = &'a [f64]>, shift: Vec<f64>) -> Result<MomentSums, StatsError> {
    let d = shift.len();
    let mut n = 0usize;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d * d];
    let mut y = vec![0.0; d];
    for s in samples {
        if s.len() != d {
            return Err(StatsError::DimensionMismatch(s.len(), d));
        }
        if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
            return Err(StatsError::InvalidSample(*bad));
        }
        n += 1;
        for k in 0..d {
            y[k] = s[k] - shift[k];
            s1[k] += y[k];
        }
        for r in 0..d {
            for c in r..d {
                s2[r * d + c] += y[r] * y[c];
            }
        }
    }
    Ok((n, shift, s1, s2))
}

/// Sample mean and covariance (plus floor * I) of vector samples.
pub fn window_estimate_gaussian<'a, I>(samples: I) -> Result<GaussianParams, StatsError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = samples.into_iter().peekable();
    // Sums are shifted by the first sample for a stable one-pass covariance.
    let first: Vec<f64> = iter.peek().map_or_else(Vec::new, |s| s.to_vec());
    let (n, shift, s1, s2) = match first.len() {
        1 => moment_sums_fixed::<1>(iter, [first[0]])?,
        2 => moment_sums_fixed::<2>(iter, [first[0], first[1]])?,
        3 => moment_sums_fixed::<3>(iter, [first[0], first[1], first[2]])?,
        _ => moment_sums_dyn(iter, first)?,
    };
    gaussian_from_sums(n, &shift, &s1, &s2)
}

/// `s2` holds the upper triangle of the shifted second sums, row-major d x d.
fn gaussian_from_sums(n: usize, shift: &[f64], s1: &[f64], s2: &[f64]) -> Result<GaussianParams, StatsError> {
    let d = shift.len();
    if n < d + 2 || d == 0 {
        return Err(StatsError::TooFewSamples { needed: d.max(1) + 2, got: n });
    }
    let nf = n as f64;
    let mean = DVector::from_fn(d, |k, _| shift[k] + s1[k] / nf);
    let cov = DMatrix::from_fn(d, d, |r, c| {
        let (a, b) = (r.min(c), r.max(c));
        let v = (s2[a * d + b] - s1[a] * s1[b] / nf) / (nf - 1.0);
        if r == c {
            v.max(0.0) + VARIANCE_FLOOR
        } else {
            v
        }
    });
    Ok(GaussianParams { mean, cov })
}

/// Sliding window of fixed-dimension samples with running shifted sums.
/// The sums are rebuilt from the stored samples once per `cap` updates so
/// rounding does not accumulate. Non-finite samples (and negative ones when
/// the window holds folded data) are kept but make every fit fail until
/// they leave the window, as the batch estimators do.
#[derive(Debug, Clone)]
pub struct RollingMoments {
    dim: usize,
    cap: usize,
    nonnegative: bool,
    data: VecDeque<f64>,
    valid: VecDeque<bool>,
    invalid: usize,
    shift: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    since_rebuild: usize,
}

impl RollingMoments {
    pub fn new(dim: usize, cap: usize) -> Self {
        Self {
            dim,
            cap,
            nonnegative: false,
            data: VecDeque::with_capacity(dim * cap),
            valid: VecDeque::with_capacity(cap),
            invalid: 0,
            shift: vec![0.0; dim],
            s1: vec![0.0; dim],
            s2: vec![0.0; dim * dim],
            since_rebuild: 0,
        }
    }

    /// Scalar window for folded-Gaussian fits; negative samples are invalid.
    pub fn folded(cap: usize) -> Self {
        Self { nonnegative: true, ..Self::new(1, cap) }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.cap
    }

    /// Oldest sample, the one the next push evicts once the window is full.
    pub fn oldest(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().take(self.dim).copied()
    }

    fn accumulate(&mut self, x: &[f64], sign: f64) {
        let d = self.dim;
        for r in 0..d {
            let yr = x[r] - self.shift[r];
            self.s1[r] += sign * yr;
            for c in r..d {
                self.s2[r * d + c] += sign * yr * (x[c] - self.shift[c]);
            }
        }
    }

    fn is_valid(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite() && (!self.nonnegative || *v >= 0.0))
    }

    pub fn push(&mut self, x: &[f64]) -> Result<(), StatsError> {
        if x.len() != self.dim {
            return Err(StatsError::DimensionMismatch(x.len(), self.dim));
        }
        if self.is_full() {
            let old: Vec<f64> = self.data.drain(..self.dim).collect();
            if self.valid.pop_front() == Some(true) {
                self.accumulate(&old, -1.0);
            } else {
                self.invalid -= 1;
            }
        }
        let ok = self.is_valid(x);
        self.data.extend(x);
        self.valid.push_back(ok);
        if ok {
            self.accumulate(x, 1.0);
        } else {
            self.invalid += 1;
        }
        self.since_rebuild += 1;
        if self.since_rebuild >= self.cap {
            self.rebuild();
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        self.since_rebuild = 0;
        self.s1.iter_mut().for_each(|v| *v = 0.0);
        self.s2.iter_mut().for_each(|v| *v = 0.0);
        let d = self.dim;
        let samples: Vec<f64> = self.data.iter().copied().collect();
        let valid: Vec<bool> = self.valid.iter().copied().collect();
        if let Some(k) = valid.iter().rposition(|&v| v) {
            self.shift.copy_from_slice(&samples[k * d..(k + 1) * d]);
        }
        for (x, ok) in samples.chunks_exact(d).zip(valid) {
            if ok {
                self.accumulate(x, 1.0);
            }
        }
    }

    fn first_invalid(&self) -> f64 {
        let k = self.valid.iter().position(|&v| !v).unwrap_or(0);
        self.data.iter().skip(k * self.dim).take(self.dim).copied().find(|v| !self.is_valid(&[*v])).unwrap_or(f64::NAN)
    }

    /// Same estimate as `window_estimate_folded` over the stored samples.
    pub fn folded_fit(&self) -> Result<FoldedGaussianParams, StatsError> {
        if self.dim != 1 {
            return Err(StatsError::DimensionMismatch(self.dim, 1));
        }
        if self.invalid > 0 {
            return Err(StatsError::InvalidSample(self.first_invalid()));
        }
        folded_from_sums(self.len(), self.shift[0], self.s1[0], self.s2[0])
    }

    /// Same estimate as `window_estimate_gaussian` over the stored samples.
    pub fn gaussian_fit(&self) -> Result<GaussianParams, StatsError> {
        if self.invalid > 0 {
            return Err(StatsError::InvalidSample(self.first_invalid()));
        }
        gaussian_from_sums(self.len(), &self.shift, &self.s1, &self.s2)
    }
}
