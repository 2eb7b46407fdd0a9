//! Agent LTI dynamics, the cooperative control law, gain design and the
//! local neighborhood tracking error.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::graph::{self, DiGraph, GraphError};
use crate::linalg::{self, Complex64, FlooredSym};

pub const DEFAULT_SAFETY_FACTOR: f64 = 1.2;
/// Tolerance on |Re(lambda)| for an eigenvalue of A to count as marginal.
pub const MARGINAL_TOL: f64 = 1e-8;
const ARE_TOL: f64 = 1e-10;
const ARE_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("(A, B) is not stabilizable: {0}")]
    NotStabilizable(String),
    #[error("R must be symmetric positive definite")]
    RNotPositiveDefinite,
    #[error("covariance for edge {tail}->{head} is not symmetric positive semidefinite")]
    InvalidCovariance { tail: usize, head: usize },
    #[error("default noise covariance is not symmetric positive semidefinite")]
    InvalidDefaultCovariance,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl AgentDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, DynamicsError> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(DynamicsError::DimensionMismatch(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    /// Harmonic oscillator agents: A = [[0,-1],[1,0]], B = [1,0]^T.
    pub fn oscillator() -> Self {
        Self::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]), DMatrix::from_row_slice(2, 1, &[1.0, 0.0]))
            .expect("static dimensions")
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumClass {
    pub eigenvalues: Vec<Complex64>,
    pub marginal: Vec<Complex64>,
    /// Some eigenvalue has real part above tolerance.
    pub unstable: bool,
}

pub fn classify_a_spectrum(dynamics: &AgentDynamics) -> SpectrumClass {
    let eigenvalues = linalg::eigenvalues(dynamics.a());
    let marginal = eigenvalues.iter().copied().filter(|z| z.re.abs() < MARGINAL_TOL).collect();
    let unstable = eigenvalues.iter().any(|z| z.re > MARGINAL_TOL);
    SpectrumClass { eigenvalues, marginal, unstable }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainDesign {
    /// n_u x n_x feedback gain.
    pub k: DMatrix<f64>,
    pub c: f64,
}

impl GainDesign {
    /// Checks that A - c*lambda*B*K is Hurwitz for every nonzero Laplacian eigenvalue.
    pub fn stabilizes(&self, dynamics: &AgentDynamics, g: &DiGraph) -> bool {
        let bk = dynamics.b() * &self.k;
        nonzero_laplacian_eigenvalues(g).iter().all(|lam| {
            let re = dynamics.a() - &bk * (self.c * lam.re);
            let im = -&bk * (self.c * lam.im);
            linalg::complex_matrix_real_parts(&re, &im).iter().all(|&r| r < 0.0)
        })
    }
}

fn nonzero_laplacian_eigenvalues(g: &DiGraph) -> Vec<Complex64> {
    let l = graph::laplacian(g);
    let tol = graph::ZERO_EIGENVALUE_TOL * l.norm().max(1.0);
    linalg::eigenvalues(&l).into_iter().filter(|z| z.norm() > tol).collect()
}

/// c = safety / (2 * min Re(lambda)) over nonzero Laplacian eigenvalues.
/// A graph with no nonzero eigenvalue (a single node) is treated as lambda = 1.
pub fn coupling_gain(g: &DiGraph, safety_factor: f64) -> Result<f64, DynamicsError> {
    if !graph::has_spanning_tree(g) {
        return Err(GraphError::NoSpanningTree.into());
    }
    let min_re = nonzero_laplacian_eigenvalues(g).iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let min_re = if min_re.is_finite() { min_re } else { 1.0 };
    Ok(safety_factor / (2.0 * min_re))
}

/// Stabilizing solution of A^T P + P A + Q - P B R^-1 B^T P = 0 by
/// Kleinman-Newton iteration from a Bass (eigenvalue-shift) initial gain.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DynamicsError> {
    let n = a.nrows();
    let m = b.ncols();
    if q.shape() != (n, n) || r.shape() != (m, m) || b.nrows() != n {
        return Err(DynamicsError::DimensionMismatch("Q must be n_x x n_x and R n_u x n_u".into()));
    }
    let r_inv = r.clone().cholesky().ok_or(DynamicsError::RNotPositiveDefinite)?.inverse();
    let s = b * &r_inv * b.transpose();

    let shift = linalg::eigenvalues(a).iter().map(|z| z.re).fold(0.0, f64::max) + 1.0;
    let shifted = -(a + DMatrix::identity(n, n) * shift).transpose();
    let gram = linalg::solve_lyapunov(&shifted, &(b * b.transpose() * 2.0))
        .ok_or_else(|| DynamicsError::NotStabilizable("shifted Lyapunov equation is singular".into()))?;
    let gram_inv =
        gram.cholesky().ok_or_else(|| DynamicsError::NotStabilizable("uncontrollable modes".into()))?.inverse();
    let mut k = b.transpose() * gram_inv;
    if !linalg::is_hurwitz(&(a - b * &k)) {
        return Err(DynamicsError::NotStabilizable("no stabilizing initial gain".into()));
    }

    for _ in 0..ARE_MAX_ITER {
        let acl = a - b * &k;
        let rhs = q + k.transpose() * r * &k;
        let p = linalg::solve_lyapunov(&acl, &rhs)
            .ok_or_else(|| DynamicsError::NotStabilizable("Lyapunov step failed".into()))?;
        let residual = a.transpose() * &p + &p * a + q - &p * &s * &p;
        if !residual.iter().all(|x| x.is_finite()) {
            break;
        }
        if residual.norm() < ARE_TOL * p.norm().max(1.0) {
            return Ok(p);
        }
        k = &r_inv * b.transpose() * &p;
    }
    Err(DynamicsError::NotStabilizable("Riccati iteration did not converge".into()))
}

pub fn design_gains(
    dynamics: &AgentDynamics,
    g: &DiGraph,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<GainDesign, DynamicsError> {
    design_gains_with(dynamics, g, q, r, DEFAULT_SAFETY_FACTOR)
}

pub fn design_gains_with(
    dynamics: &AgentDynamics,
    g: &DiGraph,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    safety_factor: f64,
) -> Result<GainDesign, DynamicsError> {
    let c = coupling_gain(g, safety_factor)?;
    let p = solve_care(dynamics.a(), dynamics.b(), q, r)?;
    let r_inv = r.clone().cholesky().ok_or(DynamicsError::RNotPositiveDefinite)?.inverse();
    let k = r_inv * dynamics.b().transpose() * p;
    Ok(GainDesign { k, c })
}

/// Noise samples omega_ij for every edge j -> i, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSamples {
    n: usize,
    n_x: usize,
    data: Vec<f64>,
}

impl EdgeSamples {
    pub fn zeros(n: usize, n_x: usize) -> Self {
        Self { n, n_x, data: vec![0.0; n * n * n_x] }
    }

    /// Sample on the edge j -> i.
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.n + j) * self.n_x;
        &self.data[o..o + self.n_x]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.n + j) * self.n_x;
        &mut self.data[o..o + self.n_x]
    }
}

/// Per-edge zero-mean Gaussian channel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    default_cov: DMatrix<f64>,
    overrides: BTreeMap<(usize, usize), DMatrix<f64>>,
    factors: BTreeMap<(usize, usize), DMatrix<f64>>,
    edges: Vec<(usize, usize)>,
}

impl NoiseModel {
    /// `overrides` is keyed by (tail, head).
    pub fn new(
        g: &DiGraph,
        default_cov: DMatrix<f64>,
        overrides: BTreeMap<(usize, usize), DMatrix<f64>>,
    ) -> Result<Self, DynamicsError> {
        let n_x = default_cov.nrows();
        if psd_sqrt(&default_cov).is_none() {
            return Err(DynamicsError::InvalidDefaultCovariance);
        }
        let mut factors = BTreeMap::new();
        let mut edges = Vec::new();
        for (tail, head, _) in g.edges() {
            let cov = overrides.get(&(tail, head)).unwrap_or(&default_cov);
            if cov.shape() != (n_x, n_x) {
                return Err(DynamicsError::DimensionMismatch(format!(
                    "covariance for edge {tail}->{head} must be {n_x}x{n_x}"
                )));
            }
            factors.insert((tail, head), psd_sqrt(cov).ok_or(DynamicsError::InvalidCovariance { tail, head })?);
            edges.push((tail, head));
        }
        for &(tail, head) in overrides.keys() {
            if !edges.contains(&(tail, head)) {
                return Err(DynamicsError::DimensionMismatch(format!(
                    "noise override for {tail}->{head}, which is not an edge"
                )));
            }
        }
        Ok(Self { default_cov, overrides, factors, edges })
    }

    pub fn isotropic(g: &DiGraph, n_x: usize, std_dev: f64) -> Result<Self, DynamicsError> {
        Self::new(g, DMatrix::identity(n_x, n_x) * std_dev * std_dev, BTreeMap::new())
    }

    pub fn default_cov(&self) -> &DMatrix<f64> {
        &self.default_cov
    }

    pub fn overrides(&self) -> &BTreeMap<(usize, usize), DMatrix<f64>> {
        &self.overrides
    }

    /// Covariance of omega_ij on the edge j -> i.
    pub fn edge_cov(&self, i: usize, j: usize) -> &DMatrix<f64> {
        self.overrides.get(&(j, i)).unwrap_or(&self.default_cov)
    }

    /// Sigma_omega_i = sum_j a_ij^2 Sigma_omega_ij.
    pub fn aggregate_cov(&self, g: &DiGraph, i: usize) -> DMatrix<f64> {
        let n_x = self.default_cov.nrows();
        g.in_neighbors(i)
            .into_iter()
            .fold(DMatrix::zeros(n_x, n_x), |acc, j| acc + self.edge_cov(i, j) * g.a(i, j).powi(2))
    }

    /// Draws one fresh sample per edge, in (head, tail) order.
    pub fn sample<R: Rng>(&self, rng: &mut R, out: &mut EdgeSamples) {
        let n_x = self.default_cov.nrows();
        let mut z = vec![0.0; n_x];
        for &(tail, head) in &self.edges {
            for zk in z.iter_mut() {
                *zk = rng.sample(StandardNormal);
            }
            let f = &self.factors[&(tail, head)];
            let dst = out.get_mut(head, tail);
            for (r, d) in dst.iter_mut().enumerate() {
                *d = (0..n_x).map(|c| f[(r, c)] * z[c]).sum();
            }
        }
    }
}

fn psd_sqrt(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !cov.is_square() || cov.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let scale = cov.norm().max(1.0);
    if (cov - cov.transpose()).norm() > 1e-12 * scale {
        return None;
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| v < -1e-12 * scale) {
        return None;
    }
    Some(FlooredSym::new(cov, 0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub t: f64,
    pub x: Vec<DVector<f64>>,
}

/// sum_j a_ij (x_j - x_i), plus sum_j a_ij omega_ij when noise is supplied.
pub fn local_tracking_error(g: &DiGraph, x: &[DVector<f64>], i: usize, noise: Option<&EdgeSamples>) -> DVector<f64> {
    let mut eta = DVector::zeros(x[i].len());
    for j in g.in_neighbors(i) {
        let a = g.a(i, j);
        eta += (&x[j] - &x[i]) * a;
        if let Some(w) = noise {
            for (e, wk) in eta.iter_mut().zip(w.get(i, j)) {
                *e += a * wk;
            }
        }
    }
    eta
}

/// u_i = c K eta_i.
pub fn nominal_control(gains: &GainDesign, eta: &DVector<f64>) -> DVector<f64> {
    &gains.k * eta * gains.c
}

/// One classical RK4 step of x' = A x + B u with u held over the step.
pub fn integrate_step(
    dynamics: &AgentDynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, DynamicsError> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    if x.len() != dynamics.n_x() || u.len() != dynamics.n_u() {
        return Err(DynamicsError::DimensionMismatch("state or input length".into()));
    }
    let bu = dynamics.b() * u;
    let f = |s: &DVector<f64>| dynamics.a() * s + &bu;
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (dt / 2.0)));
    let k3 = f(&(x + &k2 * (dt / 2.0)));
    let k4 = f(&(x + &k3 * dt));
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// RK4 for a fixed (A, B, dt) collapses to x' = M x + N u with
/// M = sum_{k<=4} (dt A)^k / k! and N = sum_{k=1..4} dt^k A^(k-1) B / k!.
#[derive(Debug, Clone)]
pub struct Rk4Propagator {
    m: DMatrix<f64>,
    n: DMatrix<f64>,
}

impl Rk4Propagator {
    pub fn new(dynamics: &AgentDynamics, dt: f64) -> Result<Self, DynamicsError> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(DynamicsError::NonPositiveStep(dt));
        }
        let n_x = dynamics.n_x();
        let mut m = DMatrix::identity(n_x, n_x);
        let mut n = DMatrix::zeros(n_x, dynamics.n_u());
        let mut pow = DMatrix::identity(n_x, n_x);
        let mut fact = 1.0;
        for k in 1..=4 {
            fact *= k as f64;
            n += &pow * dynamics.b() * (dt.powi(k) / fact);
            pow = &pow * dynamics.a();
            m += &pow * (dt.powi(k) / fact);
        }
        Ok(Self { m, n })
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.m * x + &self.n * u
    }
}
