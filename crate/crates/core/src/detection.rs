//! Per-agent online detectors. The IMP detector compares the folded-Gaussian
//! fits of the two error sequences; the non-IMP detector compares the
//! Gaussian fit of the local tracking error against its attack-free law.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::EdgeSamples;
use crate::graph::DiGraph;
use crate::local::LocalView;
use crate::stats::{self, GaussianKlTarget, GaussianParams, RollingMoments, StatsError};

pub const DEFAULT_WINDOW: usize = 200;
pub const DEFAULT_WARMUP: f64 = 10.0;
pub const MIN_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

impl Hypothesis {
    pub fn is_attack(self) -> bool {
        self == Hypothesis::H1
    }
}

/// How the IMP detector evaluates D(phi || tau).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldedKlMethod {
    /// Closed-form series (exact only for zero means).
    Series,
    /// Numerical integration of the folded densities.
    #[default]
    Quadrature,
}

impl FoldedKlMethod {
    pub fn eval(self, p: &stats::FoldedGaussianParams, q: &stats::FoldedGaussianParams) -> Result<f64, StatsError> {
        match self {
            FoldedKlMethod::Series => stats::folded_gaussian_kl(p, q),
            FoldedKlMethod::Quadrature => stats::folded_gaussian_kl_exact(p, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub window: usize,
    pub warmup: f64,
    pub gamma_imp: f64,
    pub gamma_nonimp: f64,
    /// Attack-free law of the noisy tracking error.
    pub nominal: GaussianParams,
    pub folded_kl: FoldedKlMethod,
    /// Divergences are evaluated from this time on; earlier steps only fill
    /// the sample windows. Anything up to `window + 1` steps before the
    /// warmup ends leaves every decision unchanged.
    pub eval_from: f64,
}

/// (tau, phi) for agent `i` from what it receives (`received[j]` = x_j^c as
/// delivered to i, before channel noise) and its own measured state.
pub fn error_sequences(
    g: &DiGraph,
    i: usize,
    received: &[DVector<f64>],
    own: &DVector<f64>,
    noise: Option<&EdgeSamples>,
) -> (f64, f64) {
    let mut view = LocalView::new(g, i, own.len());
    view.observe(own.as_slice(), |j| received[j].as_slice(), noise);
    view.error_sequences()
}

#[derive(Debug, Clone)]
pub struct DetectorState {
    n_x: usize,
    tau: RollingMoments,
    phi: RollingMoments,
    /// Window pairs whose tau and phi differ; zero means the two fits coincide.
    mismatched: usize,
    eta: RollingMoments,
    kl_imp: VecDeque<f64>,
    kl_nonimp: VecDeque<f64>,
    nominal: GaussianKlTarget,
    /// Divergence of the current window (instantaneous, before averaging).
    pub d_imp: f64,
    pub d_nonimp: f64,
    /// Window averages of the divergence streams.
    pub avg_imp: f64,
    pub avg_nonimp: f64,
    pub h_imp: Hypothesis,
    pub h_nonimp: Hypothesis,
}

impl DetectorState {
    pub fn new(cfg: &DetectorConfig) -> Result<Self, StatsError> {
        Ok(Self {
            n_x: cfg.nominal.dim(),
            tau: RollingMoments::folded(cfg.window),
            phi: RollingMoments::folded(cfg.window),
            mismatched: 0,
            eta: RollingMoments::new(cfg.nominal.dim(), cfg.window),
            kl_imp: VecDeque::with_capacity(cfg.window),
            kl_nonimp: VecDeque::with_capacity(cfg.window),
            nominal: GaussianKlTarget::new(&cfg.nominal)?,
            d_imp: 0.0,
            d_nonimp: 0.0,
            avg_imp: 0.0,
            avg_nonimp: 0.0,
            h_imp: Hypothesis::H0,
            h_nonimp: Hypothesis::H0,
        })
    }

    /// Both sample windows are full.
    pub fn is_full(&self, cfg: &DetectorConfig) -> bool {
        self.tau.len() >= cfg.window && self.eta.len() >= cfg.window
    }

    /// Decisions are live: window full and past the warmup time.
    pub fn is_warm(&self, cfg: &DetectorConfig, t: f64) -> bool {
        self.is_full(cfg) && t > cfg.warmup
    }

    /// H1 from either detector.
    pub fn any_attack(&self) -> bool {
        self.h_imp.is_attack() || self.h_nonimp.is_attack()
    }
}

fn push_bounded<T>(buf: &mut VecDeque<T>, value: T, cap: usize) {
    if buf.len() == cap {
        buf.pop_front();
    }
    buf.push_back(value);
}

fn decide(avg: f64, gamma: f64, live: bool) -> Hypothesis {
    if live && avg > gamma {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

/// One IMP-detector update with the newest (tau, phi) pair.
pub fn imp_detector_step(
    state: &mut DetectorState,
    cfg: &DetectorConfig,
    tau: f64,
    phi: f64,
    t: f64,
) -> Result<Hypothesis, StatsError> {
    if state.tau.is_full() && state.tau.oldest().ne(state.phi.oldest()) {
        state.mismatched -= 1;
    }
    state.tau.push(&[tau])?;
    state.phi.push(&[phi])?;
    if tau != phi {
        state.mismatched += 1;
    }
    if state.tau.len() < cfg.window {
        state.h_imp = Hypothesis::H0;
        return Err(StatsError::TooFewSamples { needed: cfg.window, got: state.tau.len() });
    }
    if t < cfg.eval_from {
        state.h_imp = Hypothesis::H0;
        return Ok(state.h_imp);
    }
    let phi_fit = state.phi.folded_fit()?;
    // With a single in-neighbor tau and phi coincide sample by sample.
    let tau_fit = if state.mismatched == 0 { phi_fit } else { state.tau.folded_fit()? };
    let d = match cfg.folded_kl.eval(&phi_fit, &tau_fit) {
        Ok(v) if v.is_finite() => v,
        Ok(_) => f64::MAX,
        Err(StatsError::DegenerateVariance(_)) => 0.0,
        Err(e) => return Err(e),
    };
    state.d_imp = d;
    push_bounded(&mut state.kl_imp, d, cfg.window);
    state.avg_imp = state.kl_imp.iter().sum::<f64>() / state.kl_imp.len() as f64;
    state.h_imp = decide(state.avg_imp, cfg.gamma_imp, t > cfg.warmup);
    Ok(state.h_imp)
}

/// One non-IMP-detector update with the newest noisy tracking error.
pub fn nonimp_detector_step(
    state: &mut DetectorState,
    cfg: &DetectorConfig,
    eta: &DVector<f64>,
    t: f64,
) -> Result<Hypothesis, StatsError> {
    if eta.len() != state.n_x {
        return Err(StatsError::DimensionMismatch(eta.len(), state.n_x));
    }
    state.eta.push(eta.as_slice())?;
    if state.eta.len() < cfg.window {
        state.h_nonimp = Hypothesis::H0;
        return Err(StatsError::TooFewSamples { needed: cfg.window, got: state.eta.len() });
    }
    if t < cfg.eval_from {
        state.h_nonimp = Hypothesis::H0;
        return Ok(state.h_nonimp);
    }
    let fit = state.eta.gaussian_fit()?;
    let d = match state.nominal.kl_from(&fit) {
        Ok(v) => v,
        Err(StatsError::DegenerateVariance(_)) => 0.0,
        Err(e) => return Err(e),
    };
    state.d_nonimp = d;
    push_bounded(&mut state.kl_nonimp, d, cfg.window);
    state.avg_nonimp = state.kl_nonimp.iter().sum::<f64>() / state.kl_nonimp.len() as f64;
    state.h_nonimp = decide(state.avg_nonimp, cfg.gamma_nonimp, t > cfg.warmup);
    Ok(state.h_nonimp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cfg(gamma: f64) -> DetectorConfig {
        DetectorConfig {
            window: 50,
            warmup: 1.0,
            gamma_imp: gamma,
            gamma_nonimp: gamma,
            nominal: GaussianParams::new(DVector::zeros(2), DMatrix::identity(2, 2) * 1e-4).unwrap(),
            folded_kl: FoldedKlMethod::Quadrature,
            eval_from: f64::NEG_INFINITY,
        }
    }

    #[test]
    fn error_sequence_examples() {
        let g = DiGraph::from_edges(3, &[(1, 0, 1.0), (2, 0, 1.0)]).unwrap();
        let same = vec![DVector::from_vec(vec![1.0, 1.0]); 3];
        assert_eq!(error_sequences(&g, 0, &same, &same[0], None), (0.0, 0.0));

        let single = DiGraph::from_edges(2, &[(1, 0, 1.0)]).unwrap();
        let x = vec![DVector::zeros(2), DVector::from_vec(vec![3.0, 4.0])];
        assert_eq!(error_sequences(&single, 0, &x, &x[0], None), (5.0, 5.0));

        let x = vec![DVector::zeros(2), DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![-1.0, 0.0])];
        assert_eq!(error_sequences(&g, 0, &x, &x[0], None), (0.0, 2.0));
    }

    #[test]
    fn warming_up_reports_too_few_samples() {
        let c = cfg(1.0);
        let mut s = DetectorState::new(&c).unwrap();
        for k in 0..c.window - 1 {
            let r = imp_detector_step(&mut s, &c, 0.1, 0.1, k as f64);
            assert!(matches!(r, Err(StatsError::TooFewSamples { .. })));
        }
        assert_eq!(imp_detector_step(&mut s, &c, 0.1, 0.1, 0.0), Ok(Hypothesis::H0));
    }

    #[test]
    fn zero_variance_buffers_stay_h0() {
        let c = cfg(1e-6);
        let mut s = DetectorState::new(&c).unwrap();
        let mut last = None;
        for _ in 0..2 * c.window {
            last = Some(imp_detector_step(&mut s, &c, 0.0, 0.0, 5.0));
        }
        assert_eq!(last.unwrap(), Ok(Hypothesis::H0));
        assert_eq!(s.avg_imp, 0.0);
    }

    #[test]
    fn imp_detector_fires_on_diverging_sequences() {
        let c = cfg(0.5);
        let mut s = DetectorState::new(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut h = Hypothesis::H0;
        for k in 0..3 * c.window {
            let tau: f64 = noise.sample(&mut rng);
            let phi: f64 = 3.0 + noise.sample(&mut rng);
            h = imp_detector_step(&mut s, &c, tau.abs(), phi.abs(), 2.0 + k as f64 * 1e-3).unwrap_or(Hypothesis::H0);
        }
        assert_eq!(h, Hypothesis::H1);
    }

    #[test]
    fn hypotheses_gated_by_warmup() {
        let c = cfg(0.5);
        let mut s = DetectorState::new(&c).unwrap();
        let big = DVector::from_vec(vec![5.0, 5.0]);
        for k in 0..2 * c.window {
            let _ = nonimp_detector_step(&mut s, &c, &(&big * (k as f64)), 0.5);
        }
        assert_eq!(s.h_nonimp, Hypothesis::H0);
        assert!(s.avg_nonimp > c.gamma_nonimp);
        assert_eq!(nonimp_detector_step(&mut s, &c, &big, 1.5), Ok(Hypothesis::H1));
    }

    #[test]
    fn nonimp_detector_quiet_on_nominal_noise() {
        let c = DetectorConfig { window: 200, ..cfg(0.05) };
        let mut s = DetectorState::new(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut max_avg: f64 = 0.0;
        for k in 0..4000 {
            let eta = DVector::from_fn(2, |_, _| noise.sample(&mut rng));
            if nonimp_detector_step(&mut s, &c, &eta, k as f64 * 1e-3).is_ok() {
                max_avg = max_avg.max(s.avg_nonimp);
            }
        }
        // Fit noise alone gives a divergence of about (d + d(d+1)/2) / (2T) = 0.0125.
        assert!(max_avg < 0.04, "{max_avg}");
        assert!(max_avg > 0.0);
    }
}
