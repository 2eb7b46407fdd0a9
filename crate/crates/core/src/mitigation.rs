//! Self-belief and trust filters and the trust-weighted control protocol.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::local::LocalView;
use crate::stats::{self, StatsError};

pub const DEFAULT_KAPPA: f64 = 2.0;
pub const DEFAULT_LAMBDA1: f64 = 1.0;
pub const DEFAULT_LAMBDA2: f64 = 1.0;
pub const DEFAULT_TRUST_WINDOW: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TrustConfig {
    /// Divergence scale at which a confidence target drops to 1/2.
    pub delta: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub window: usize,
}

impl TrustConfig {
    pub fn with_delta(delta: f64) -> Self {
        Self {
            delta,
            kappa1: DEFAULT_KAPPA,
            kappa2: DEFAULT_KAPPA,
            kappa3: DEFAULT_KAPPA,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            window: DEFAULT_TRUST_WINDOW,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.delta, self.kappa1, self.kappa2, self.kappa3, self.lambda1, self.lambda2]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && self.window >= 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustState {
    pub c1: f64,
    pub c2: f64,
    pub xi: f64,
    /// Raw trust per in-neighbor (ascending neighbor order).
    pub eta_raw: Vec<f64>,
    /// Trust per in-neighbor.
    pub omega: Vec<f64>,
}

impl TrustState {
    /// Full trust everywhere until evidence arrives.
    pub fn new(in_degree: usize) -> Self {
        Self { c1: 1.0, c2: 1.0, xi: 1.0, eta_raw: vec![1.0; in_degree], omega: vec![1.0; in_degree] }
    }

    fn refresh(&mut self) {
        self.xi = self_belief(self);
        for (o, &e) in self.omega.iter_mut().zip(&self.eta_raw) {
            *o = trust(self.xi, e);
        }
    }
}

/// Target of a confidence filter: delta / (delta + D).
pub fn confidence_target(delta: f64, d: f64) -> f64 {
    if d.is_infinite() {
        0.0
    } else {
        delta / (delta + d.max(0.0))
    }
}

/// Explicit Euler step of c' = kappa (target - c), clamped to [0, 1].
pub fn filter_step(value: f64, kappa: f64, target: f64, dt: f64) -> f64 {
    (value + dt * kappa * (target - value)).clamp(0.0, 1.0)
}

pub fn confidence_imp_step(state: &mut TrustState, cfg: &TrustConfig, d_imp: f64, dt: f64) {
    state.c1 = filter_step(state.c1, cfg.kappa1, confidence_target(cfg.delta, d_imp), dt);
    state.refresh();
}

pub fn confidence_nonimp_step(state: &mut TrustState, cfg: &TrustConfig, d_nonimp: f64, dt: f64) {
    state.c2 = filter_step(state.c2, cfg.kappa2, confidence_target(cfg.delta, d_nonimp), dt);
    state.refresh();
}

pub fn self_belief(state: &TrustState) -> f64 {
    state.c1.min(state.c2)
}

/// L = 1 - l1 / (l1 + exp(-l2 / D)). Tends to 0 as D -> 0 and to
/// 1 / (1 + l1) as D grows.
pub fn link_score(lambda1: f64, lambda2: f64, d: f64) -> f64 {
    let e = if d <= 0.0 { 0.0 } else { (-lambda2 / d).exp() };
    1.0 - lambda1 / (lambda1 + e)
}

/// Sliding windows of what agent i receives from each in-neighbor and of
/// the in-degree-normalized neighborhood aggregate.
#[derive(Debug, Clone)]
pub struct TrustWindows {
    cap: usize,
    received: Vec<VecDeque<DVector<f64>>>,
    aggregate: VecDeque<DVector<f64>>,
}

impl TrustWindows {
    pub fn new(in_degree: usize, cap: usize) -> Self {
        Self { cap, received: vec![VecDeque::with_capacity(cap); in_degree], aggregate: VecDeque::with_capacity(cap) }
    }

    pub fn observe(&mut self, view: &LocalView) {
        let n_x = view.n_x();
        let k = view.neighbors().len();
        if k == 0 {
            return;
        }
        let mut agg = DVector::zeros(n_x);
        for e in 0..k {
            let r = view.received(e);
            for c in 0..n_x {
                agg[c] += r[c] / k as f64;
            }
            push_vec(&mut self.received[e], r, self.cap);
        }
        push_vec(&mut self.aggregate, agg.as_slice(), self.cap);
    }

    pub fn is_full(&self) -> bool {
        self.aggregate.len() >= self.cap
    }

    pub fn received(&self, edge: usize) -> &VecDeque<DVector<f64>> {
        &self.received[edge]
    }

    pub fn aggregate(&self) -> &VecDeque<DVector<f64>> {
        &self.aggregate
    }
}

fn push_vec(buf: &mut VecDeque<DVector<f64>>, value: &[f64], cap: usize) {
    if buf.len() == cap {
        let mut slot = buf.pop_front().expect("non-empty window");
        slot.copy_from_slice(value);
        buf.push_back(slot);
    } else {
        buf.push_back(DVector::from_column_slice(value));
    }
}

/// D(x_j || m_i) between Gaussian fits of the two windows.
pub fn neighbor_divergence(
    x_window: &VecDeque<DVector<f64>>,
    m_window: &VecDeque<DVector<f64>>,
) -> Result<f64, StatsError> {
    let p = stats::window_estimate_gaussian(x_window.iter().map(|v| v.as_slice()))?;
    let q = stats::window_estimate_gaussian(m_window.iter().map(|v| v.as_slice()))?;
    stats::gaussian_kl(&p, &q)
}

/// One Euler step of the raw-trust filter on in-edge `edge`.
pub fn raw_trust_step(
    state: &mut TrustState,
    cfg: &TrustConfig,
    edge: usize,
    x_window: &VecDeque<DVector<f64>>,
    m_window: &VecDeque<DVector<f64>>,
    dt: f64,
) -> Result<f64, StatsError> {
    if x_window.len() < cfg.window || m_window.len() < cfg.window {
        return Err(StatsError::TooFewSamples { needed: cfg.window, got: x_window.len().min(m_window.len()) });
    }
    let d = neighbor_divergence(x_window, m_window)?;
    let target = link_score(cfg.lambda1, cfg.lambda2, d);
    state.eta_raw[edge] = filter_step(state.eta_raw[edge], cfg.kappa3, target, dt);
    state.refresh();
    Ok(d)
}

pub fn trust(xi: f64, eta_raw: f64) -> f64 {
    xi.max(eta_raw).clamp(0.0, 1.0)
}

/// sum_j Omega_ij xi_j a_ij (x_j - x_i) + omega_i, with `beliefs[k]` the
/// broadcast self-belief of the k-th in-neighbor.
pub fn resilient_tracking_error(view: &LocalView, omega: &[f64], beliefs: &[f64]) -> DVector<f64> {
    let scale: Vec<f64> = omega.iter().zip(beliefs).map(|(o, x)| o * x).collect();
    view.weighted_tracking_error(&scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DiGraph;

    fn run_confidence(d: f64, steps: usize) -> f64 {
        let cfg = TrustConfig::with_delta(0.5);
        let mut s = TrustState::new(0);
        for _ in 0..steps {
            confidence_imp_step(&mut s, &cfg, d, 1e-3);
        }
        s.c1
    }

    #[test]
    fn confidence_fixed_points() {
        assert_eq!(run_confidence(0.0, 20_000), 1.0);
        assert!(run_confidence(1e12, 20_000) < 1e-6);
        assert!((run_confidence(0.5, 20_000) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn nonimp_confidence_uses_its_own_rate() {
        let cfg = TrustConfig { kappa2: 10.0, ..TrustConfig::with_delta(1.0) };
        let mut s = TrustState::new(0);
        confidence_nonimp_step(&mut s, &cfg, 1.0, 1e-3);
        assert!((s.c2 - (1.0 - 1e-3 * 10.0 * 0.5)).abs() < 1e-15);
        assert_eq!(s.c1, 1.0);
        assert_eq!(s.xi, s.c2);
    }

    #[test]
    fn self_belief_examples() {
        let mut s = TrustState::new(0);
        for (c1, c2, xi) in [(1.0, 1.0, 1.0), (0.2, 0.9, 0.2), (0.9, 0.1, 0.1)] {
            s.c1 = c1;
            s.c2 = c2;
            assert_eq!(self_belief(&s), xi);
        }
    }

    #[test]
    fn trust_examples() {
        assert_eq!(trust(1.0, 0.0), 1.0);
        assert_eq!(trust(0.0, 0.3), 0.3);
        assert_eq!(trust(0.5, 0.5), 0.5);
    }

    #[test]
    fn link_score_limits() {
        assert_eq!(link_score(1.0, 1.0, 0.0), 0.0);
        assert!(link_score(1.0, 1.0, 1e-3) < 1e-12);
        assert!((link_score(1.0, 1.0, 1e12) - 0.5).abs() < 1e-9);
        assert!((link_score(4.0, 1.0, 1e12) - 0.2).abs() < 1e-9);
        // exp(-1) at D = Lambda2.
        let e = (-1f64).exp();
        assert!((link_score(1.0, 1.0, 1.0) - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn identical_windows_drive_raw_trust_down() {
        let cfg = TrustConfig { window: 10, ..TrustConfig::with_delta(1.0) };
        let w: VecDeque<DVector<f64>> = (0..10).map(|_| DVector::from_vec(vec![1.0, 2.0])).collect();
        let mut s = TrustState::new(1);
        let d = raw_trust_step(&mut s, &cfg, 0, &w, &w, 1e-3).unwrap();
        assert_eq!(d, 0.0);
        assert!((s.eta_raw[0] - (1.0 - 2e-3)).abs() < 1e-15);
        assert_eq!(s.omega[0], s.eta_raw[0].max(s.xi));
    }

    #[test]
    fn raw_trust_needs_full_windows() {
        let cfg = TrustConfig::with_delta(1.0);
        let w: VecDeque<DVector<f64>> = (0..5).map(|_| DVector::zeros(2)).collect();
        let mut s = TrustState::new(1);
        assert!(matches!(raw_trust_step(&mut s, &cfg, 0, &w, &w, 1e-3), Err(StatsError::TooFewSamples { .. })));
        assert_eq!(s.eta_raw[0], 1.0);
    }

    #[test]
    fn resilient_error_reductions() {
        let g = DiGraph::from_edges(3, &[(1, 0, 1.0), (2, 0, 2.0)]).unwrap();
        let x = [vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut view = LocalView::new(&g, 0, 2);
        view.observe(&x[0], |j| x[j].as_slice(), None);
        assert_eq!(resilient_tracking_error(&view, &[1.0, 1.0], &[1.0, 1.0]), view.tracking_error());
        let cut = resilient_tracking_error(&view, &[1.0, 1.0], &[1.0, 0.0]);
        assert_eq!(cut, DVector::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn half_life_matches_rate() {
        let kappa = 2.0;
        let dt = 1e-3;
        let steps = ((2f64.ln() / kappa) / dt).round() as usize;
        let mut c = 1.0;
        for _ in 0..steps {
            c = filter_step(c, kappa, 0.2, dt);
        }
        let ratio = (c - 0.2) / 0.8;
        assert!((ratio - 0.5).abs() < 0.025, "{ratio}");
    }
}
