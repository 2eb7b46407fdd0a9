//! Attack signals, their injection points, the composed per-agent attack
//! and the spectral classification into IMP / non-IMP attacks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{self, AgentDynamics, GainDesign};
use crate::graph::DiGraph;
use crate::linalg::{self, Complex64};

/// Absolute tolerance when matching generator eigenvalues against A's.
pub const EIGEN_MATCH_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("attack target {0} out of range for {1} agents")]
    TargetOutOfRange(usize, usize),
    #[error("link attack on {from}->{target}, which is not an edge")]
    NotAnEdge { from: usize, target: usize },
    #[error("attack generator dimensions: {0}")]
    DimensionMismatch(String),
    #[error("attack timing: {0}")]
    InvalidTiming(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Corrupts the agent's applied input: u^c = u + u^d.
    Actuator,
    /// Corrupts the agent's measured state as seen by itself and its out-neighbors.
    Sensor,
    /// Corrupts what `target` receives from `from` on that single edge.
    Link { from: usize },
}

/// One term of a closed-form waveform, evaluated at time since onset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaveTerm {
    Constant { value: f64 },
    Sine { amplitude: f64, omega: f64, phase: f64 },
    Exponential { amplitude: f64, rate: f64 },
}

impl WaveTerm {
    fn eval(&self, tau: f64) -> f64 {
        match *self {
            WaveTerm::Constant { value } => value,
            WaveTerm::Sine { amplitude, omega, phase } => amplitude * (omega * tau + phase).sin(),
            WaveTerm::Exponential { amplitude, rate } => amplitude * (rate * tau).exp(),
        }
    }

    fn spectrum(&self) -> Vec<Complex64> {
        match *self {
            WaveTerm::Constant { .. } => vec![Complex64::new(0.0, 0.0)],
            WaveTerm::Sine { omega: 0.0, .. } => vec![Complex64::new(0.0, 0.0)],
            WaveTerm::Sine { omega, .. } => {
                vec![Complex64::new(0.0, omega.abs()), Complex64::new(0.0, -omega.abs())]
            }
            WaveTerm::Exponential { rate, .. } => vec![Complex64::new(rate, 0.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// f' = Psi f, f(t_start) = f0; the injected signal is output_map * f.
    Lti { psi: DMatrix<f64>, f0: DVector<f64>, output_map: DMatrix<f64> },
    /// Scalar sum of terms times a fixed direction in the channel space.
    Waveform { terms: Vec<WaveTerm>, direction: DVector<f64> },
}

impl Generator {
    pub fn output_dim(&self) -> usize {
        match self {
            Generator::Lti { output_map, .. } => output_map.nrows(),
            Generator::Waveform { direction, .. } => direction.len(),
        }
    }

    /// Generator eigenvalues (LTI) or the declared frequency/growth-rate set (waveform).
    pub fn spectrum(&self) -> Vec<Complex64> {
        match self {
            Generator::Lti { psi, .. } => linalg::eigenvalues(psi),
            Generator::Waveform { terms, .. } => {
                let mut out: Vec<Complex64> = Vec::new();
                for z in terms.iter().flat_map(WaveTerm::spectrum) {
                    if !out.iter().any(|w| (w - z).norm() <= EIGEN_MATCH_TOL) {
                        out.push(z);
                    }
                }
                out
            }
        }
    }

    fn eval(&self, tau: f64) -> DVector<f64> {
        match self {
            Generator::Lti { psi, f0, output_map } => output_map * ((psi * tau).exp() * f0),
            Generator::Waveform { terms, direction } => direction * terms.iter().map(|w| w.eval(tau)).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub target: usize,
    pub channel: Channel,
    pub generator: Generator,
    pub t_start: f64,
    pub t_stop: Option<f64>,
}

impl AttackSpec {
    /// Dimension the channel expects: n_u for actuators, n_x otherwise.
    pub fn channel_dim(&self, dynamics: &AgentDynamics) -> usize {
        match self.channel {
            Channel::Actuator => dynamics.n_u(),
            Channel::Sensor | Channel::Link { .. } => dynamics.n_x(),
        }
    }

    pub fn validate(&self, g: &DiGraph, dynamics: &AgentDynamics) -> Result<(), AttackError> {
        let n = g.n();
        if self.target >= n {
            return Err(AttackError::TargetOutOfRange(self.target, n));
        }
        if let Channel::Link { from } = self.channel {
            if from >= n || g.a(self.target, from) <= 0.0 {
                return Err(AttackError::NotAnEdge { from, target: self.target });
            }
        }
        if !self.t_start.is_finite() || self.t_start < 0.0 {
            return Err(AttackError::InvalidTiming(format!("t_start = {}", self.t_start)));
        }
        if let Some(stop) = self.t_stop {
            if !(stop >= self.t_start) {
                return Err(AttackError::InvalidTiming(format!("t_stop = {stop} before t_start")));
            }
        }
        let want = self.channel_dim(dynamics);
        match &self.generator {
            Generator::Lti { psi, f0, output_map } => {
                let m = psi.nrows();
                if m == 0 || psi.ncols() != m || f0.len() != m || output_map.ncols() != m {
                    return Err(AttackError::DimensionMismatch(format!(
                        "Psi {}x{}, f0 {}, output_map {}x{}",
                        psi.nrows(),
                        psi.ncols(),
                        f0.len(),
                        output_map.nrows(),
                        output_map.ncols()
                    )));
                }
            }
            Generator::Waveform { terms, .. } => {
                if terms.is_empty() {
                    return Err(AttackError::DimensionMismatch("waveform has no terms".into()));
                }
            }
        }
        if self.generator.output_dim() != want {
            return Err(AttackError::DimensionMismatch(format!(
                "channel needs dimension {want}, generator produces {}",
                self.generator.output_dim()
            )));
        }
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start && self.t_stop.is_none_or(|stop| t <= stop)
    }
}

/// Injected signal at time `t`; zero outside [t_start, t_stop].
pub fn attack_signal(spec: &AttackSpec, t: f64) -> DVector<f64> {
    if spec.is_active(t) {
        spec.generator.eval(t - spec.t_start)
    } else {
        DVector::zeros(spec.generator.output_dim())
    }
}

/// Per-agent overall attack f_i = u_i^d + cK sum_j a_ij (x_j^d - x_i^d),
/// with link corruption entering only the receiving agent's sum.
pub fn compose_overall_attack(
    specs: &[AttackSpec],
    g: &DiGraph,
    dynamics: &AgentDynamics,
    gains: &GainDesign,
    t: f64,
) -> Vec<DVector<f64>> {
    let n = g.n();
    let mut f = vec![DVector::zeros(dynamics.n_u()); n];
    let mut sensor = vec![DVector::<f64>::zeros(dynamics.n_x()); n];
    let mut neighbor_sum = vec![DVector::<f64>::zeros(dynamics.n_x()); n];
    for spec in specs {
        let s = attack_signal(spec, t);
        match spec.channel {
            Channel::Actuator => f[spec.target] += s,
            Channel::Sensor => sensor[spec.target] += s,
            Channel::Link { from } => neighbor_sum[spec.target] += s * g.a(spec.target, from),
        }
    }
    for i in 0..n {
        let mut acc = neighbor_sum[i].clone();
        for j in g.in_neighbors(i) {
            acc += (&sensor[j] - &sensor[i]) * g.a(i, j);
        }
        f[i] += dynamics::nominal_control(gains, &acc);
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Imp,
    NonImp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackClassification {
    pub kind: AttackKind,
    pub e_psi: Vec<Complex64>,
    /// Generator eigenvalues that match a marginal eigenvalue of A.
    pub shared_marginal: Vec<Complex64>,
}

/// Maximum bipartite matching of `sub` into `sup` (each element of `sup`
/// used at most once). Returns true when every element of `sub` is matched.
pub fn multiset_contains(sup: &[Complex64], sub: &[Complex64], tol: f64) -> bool {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> =
        sub.iter().map(|z| (0..sup.len()).filter(|&k| (sup[k] - z).norm() <= tol).collect()).collect();
    let mut owner = vec![None; sup.len()];
    (0..sub.len()).all(|u| {
        let mut seen = vec![false; sup.len()];
        augment(u, &adj, &mut seen, &mut owner)
    })
}

pub fn classify_attack(spec: &AttackSpec, dynamics: &AgentDynamics) -> AttackClassification {
    let e_psi = spec.generator.spectrum();
    let a_spec = dynamics::classify_a_spectrum(dynamics);
    let kind = if multiset_contains(&a_spec.eigenvalues, &e_psi, EIGEN_MATCH_TOL) {
        AttackKind::Imp
    } else {
        AttackKind::NonImp
    };
    let shared_marginal =
        e_psi.iter().copied().filter(|z| a_spec.marginal.iter().any(|w| (w - z).norm() <= EIGEN_MATCH_TOL)).collect();
    AttackClassification { kind, e_psi, shared_marginal }
}

/// || sum_k p_k f_k ||.
pub fn steady_state_residual(p: &[f64], f: &[DVector<f64>]) -> f64 {
    assert_eq!(p.len(), f.len(), "one attack vector per agent");
    let mut acc = DVector::zeros(f.first().map_or(0, |v| v.len()));
    for (pk, fk) in p.iter().zip(f) {
        if *pk != 0.0 {
            acc += fk * *pk;
        }
    }
    acc.norm()
}

pub fn predicts_instability(class: &AttackClassification, residual_nonzero: bool) -> bool {
    residual_nonzero && !class.shared_marginal.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::canonical_graph;

    fn rotation() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }

    fn lti(f0: [f64; 2], map: [f64; 2]) -> Generator {
        Generator::Lti {
            psi: rotation(),
            f0: DVector::from_row_slice(&f0),
            output_map: DMatrix::from_row_slice(1, 2, &map),
        }
    }

    fn actuator(target: usize, generator: Generator, t_start: f64) -> AttackSpec {
        AttackSpec { target, channel: Channel::Actuator, generator, t_start, t_stop: None }
    }

    fn non_imp_waveform() -> Generator {
        Generator::Waveform {
            terms: vec![WaveTerm::Constant { value: 10.0 }, WaveTerm::Sine { amplitude: 5.0, omega: 2.0, phase: 0.0 }],
            direction: DVector::from_element(1, 1.0),
        }
    }

    #[test]
    fn gating() {
        let spec = AttackSpec { t_stop: Some(30.0), ..actuator(4, lti([20.0, 0.0], [0.0, 1.0]), 20.0) };
        assert_eq!(attack_signal(&spec, 19.999)[0], 0.0);
        assert_eq!(attack_signal(&spec, 30.5)[0], 0.0);
        assert!(attack_signal(&spec, 21.0)[0] != 0.0);
    }

    #[test]
    fn lti_closed_form() {
        // exp(Psi s) (0, 20) = (-20 sin s, 20 cos s).
        let spec = actuator(0, lti([0.0, 20.0], [1.0, 0.0]), 3.0);
        for s in [0.0, 0.4, 1.7, 12.5] {
            assert!((attack_signal(&spec, 3.0 + s)[0] + 20.0 * s.sin()).abs() < 1e-12);
        }
        let spec = actuator(0, lti([20.0, 0.0], [0.0, 1.0]), 3.0);
        for s in [0.0, 0.4, 1.7, 12.5] {
            assert!((attack_signal(&spec, 3.0 + s)[0] - 20.0 * s.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn waveform_value_at_onset() {
        let spec = actuator(4, non_imp_waveform(), 0.0);
        assert_eq!(attack_signal(&spec, 0.0)[0], 10.0);
        assert!((attack_signal(&spec, 1.0)[0] - (10.0 + 5.0 * 2f64.sin())).abs() < 1e-14);
    }

    #[test]
    fn compose_examples() {
        let g = canonical_graph();
        let d = AgentDynamics::oscillator();
        let gains = GainDesign { k: DMatrix::from_row_slice(1, 2, &[1.5, 0.5]), c: 0.6 };
        let none = compose_overall_attack(&[], &g, &d, &gains, 5.0);
        assert!(none.iter().all(|f| f[0] == 0.0));

        let spec = actuator(4, lti([20.0, 0.0], [0.0, 1.0]), 0.0);
        let f = compose_overall_attack(std::slice::from_ref(&spec), &g, &d, &gains, 1.0);
        assert!((f[4][0] - 20.0 * 1f64.sin()).abs() < 1e-12);
        assert!(f.iter().take(4).all(|fi| fi[0] == 0.0));
    }

    #[test]
    fn compose_sensor_attack_matches_expansion() {
        let g = canonical_graph();
        let d = AgentDynamics::oscillator();
        let gains = GainDesign { k: DMatrix::from_row_slice(1, 2, &[1.5, 0.5]), c: 0.6 };
        let xd = DVector::from_vec(vec![2.0, -1.0]);
        let spec = AttackSpec {
            target: 4,
            channel: Channel::Sensor,
            generator: Generator::Waveform { terms: vec![WaveTerm::Constant { value: 1.0 }], direction: xd.clone() },
            t_start: 0.0,
            t_stop: None,
        };
        let f = compose_overall_attack(&[spec], &g, &d, &gains, 1.0);
        let ckx = (&gains.k * &xd)[0] * gains.c;
        // Agent 4 (index 3) hears agent 5 (index 4) with weight 1; agent 5 has in-degree 1.
        assert!((f[3][0] - ckx).abs() < 1e-14);
        assert!((f[4][0] + ckx).abs() < 1e-14);
        assert!(f[..3].iter().all(|fi| fi[0] == 0.0));
    }

    #[test]
    fn compose_link_attack_hits_receiver_only() {
        let g = canonical_graph();
        let d = AgentDynamics::oscillator();
        let gains = GainDesign { k: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), c: 1.0 };
        let spec = AttackSpec {
            target: 3,
            channel: Channel::Link { from: 4 },
            generator: Generator::Waveform {
                terms: vec![WaveTerm::Constant { value: 3.0 }],
                direction: DVector::from_vec(vec![1.0, 0.0]),
            },
            t_start: 0.0,
            t_stop: None,
        };
        let f = compose_overall_attack(&[spec], &g, &d, &gains, 0.5);
        assert_eq!(f[3][0], 3.0);
        assert!(f.iter().enumerate().all(|(i, fi)| i == 3 || fi[0] == 0.0));
    }

    #[test]
    fn classification_examples() {
        let d = AgentDynamics::oscillator();
        let imp = classify_attack(&actuator(0, lti([20.0, 0.0], [0.0, 1.0]), 20.0), &d);
        assert_eq!(imp.kind, AttackKind::Imp);
        assert_eq!(imp.shared_marginal.len(), 2);

        let sine = Generator::Waveform {
            terms: vec![WaveTerm::Sine { amplitude: 20.0, omega: 1.0, phase: 0.0 }],
            direction: DVector::from_element(1, 1.0),
        };
        assert_eq!(classify_attack(&actuator(0, sine, 0.0), &d).kind, AttackKind::Imp);

        let non = classify_attack(&actuator(4, non_imp_waveform(), 20.0), &d);
        assert_eq!(non.kind, AttackKind::NonImp);
        assert_eq!(non.e_psi.len(), 3);
        assert!(non.shared_marginal.is_empty());
        assert!(!predicts_instability(&non, true));

        let same = Generator::Lti {
            psi: d.a().clone(),
            f0: DVector::from_vec(vec![1.0, 0.0]),
            output_map: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        };
        let c = classify_attack(&actuator(0, same, 0.0), &d);
        assert_eq!(c.kind, AttackKind::Imp);
        assert_eq!(c.shared_marginal.len(), 2);
    }

    #[test]
    fn repeated_generator_eigenvalue_needs_multiplicity() {
        let sup = [Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0)];
        let twice = [Complex64::new(0.0, 1.0), Complex64::new(0.0, 1.0)];
        assert!(!multiset_contains(&sup, &twice, 1e-8));
        assert!(multiset_contains(&sup, &sup[..1], 1e-8));
        assert!(multiset_contains(&sup, &[], 1e-8));
    }

    #[test]
    fn residual_examples() {
        let p = [1.0, 0.0, 0.0, 0.0, 0.0];
        let mut f = vec![DVector::zeros(1); 5];
        f[4][0] = 7.0;
        assert_eq!(steady_state_residual(&p, &f), 0.0);
        f[0][0] = 20.0 * (std::f64::consts::FRAC_PI_2).sin();
        assert!((steady_state_residual(&p, &f) - 20.0).abs() < 1e-12);

        let p2 = [0.5, 0.5];
        let f2 = vec![DVector::from_element(1, 3.0), DVector::from_element(1, -3.0)];
        assert_eq!(steady_state_residual(&p2, &f2), 0.0);
    }

    #[test]
    fn validation() {
        let g = canonical_graph();
        let d = AgentDynamics::oscillator();
        assert!(actuator(4, lti([1.0, 0.0], [0.0, 1.0]), 0.0).validate(&g, &d).is_ok());
        assert!(matches!(
            actuator(9, lti([1.0, 0.0], [0.0, 1.0]), 0.0).validate(&g, &d),
            Err(AttackError::TargetOutOfRange(9, 5))
        ));
        let wrong_dim = AttackSpec { channel: Channel::Sensor, ..actuator(4, lti([1.0, 0.0], [0.0, 1.0]), 0.0) };
        assert!(matches!(wrong_dim.validate(&g, &d), Err(AttackError::DimensionMismatch(_))));
        let bad_link = AttackSpec {
            channel: Channel::Link { from: 0 },
            generator: Generator::Waveform {
                terms: vec![WaveTerm::Constant { value: 1.0 }],
                direction: DVector::zeros(2),
            },
            ..actuator(4, non_imp_waveform(), 0.0)
        };
        assert_eq!(bad_link.validate(&g, &d), Err(AttackError::NotAnEdge { from: 0, target: 4 }));
    }
}
