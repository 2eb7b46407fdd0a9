use nalgebra::{DMatrix, DVector};

use crate::attack::{AttackSpec, Channel, Generator, WaveTerm};
use crate::detection::{FoldedKlMethod, DEFAULT_WARMUP, DEFAULT_WINDOW, MIN_WINDOW};
use crate::dynamics::{self, AgentDynamics, GainDesign, NoiseModel, DEFAULT_SAFETY_FACTOR};
use crate::graph::{self, DiGraph};
use crate::mitigation::{DEFAULT_KAPPA, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, DEFAULT_TRUST_WINDOW};

use super::ConfigError;

pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e6;
pub const CANONICAL_NOISE_STD: f64 = 0.01;
pub const CANONICAL_R: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub enum GainsSpec {
    /// LQR design with c from the Laplacian spectrum.
    Design {
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        safety_factor: f64,
    },
    Explicit(GainDesign),
}

/// Per-agent detector thresholds and confidence scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub gamma_imp: Vec<f64>,
    pub gamma_nonimp: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Thresholds {
    pub fn uniform(n: usize, gamma: f64, delta: f64) -> Self {
        Self { gamma_imp: vec![gamma; n], gamma_nonimp: vec![gamma; n], delta: vec![delta; n] }
    }

    /// Thresholds that never fire, used while calibrating.
    pub fn never(n: usize) -> Self {
        Self::uniform(n, f64::INFINITY, 1.0)
    }

    fn validate(&self, n: usize) -> Result<(), ConfigError> {
        for (name, v) in [("gamma_imp", &self.gamma_imp), ("gamma_nonimp", &self.gamma_nonimp), ("delta", &self.delta)]
        {
            if v.len() != n {
                return Err(ConfigError::Thresholds(format!("{name} has {} entries for {n} agents", v.len())));
            }
            if v.iter().any(|x| x.is_nan() || *x <= 0.0) {
                return Err(ConfigError::Thresholds(format!("{name} entries must be positive")));
            }
        }
        if self.delta.iter().any(|d| d.is_infinite()) {
            return Err(ConfigError::Thresholds("delta entries must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSettings {
    pub window: usize,
    pub warmup: f64,
    pub folded_kl: FoldedKlMethod,
    pub thresholds: Option<Thresholds>,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, warmup: DEFAULT_WARMUP, folded_kl: FoldedKlMethod::default(), thresholds: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustSettings {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub window: usize,
}

impl Default for TrustSettings {
    fn default() -> Self {
        Self {
            kappa1: DEFAULT_KAPPA,
            kappa2: DEFAULT_KAPPA,
            kappa3: DEFAULT_KAPPA,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            window: DEFAULT_TRUST_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub graph: DiGraph,
    pub dynamics: AgentDynamics,
    pub gains: GainsSpec,
    pub noise: NoiseModel,
    pub attacks: Vec<AttackSpec>,
    pub detector: DetectorSettings,
    pub trust: TrustSettings,
    pub mitigation: bool,
    pub t_end: f64,
    pub dt: f64,
    pub x0: Vec<DVector<f64>>,
    pub seed: u64,
    pub divergence_cap: f64,
}

/// x_i(0) = (k, -k) / 2 with k the 1-based agent number, padded with zeros.
pub fn default_initial_states(n: usize, n_x: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|i| {
            let k = (i + 1) as f64 * 0.5;
            DVector::from_fn(n_x, |c, _| match c {
                0 => k,
                1 => -k,
                _ => 0.0,
            })
        })
        .collect()
}

/// f(t) = amplitude sin(t - t_start) from the oscillator's own exosystem.
pub fn imp_sine_attack(target: usize, amplitude: f64, t_start: f64) -> AttackSpec {
    AttackSpec {
        target,
        channel: Channel::Actuator,
        generator: Generator::Lti {
            psi: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            f0: DVector::from_vec(vec![amplitude, 0.0]),
            output_map: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        },
        t_start,
        t_stop: None,
    }
}

/// f(t) = offset + amplitude sin(omega (t - t_start)).
pub fn offset_sine_attack(target: usize, offset: f64, amplitude: f64, omega: f64, t_start: f64) -> AttackSpec {
    AttackSpec {
        target,
        channel: Channel::Actuator,
        generator: Generator::Waveform {
            terms: vec![WaveTerm::Constant { value: offset }, WaveTerm::Sine { amplitude, omega, phase: 0.0 }],
            direction: DVector::from_vec(vec![1.0]),
        },
        t_start,
        t_stop: None,
    }
}

impl Scenario {
    /// Five oscillators on the canonical digraph, noisy links, no attack.
    pub fn canonical() -> Self {
        let graph = graph::canonical_graph();
        let dynamics = AgentDynamics::oscillator();
        let noise = NoiseModel::isotropic(&graph, 2, CANONICAL_NOISE_STD).expect("canonical noise is valid");
        Self {
            name: "canonical".into(),
            x0: default_initial_states(graph.n(), 2),
            graph,
            dynamics,
            gains: GainsSpec::Design {
                q: DMatrix::identity(2, 2),
                r: DMatrix::from_element(1, 1, CANONICAL_R),
                safety_factor: DEFAULT_SAFETY_FACTOR,
            },
            noise,
            attacks: Vec::new(),
            detector: DetectorSettings::default(),
            trust: TrustSettings::default(),
            mitigation: false,
            t_end: 40.0,
            dt: 1e-3,
            seed: 0,
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
        }
    }

    /// Same scenario with every attack removed.
    pub fn attack_free(&self) -> Self {
        Self { name: format!("{}-attack-free", self.name), attacks: Vec::new(), ..self.clone() }
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Number of integration steps; the trace holds one more record.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }

    pub fn compromised(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.attacks.iter().map(|a| a.target).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn intact(&self) -> Vec<usize> {
        let bad = self.compromised();
        (0..self.n()).filter(|i| !bad.contains(i)).collect()
    }

    pub fn first_attack_start(&self) -> Option<f64> {
        self.attacks.iter().map(|a| a.t_start).min_by(f64::total_cmp)
    }

    pub fn resolve_gains(&self) -> Result<GainDesign, ConfigError> {
        match &self.gains {
            GainsSpec::Design { q, r, safety_factor } => {
                if !(safety_factor.is_finite() && *safety_factor > 0.0) {
                    return Err(ConfigError::Invalid(format!("safety_factor = {safety_factor}")));
                }
                Ok(dynamics::design_gains_with(&self.dynamics, &self.graph, q, r, *safety_factor)?)
            }
            GainsSpec::Explicit(g) => {
                if g.k.shape() != (self.dynamics.n_u(), self.dynamics.n_x()) {
                    return Err(ConfigError::Invalid(format!(
                        "K must be {}x{}",
                        self.dynamics.n_u(),
                        self.dynamics.n_x()
                    )));
                }
                if !g.c.is_finite() || g.c < 0.0 {
                    return Err(ConfigError::Invalid(format!("c = {}", g.c)));
                }
                Ok(g.clone())
            }
        }
    }

    /// Checks every invariant that does not need thresholds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n();
        let n_x = self.dynamics.n_x();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ConfigError::Invalid(format!("dt = {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(ConfigError::Invalid(format!("t_end = {}", self.t_end)));
        }
        if self.x0.len() != n || self.x0.iter().any(|x| x.len() != n_x) {
            return Err(ConfigError::Invalid(format!("x0 must hold {n} states of length {n_x}")));
        }
        if self.x0.iter().flat_map(|x| x.iter()).any(|v| !v.is_finite()) {
            return Err(ConfigError::Invalid("x0 must be finite".into()));
        }
        if self.noise.default_cov().nrows() != n_x {
            return Err(ConfigError::Invalid(format!("noise covariance must be {n_x}x{n_x}")));
        }
        if !(self.divergence_cap > 0.0) {
            return Err(ConfigError::Invalid(format!("divergence_cap = {}", self.divergence_cap)));
        }
        if self.detector.window < MIN_WINDOW {
            return Err(ConfigError::Invalid(format!("detector window must be at least {MIN_WINDOW}")));
        }
        if !(self.detector.warmup.is_finite() && self.detector.warmup >= 0.0) {
            return Err(ConfigError::Invalid(format!("warmup = {}", self.detector.warmup)));
        }
        let t = &self.trust;
        if [t.kappa1, t.kappa2, t.kappa3, t.lambda1, t.lambda2].iter().any(|v| !(v.is_finite() && *v > 0.0))
            || t.window < MIN_WINDOW
        {
            return Err(ConfigError::Invalid("trust rates and scales must be positive".into()));
        }
        for a in &self.attacks {
            a.validate(&self.graph, &self.dynamics)?;
        }
        if let Some(th) = &self.detector.thresholds {
            th.validate(n)?;
        }
        self.resolve_gains()?;
        Ok(())
    }
}
