//! JSON scenario files. Field names follow the simulator's `Scenario`;
//! matrices are lists of rows and agent indices are 0-based.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rescon_core::attack::{AttackSpec, Channel, Generator, WaveTerm};
use rescon_core::detection::{FoldedKlMethod, DEFAULT_WARMUP, DEFAULT_WINDOW};
use rescon_core::dynamics::{AgentDynamics, GainDesign, NoiseModel, DEFAULT_SAFETY_FACTOR};
use rescon_core::graph::DiGraph;
use rescon_core::mitigation::{DEFAULT_KAPPA, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, DEFAULT_TRUST_WINDOW};
use rescon_core::sim::scenario::{default_initial_states, DetectorSettings, TrustSettings, DEFAULT_DIVERGENCE_CAP};
use rescon_core::sim::{ConfigError, GainsSpec, Scenario, Thresholds};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub graph: GraphFile,
    pub dynamics: DynamicsFile,
    pub gains: GainsFile,
    pub noise: NoiseFile,
    #[serde(default)]
    pub attacks: Vec<AttackFile>,
    #[serde(default)]
    pub detector: DetectorFile,
    #[serde(default)]
    pub trust: TrustFile,
    #[serde(default)]
    pub mitigation: bool,
    pub t_end: f64,
    pub dt: f64,
    /// Defaults to x_i(0) = (k, -k) / 2 with k = i + 1.
    #[serde(default)]
    pub x0: Option<Rows>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub divergence_cap: f64,
}

fn default_cap() -> f64 {
    DEFAULT_DIVERGENCE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: usize,
    /// [tail, head, weight]
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsFile {
    pub a: Rows,
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GainsFile {
    Design {
        q: Rows,
        r: Rows,
        #[serde(default = "default_safety")]
        safety_factor: f64,
    },
    Explicit {
        k: Rows,
        c: f64,
    },
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFile {
    /// Covariance of every edge's channel noise.
    pub covariance: Rows,
    #[serde(default)]
    pub overrides: Vec<NoiseOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseOverride {
    pub tail: usize,
    pub head: usize,
    pub covariance: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackFile {
    pub target: usize,
    pub channel: ChannelFile,
    pub generator: GeneratorFile,
    pub t_start: f64,
    #[serde(default)]
    pub t_stop: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelFile {
    Actuator,
    Sensor,
    Link { from: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorFile {
    Lti { psi: Rows, f0: Vec<f64>, output_map: Rows },
    Waveform { terms: Vec<WaveTermFile>, direction: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveTermFile {
    Constant {
        value: f64,
    },
    Sine {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    Exponential {
        amplitude: f64,
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorFile {
    pub window: usize,
    pub warmup: f64,
    pub folded_kl: FoldedKlMethod,
    /// Absent: calibrated before running.
    pub thresholds: Option<ThresholdsFile>,
}

impl Default for DetectorFile {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, warmup: DEFAULT_WARMUP, folded_kl: FoldedKlMethod::default(), thresholds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsFile {
    pub gamma_imp: Vec<f64>,
    pub gamma_nonimp: Vec<f64>,
    pub delta: Vec<f64>,
}

impl From<&Thresholds> for ThresholdsFile {
    fn from(t: &Thresholds) -> Self {
        Self { gamma_imp: t.gamma_imp.clone(), gamma_nonimp: t.gamma_nonimp.clone(), delta: t.delta.clone() }
    }
}

impl From<&ThresholdsFile> for Thresholds {
    fn from(t: &ThresholdsFile) -> Self {
        Self { gamma_imp: t.gamma_imp.clone(), gamma_nonimp: t.gamma_nonimp.clone(), delta: t.delta.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustFile {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub window: usize,
}

impl Default for TrustFile {
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

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>, CliError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(schema(format!("{what}: expected a non-empty rectangular list of rows")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Input(m) => schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files always serialize")
    }

    pub fn to_scenario(&self) -> Result<Scenario, CliError> {
        let graph = DiGraph::from_edges(self.graph.n, &self.graph.edges).map_err(ConfigError::from)?;
        let dynamics =
            AgentDynamics::new(matrix(&self.dynamics.a, "dynamics.a")?, matrix(&self.dynamics.b, "dynamics.b")?)
                .map_err(ConfigError::from)?;
        let gains = match &self.gains {
            GainsFile::Design { q, r, safety_factor } => GainsSpec::Design {
                q: matrix(q, "gains.design.q")?,
                r: matrix(r, "gains.design.r")?,
                safety_factor: *safety_factor,
            },
            GainsFile::Explicit { k, c } => {
                GainsSpec::Explicit(GainDesign { k: matrix(k, "gains.explicit.k")?, c: *c })
            }
        };
        let mut overrides = BTreeMap::new();
        for o in &self.noise.overrides {
            let cov = matrix(&o.covariance, "noise.overrides.covariance")?;
            if overrides.insert((o.tail, o.head), cov).is_some() {
                return Err(schema(format!("noise override for {} -> {} given twice", o.tail, o.head)));
            }
        }
        let noise = NoiseModel::new(&graph, matrix(&self.noise.covariance, "noise.covariance")?, overrides)
            .map_err(ConfigError::from)?;
        let attacks = self.attacks.iter().map(AttackFile::to_spec).collect::<Result<Vec<_>, _>>()?;
        let x0 = match &self.x0 {
            Some(x) => x.iter().map(|v| DVector::from_column_slice(v)).collect(),
            None => default_initial_states(graph.n(), dynamics.n_x()),
        };
        let s = Scenario {
            name: self.name.clone(),
            graph,
            dynamics,
            gains,
            noise,
            attacks,
            detector: DetectorSettings {
                window: self.detector.window,
                warmup: self.detector.warmup,
                folded_kl: self.detector.folded_kl,
                thresholds: self.detector.thresholds.as_ref().map(Thresholds::from),
            },
            trust: TrustSettings {
                kappa1: self.trust.kappa1,
                kappa2: self.trust.kappa2,
                kappa3: self.trust.kappa3,
                lambda1: self.trust.lambda1,
                lambda2: self.trust.lambda2,
                window: self.trust.window,
            },
            mitigation: self.mitigation,
            t_end: self.t_end,
            dt: self.dt,
            x0,
            seed: self.seed,
            divergence_cap: self.divergence_cap,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        let gains = match &s.gains {
            GainsSpec::Design { q, r, safety_factor } => {
                GainsFile::Design { q: rows(q), r: rows(r), safety_factor: *safety_factor }
            }
            GainsSpec::Explicit(g) => GainsFile::Explicit { k: rows(&g.k), c: g.c },
        };
        Self {
            name: s.name.clone(),
            graph: GraphFile { n: s.n(), edges: s.graph.edges() },
            dynamics: DynamicsFile { a: rows(s.dynamics.a()), b: rows(s.dynamics.b()) },
            gains,
            noise: NoiseFile {
                covariance: rows(s.noise.default_cov()),
                overrides: s
                    .noise
                    .overrides()
                    .iter()
                    .map(|(&(tail, head), c)| NoiseOverride { tail, head, covariance: rows(c) })
                    .collect(),
            },
            attacks: s.attacks.iter().map(AttackFile::from_spec).collect(),
            detector: DetectorFile {
                window: s.detector.window,
                warmup: s.detector.warmup,
                folded_kl: s.detector.folded_kl,
                thresholds: s.detector.thresholds.as_ref().map(ThresholdsFile::from),
            },
            trust: TrustFile {
                kappa1: s.trust.kappa1,
                kappa2: s.trust.kappa2,
                kappa3: s.trust.kappa3,
                lambda1: s.trust.lambda1,
                lambda2: s.trust.lambda2,
                window: s.trust.window,
            },
            mitigation: s.mitigation,
            t_end: s.t_end,
            dt: s.dt,
            x0: Some(s.x0.iter().map(|v| v.iter().copied().collect()).collect()),
            seed: s.seed,
            divergence_cap: s.divergence_cap,
        }
    }
}

impl AttackFile {
    fn to_spec(&self) -> Result<AttackSpec, CliError> {
        let channel = match self.channel {
            ChannelFile::Actuator => Channel::Actuator,
            ChannelFile::Sensor => Channel::Sensor,
            ChannelFile::Link { from } => Channel::Link { from },
        };
        let generator = match &self.generator {
            GeneratorFile::Lti { psi, f0, output_map } => Generator::Lti {
                psi: matrix(psi, "generator.lti.psi")?,
                f0: DVector::from_column_slice(f0),
                output_map: matrix(output_map, "generator.lti.output_map")?,
            },
            GeneratorFile::Waveform { terms, direction } => Generator::Waveform {
                terms: terms
                    .iter()
                    .map(|t| match *t {
                        WaveTermFile::Constant { value } => WaveTerm::Constant { value },
                        WaveTermFile::Sine { amplitude, omega, phase } => WaveTerm::Sine { amplitude, omega, phase },
                        WaveTermFile::Exponential { amplitude, rate } => WaveTerm::Exponential { amplitude, rate },
                    })
                    .collect(),
                direction: DVector::from_column_slice(direction),
            },
        };
        Ok(AttackSpec { target: self.target, channel, generator, t_start: self.t_start, t_stop: self.t_stop })
    }

    fn from_spec(a: &AttackSpec) -> Self {
        let channel = match a.channel {
            Channel::Actuator => ChannelFile::Actuator,
            Channel::Sensor => ChannelFile::Sensor,
            Channel::Link { from } => ChannelFile::Link { from },
        };
        let generator = match &a.generator {
            Generator::Lti { psi, f0, output_map } => {
                GeneratorFile::Lti { psi: rows(psi), f0: f0.iter().copied().collect(), output_map: rows(output_map) }
            }
            Generator::Waveform { terms, direction } => GeneratorFile::Waveform {
                terms: terms
                    .iter()
                    .map(|t| match *t {
                        WaveTerm::Constant { value } => WaveTermFile::Constant { value },
                        WaveTerm::Sine { amplitude, omega, phase } => WaveTermFile::Sine { amplitude, omega, phase },
                        WaveTerm::Exponential { amplitude, rate } => WaveTermFile::Exponential { amplitude, rate },
                    })
                    .collect(),
                direction: direction.iter().copied().collect(),
            },
        };
        Self { target: a.target, channel, generator, t_start: a.t_start, t_stop: a.t_stop }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rescon_core::sim::scenario::{imp_sine_attack, offset_sine_attack};

    fn sample() -> Scenario {
        let mut s = Scenario::canonical();
        s.attacks.push(imp_sine_attack(4, 20.0, 20.0));
        s.attacks.push(offset_sine_attack(3, 10.0, 5.0, 2.0, 25.0));
        s.detector.thresholds = Some(Thresholds::uniform(5, 0.5, 2.0));
        s.seed = 9;
        s
    }

    #[test]
    fn file_to_scenario_and_back_is_idempotent() {
        let file = ScenarioFile::from_scenario(&sample());
        let again = ScenarioFile::from_scenario(&file.to_scenario().unwrap());
        assert_eq!(file, again);
        let reparsed = ScenarioFile::parse(&file.to_json()).unwrap();
        assert_eq!(reparsed.to_json(), file.to_json());
        assert_eq!(reparsed.to_scenario().unwrap(), sample());
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let mut v: serde_json::Value = serde_json::from_str(&ScenarioFile::from_scenario(&sample()).to_json()).unwrap();
        v["detector"]["windw"] = 3.into();
        assert!(matches!(ScenarioFile::parse(&v.to_string()), Err(CliError::Input(_))));
        let mut v: serde_json::Value = serde_json::from_str(&ScenarioFile::from_scenario(&sample()).to_json()).unwrap();
        v["attacks"][1]["generator"]["waveform"]["terms"][1]["sine"]["freq"] = 1.into();
        assert!(matches!(ScenarioFile::parse(&v.to_string()), Err(CliError::Input(_))));
    }

    #[test]
    fn ragged_matrices_are_schema_errors_and_bad_values_config_errors() {
        let mut f = ScenarioFile::from_scenario(&sample());
        f.dynamics.a = vec![vec![0.0, -1.0], vec![1.0]];
        assert!(matches!(f.to_scenario(), Err(CliError::Input(_))));
        let mut f = ScenarioFile::from_scenario(&sample());
        f.dt = -1.0;
        assert!(matches!(f.to_scenario(), Err(CliError::Config(_))));
        let mut f = ScenarioFile::from_scenario(&sample());
        f.graph.edges.push((0, 9, 1.0));
        assert!(matches!(f.to_scenario(), Err(CliError::Config(_))));
    }

    #[test]
    fn omitted_sections_take_defaults() {
        let mut v: serde_json::Value =
            serde_json::from_str(&ScenarioFile::from_scenario(&Scenario::canonical()).to_json()).unwrap();
        let obj = v.as_object_mut().unwrap();
        for k in ["detector", "trust", "x0", "seed", "divergence_cap", "attacks", "mitigation"] {
            obj.remove(k);
        }
        let s = ScenarioFile::parse(&v.to_string()).unwrap().to_scenario().unwrap();
        let c = Scenario::canonical();
        assert_eq!(s.x0, c.x0);
        assert_eq!(s.detector, c.detector);
        assert_eq!(s.trust, c.trust);
        assert_eq!(s.divergence_cap, DEFAULT_DIVERGENCE_CAP);
    }
}
