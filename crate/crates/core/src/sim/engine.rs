use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{attack_signal, Channel};
use crate::detection::{self, DetectorConfig, DetectorState};
use crate::dynamics::{self, EdgeSamples, GainDesign, Rk4Propagator};
use crate::local::LocalView;
use crate::mitigation::{self, TrustConfig, TrustState, TrustWindows};
use crate::stats::{GaussianParams, StatsError};

use super::scenario::{Scenario, Thresholds};
use super::ConfigError;

/// Everything computed in one step, before the state is propagated.
pub struct StepRecord<'a> {
    pub step: usize,
    pub t: f64,
    /// True agent states.
    pub x: &'a [DVector<f64>],
    /// Tracking error fed to the controller (noisy, trust-weighted if mitigating).
    pub eta: &'a [DVector<f64>],
    /// Applied (corrupted) input u + u^d.
    pub u: &'a [DVector<f64>],
    /// Overall attack on each agent's input.
    pub f: &'a [DVector<f64>],
    pub detectors: &'a [DetectorState],
    pub trust: &'a [TrustState],
    /// Detector decisions are live for agent i.
    pub warm: &'a [bool],
}

pub trait Observer {
    fn observe(&mut self, rec: &StepRecord<'_>);
}

impl<F: FnMut(&StepRecord<'_>)> Observer for F {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        self(rec)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutcome {
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    /// First time each agent's state left the divergence cap.
    pub agent_divergence: Vec<Option<f64>>,
}

/// Resolved per-run configuration shared by all steps.
struct Setup {
    gains: GainDesign,
    prop: Rk4Propagator,
    detector: Vec<DetectorConfig>,
    trust: Vec<TrustConfig>,
}

fn setup(s: &Scenario) -> Result<Setup, ConfigError> {
    s.validate()?;
    let spectrum = dynamics::classify_a_spectrum(&s.dynamics);
    if spectrum.unstable {
        log::warn!("{}: A has eigenvalues with positive real part; the system is not marginally stable", s.name);
    }
    let thresholds: &Thresholds = s.detector.thresholds.as_ref().ok_or(ConfigError::MissingThresholds)?;
    let gains = s.resolve_gains()?;
    let prop = Rk4Propagator::new(&s.dynamics, s.dt)?;
    let n_x = s.dynamics.n_x();
    let mut detector = Vec::with_capacity(s.n());
    let mut trust = Vec::with_capacity(s.n());
    for i in 0..s.n() {
        let nominal = GaussianParams::new(DVector::zeros(n_x), s.noise.aggregate_cov(&s.graph, i))?;
        detector.push(DetectorConfig {
            window: s.detector.window,
            warmup: s.detector.warmup,
            gamma_imp: thresholds.gamma_imp[i],
            gamma_nonimp: thresholds.gamma_nonimp[i],
            nominal,
            folded_kl: s.detector.folded_kl,
            eval_from: s.detector.warmup - (s.detector.window + 1) as f64 * s.dt,
        });
        trust.push(TrustConfig {
            delta: thresholds.delta[i],
            kappa1: s.trust.kappa1,
            kappa2: s.trust.kappa2,
            kappa3: s.trust.kappa3,
            lambda1: s.trust.lambda1,
            lambda2: s.trust.lambda2,
            window: s.trust.window,
        });
    }
    Ok(Setup { gains, prop, detector, trust })
}

/// Runs `s` to completion, handing every step to `obs`.
pub fn run_with<O: Observer>(s: &Scenario, obs: &mut O) -> Result<RunOutcome, ConfigError> {
    let setup = setup(s)?;
    let g = &s.graph;
    let n = s.n();
    let n_x = s.dynamics.n_x();
    let n_u = s.dynamics.n_u();
    let steps = s.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);

    let mut x = s.x0.clone();
    let mut x_meas = vec![DVector::zeros(n_x); n];
    let mut eta = vec![DVector::zeros(n_x); n];
    let mut u = vec![DVector::zeros(n_u); n];
    let mut f = vec![DVector::zeros(n_u); n];
    let mut u_attack = vec![DVector::zeros(n_u); n];
    let mut sensor = vec![DVector::zeros(n_x); n];
    // Link corruption on edge j -> i, stored at i * n + j.
    let mut link = vec![DVector::zeros(n_x); n * n];
    let link_edges: Vec<(usize, usize)> = s
        .attacks
        .iter()
        .filter_map(|a| match a.channel {
            Channel::Link { from } => Some((a.target, from)),
            _ => None,
        })
        .collect();
    let mut delivered = vec![DVector::zeros(n_x); n];
    let mut noise = EdgeSamples::zeros(n, n_x);
    let mut views: Vec<LocalView> = (0..n).map(|i| LocalView::new(g, i, n_x)).collect();
    let mut detectors = setup.detector.iter().map(DetectorState::new).collect::<Result<Vec<_>, StatsError>>()?;
    let mut trust: Vec<TrustState> = views.iter().map(|v| TrustState::new(v.neighbors().len())).collect();
    let mut windows: Vec<TrustWindows> =
        views.iter().map(|v| TrustWindows::new(v.neighbors().len(), s.trust.window)).collect();
    let mut warm = vec![false; n];
    let mut outcome = RunOutcome { agent_divergence: vec![None; n], ..Default::default() };
    let ck: DMatrix<f64> = &setup.gains.k * setup.gains.c;

    for step in 0..=steps {
        let t = step as f64 * s.dt;
        s.noise.sample(&mut rng, &mut noise);

        for v in u_attack.iter_mut().chain(f.iter_mut()) {
            v.fill(0.0);
        }
        for v in sensor.iter_mut() {
            v.fill(0.0);
        }
        for &(i, j) in &link_edges {
            link[i * n + j].fill(0.0);
        }
        for a in &s.attacks {
            if !a.is_active(t) {
                continue;
            }
            let sig = attack_signal(a, t);
            match a.channel {
                Channel::Actuator => u_attack[a.target] += &sig,
                Channel::Sensor => sensor[a.target] += &sig,
                Channel::Link { from } => link[a.target * n + from] += &sig,
            }
        }
        for i in 0..n {
            x_meas[i].copy_from(&x[i]);
            x_meas[i] += &sensor[i];
        }

        for i in 0..n {
            let nbrs = views[i].neighbors().to_vec();
            let mut corruption = DVector::<f64>::zeros(n_x);
            for (k, &j) in nbrs.iter().enumerate() {
                delivered[j].copy_from(&x_meas[j]);
                if !link_edges.is_empty() {
                    delivered[j] += &link[i * n + j];
                }
                let a = views[i].weights()[k];
                corruption += (&delivered[j] - &x[j] - &sensor[i]) * a;
            }
            f[i] += &u_attack[i];
            f[i] += &ck * corruption;
            views[i].observe(x_meas[i].as_slice(), |j| delivered[j].as_slice(), Some(&noise));
        }

        for i in 0..n {
            let cfg = &setup.detector[i];
            let (tau, phi) = views[i].error_sequences();
            let eta_bar = views[i].tracking_error();
            absorb(detection::imp_detector_step(&mut detectors[i], cfg, tau, phi, t));
            absorb(detection::nonimp_detector_step(&mut detectors[i], cfg, &eta_bar, t));
            warm[i] = detectors[i].is_warm(cfg, t);
            eta[i] = eta_bar;
        }

        if s.mitigation {
            for i in 0..n {
                windows[i].observe(&views[i]);
                if !warm[i] {
                    continue;
                }
                let cfg = &setup.trust[i];
                mitigation::confidence_imp_step(&mut trust[i], cfg, detectors[i].d_imp, s.dt);
                mitigation::confidence_nonimp_step(&mut trust[i], cfg, detectors[i].d_nonimp, s.dt);
                if windows[i].is_full() {
                    for e in 0..views[i].neighbors().len() {
                        let w = &windows[i];
                        absorb(mitigation::raw_trust_step(&mut trust[i], cfg, e, w.received(e), w.aggregate(), s.dt));
                    }
                }
            }
            for i in 0..n {
                let beliefs: Vec<f64> = views[i].neighbors().iter().map(|&j| trust[j].xi).collect();
                eta[i] = mitigation::resilient_tracking_error(&views[i], &trust[i].omega, &beliefs);
            }
        }

        for i in 0..n {
            u[i] = &ck * &eta[i];
            u[i] += &u_attack[i];
        }

        for (i, xi) in x.iter().enumerate() {
            if outcome.agent_divergence[i].is_none() && xi.iter().any(|v| !(v.abs() <= s.divergence_cap)) {
                outcome.agent_divergence[i] = Some(t);
                if !outcome.diverged {
                    outcome.diverged = true;
                    outcome.divergence_time = Some(t);
                    log::info!("{}: agent {i} crossed the divergence cap at t = {t}", s.name);
                }
            }
        }

        obs.observe(&StepRecord {
            step,
            t,
            x: &x,
            eta: &eta,
            u: &u,
            f: &f,
            detectors: &detectors,
            trust: &trust,
            warm: &warm,
        });

        if step < steps {
            for i in 0..n {
                x[i] = setup.prop.step(&x[i], &u[i]);
            }
        }
    }
    Ok(outcome)
}

/// Detector and trust updates report missing samples while their windows
/// fill; those steps simply leave the previous decision in place.
fn absorb<T>(r: Result<T, StatsError>) {
    if let Err(e) = r {
        if !matches!(e, StatsError::TooFewSamples { .. }) {
            log::debug!("statistics update skipped: {e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::imp_sine_attack;

    fn short(mut s: Scenario) -> Scenario {
        s.t_end = 0.05;
        s.detector.thresholds = Some(Thresholds::never(s.n()));
        s
    }

    #[test]
    fn record_count_is_floor_plus_one() {
        let mut s = short(Scenario::canonical());
        s.t_end = 0.0105;
        let mut count = 0;
        run_with(&s, &mut |_: &StepRecord| count += 1).unwrap();
        assert_eq!(count, 11);
    }

    #[test]
    fn missing_thresholds_is_a_config_error() {
        let s = Scenario::canonical();
        let r = run_with(&s, &mut |_: &StepRecord| {});
        assert!(matches!(r, Err(ConfigError::MissingThresholds)));
    }

    #[test]
    fn overall_attack_matches_composition() {
        let mut s = short(Scenario::canonical());
        s.attacks.push(imp_sine_attack(4, 20.0, 0.0));
        s.attacks.push(crate::attack::AttackSpec {
            target: 3,
            channel: Channel::Link { from: 2 },
            generator: crate::attack::Generator::Waveform {
                terms: vec![crate::attack::WaveTerm::Constant { value: 1.5 }],
                direction: DVector::from_vec(vec![1.0, -2.0]),
            },
            t_start: 0.0,
            t_stop: None,
        });
        s.attacks.push(crate::attack::AttackSpec {
            target: 2,
            channel: Channel::Sensor,
            generator: crate::attack::Generator::Waveform {
                terms: vec![crate::attack::WaveTerm::Constant { value: 0.5 }],
                direction: DVector::from_vec(vec![1.0, 1.0]),
            },
            t_start: 0.0,
            t_stop: None,
        });
        let gains = s.resolve_gains().unwrap();
        let mut worst: f64 = 0.0;
        run_with(&s, &mut |r: &StepRecord| {
            let want = crate::attack::compose_overall_attack(&s.attacks, &s.graph, &s.dynamics, &gains, r.t);
            for (a, b) in r.f.iter().zip(&want) {
                worst = worst.max((a - b).norm());
            }
        })
        .unwrap();
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn zero_noise_tracking_error_is_exact() {
        let mut s = short(Scenario::canonical());
        s.noise = crate::dynamics::NoiseModel::isotropic(&s.graph, 2, 0.0).unwrap();
        let mut worst: f64 = 0.0;
        run_with(&s, &mut |r: &StepRecord| {
            for i in 0..5 {
                let exact = dynamics::local_tracking_error(&s.graph, r.x, i, None);
                worst = worst.max((&r.eta[i] - exact).norm());
            }
        })
        .unwrap();
        assert_eq!(worst, 0.0);
    }
}
