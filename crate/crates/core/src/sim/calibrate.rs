use rayon::prelude::*;

use super::engine::{self, Observer, StepRecord};
use super::scenario::{Scenario, Thresholds};
use super::ConfigError;

pub const DEFAULT_CALIBRATION_RUNS: usize = 20;
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 3.0;
pub const DEFAULT_DELTA_FACTOR: f64 = 20.0;
/// Lower bound for thresholds and confidence scales. Agents whose statistic
/// is identically zero (the root, single in-neighbor IMP tests) would
/// otherwise get a zero threshold.
pub const THRESHOLD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: Thresholds,
    /// Largest live windowed average seen per agent over all runs.
    pub max_imp: Vec<f64>,
    pub max_nonimp: Vec<f64>,
    pub runs: usize,
    pub factor: f64,
    pub delta_factor: f64,
}

struct MaxAverages {
    imp: Vec<f64>,
    nonimp: Vec<f64>,
}

impl Observer for MaxAverages {
    fn observe(&mut self, r: &StepRecord<'_>) {
        for (i, d) in r.detectors.iter().enumerate() {
            if r.warm[i] {
                self.imp[i] = self.imp[i].max(d.avg_imp);
                self.nonimp[i] = self.nonimp[i].max(d.avg_nonimp);
            }
        }
    }
}

pub fn calibrate_thresholds(s: &Scenario, runs: usize, factor: f64) -> Result<Calibration, ConfigError> {
    calibrate_with(s, runs, factor, DEFAULT_DELTA_FACTOR)
}

/// Runs `runs` attack-free seeds (scenario seed + r) with silent detectors and
/// sets gamma = factor x max average per detector, delta = delta_factor x the
/// larger of the two maxima.
pub fn calibrate_with(s: &Scenario, runs: usize, factor: f64, delta_factor: f64) -> Result<Calibration, ConfigError> {
    if !s.attacks.is_empty() {
        return Err(ConfigError::RefusesAttackScenario);
    }
    if runs == 0 {
        return Err(ConfigError::Invalid("calibration needs at least one run".into()));
    }
    for (name, v) in [("factor", factor), ("delta factor", delta_factor)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ConfigError::Invalid(format!("{name} = {v}")));
        }
    }
    let n = s.n();
    let mut base = s.clone();
    base.mitigation = false;
    base.detector.thresholds = Some(Thresholds::never(n));
    base.validate()?;

    let per_run: Vec<Result<MaxAverages, ConfigError>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut run = base.clone();
            run.seed = s.seed.wrapping_add(r as u64);
            let mut obs = MaxAverages { imp: vec![0.0; n], nonimp: vec![0.0; n] };
            engine::run_with(&run, &mut obs)?;
            Ok(obs)
        })
        .collect();
    let mut max_imp = vec![0.0f64; n];
    let mut max_nonimp = vec![0.0f64; n];
    for r in per_run {
        let r = r?;
        for i in 0..n {
            max_imp[i] = max_imp[i].max(r.imp[i]);
            max_nonimp[i] = max_nonimp[i].max(r.nonimp[i]);
        }
    }
    let scale = |v: f64, k: f64| (k * v).max(THRESHOLD_FLOOR);
    let thresholds = Thresholds {
        gamma_imp: max_imp.iter().map(|&v| scale(v, factor)).collect(),
        gamma_nonimp: max_nonimp.iter().map(|&v| scale(v, factor)).collect(),
        delta: max_imp.iter().zip(&max_nonimp).map(|(&a, &b)| scale(a.max(b), delta_factor)).collect(),
    };
    Ok(Calibration { thresholds, max_imp, max_nonimp, runs, factor, delta_factor })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsePositiveReport {
    /// Live-detector steps per agent, summed over runs.
    pub live_steps: Vec<usize>,
    /// Steps on which either detector raised H1.
    pub alarms: Vec<usize>,
}

impl FalsePositiveReport {
    pub fn rates(&self) -> Vec<f64> {
        self.live_steps
            .iter()
            .zip(&self.alarms)
            .map(|(&l, &a)| if l == 0 { 0.0 } else { a as f64 / l as f64 })
            .collect()
    }
}

struct AlarmCounter(FalsePositiveReport);

impl Observer for AlarmCounter {
    fn observe(&mut self, r: &StepRecord<'_>) {
        for (i, d) in r.detectors.iter().enumerate() {
            if r.warm[i] {
                self.0.live_steps[i] += 1;
                self.0.alarms[i] += usize::from(d.any_attack());
            }
        }
    }
}

/// Attack-free false-positive counts of `s` (thresholds required) over the given seeds.
pub fn false_positive_runs(s: &Scenario, seeds: &[u64]) -> Result<FalsePositiveReport, ConfigError> {
    if !s.attacks.is_empty() {
        return Err(ConfigError::RefusesAttackScenario);
    }
    let n = s.n();
    let per_run: Vec<Result<FalsePositiveReport, ConfigError>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut run = s.clone();
            run.seed = seed;
            let mut obs = AlarmCounter(FalsePositiveReport { live_steps: vec![0; n], alarms: vec![0; n] });
            engine::run_with(&run, &mut obs)?;
            Ok(obs.0)
        })
        .collect();
    let mut total = FalsePositiveReport { live_steps: vec![0; n], alarms: vec![0; n] };
    for r in per_run {
        let r = r?;
        for i in 0..n {
            total.live_steps[i] += r.live_steps[i];
            total.alarms[i] += r.alarms[i];
        }
    }
    Ok(total)
}
