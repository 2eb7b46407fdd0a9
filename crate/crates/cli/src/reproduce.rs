//! The reproduction suite: runs the bundled presets and checks the
//! acceptance criteria, each reported with measured and expected values.

use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rescon_core::attack::{self, attack_signal};
use rescon_core::dynamics::GainDesign;
use rescon_core::graph::{self, DiGraph};
use rescon_core::linalg;
use rescon_core::sim::calibrate::{self, Calibration};
use rescon_core::sim::metrics::{self, DetectorKind, Series};
use rescon_core::sim::{run_scenario, GainsSpec, Scenario, Thresholds, Trace};
use rescon_core::stats::{self, FoldedGaussianParams};
use serde::Serialize;

use crate::presets;
use crate::CliError;

pub const CRITERIA: [u8; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 9];
pub const CALIBRATION_RUNS: usize = 20;
pub const CALIBRATION_FACTOR: f64 = 3.0;
/// Seeds for the attack-free false-positive sweep, disjoint from the calibration seeds.
pub const FALSE_POSITIVE_SEEDS: std::ops::Range<u64> = 1000..1050;
/// Noise realizations averaged for the tracking-error comparison.
pub const NOISE_SEEDS: u64 = 3;
/// An edge whose effective weight fell below this share of its nominal weight counts as cut.
pub const CUT_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: String,
    pub expected: String,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, measured: impl Into<String>, expected: impl Into<String>, passed: bool) -> Self {
        Self { name: name.into(), measured: measured.into(), expected: expected.into(), passed }
    }

    fn below(name: &str, value: f64, bound: f64) -> Self {
        Self::new(name, format!("{value:.4e}"), format!("< {bound:e}"), value < bound)
    }

    fn above(name: &str, value: f64, bound: f64) -> Self {
        Self::new(name, format!("{value:.4e}"), format!("> {bound:e}"), value > bound)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let failing: Vec<&Check> = self.checks.iter().filter(|c| !c.passed).collect();
        let shown = if failing.is_empty() { self.checks.iter().collect() } else { failing };
        let detail: Vec<String> =
            shown.iter().map(|c| format!("{} = {} ({})", c.name, c.measured, c.expected)).collect();
        write!(
            f,
            "criterion {} [{}] {} ({:.1} s): {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.seconds,
            detail.join("; ")
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub seed: u64,
    pub coupling_override: Option<f64>,
    pub passed: bool,
    pub seconds: f64,
    pub criteria: Vec<CriterionResult>,
}

pub fn title(id: u8) -> &'static str {
    match id {
        1 => "nominal consensus",
        2 => "root compromise destabilizes the network",
        3 => "non-root compromise stays local",
        4 => "non-IMP attack keeps the input away from zero",
        5 => "detection latency and false positives",
        6 => "mitigation restores intact-agent consensus",
        7 => "folded KL closed form against the numeric oracle",
        8 => "graph spectral and robustness oracles",
        9 => "determinism",
        _ => "unknown criterion",
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Replaces the designed coupling gain c in every preset.
    pub coupling: Option<f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 42, coupling: None }
    }
}

/// Presets resolved once, plus the shared threshold calibration.
pub struct Suite {
    opts: SuiteOptions,
    calibration: OnceLock<Result<Calibration, String>>,
}

type Outcome = Result<Vec<Check>, String>;

impl Suite {
    pub fn new(opts: SuiteOptions) -> Self {
        Self { opts, calibration: OnceLock::new() }
    }

    /// Preset with the suite seed and coupling override applied, thresholds unset.
    pub fn preset(&self, name: &str) -> Result<Scenario, String> {
        let p = presets::find(name).ok_or_else(|| format!("no preset {name}"))?;
        let mut s = p.scenario().map_err(|e| e.to_string())?;
        s.seed = self.opts.seed;
        if let Some(c) = self.opts.coupling {
            let k = s.resolve_gains().map_err(|e| e.to_string())?.k;
            s.gains = GainsSpec::Explicit(GainDesign { k, c });
        }
        Ok(s)
    }

    /// Thresholds from M = 20 attack-free runs at k = 3, over the longest preset horizon.
    pub fn calibration(&self) -> Result<&Calibration, String> {
        self.calibration
            .get_or_init(|| {
                let mut base = self.preset("fig2")?;
                base.t_end = presets::PRESETS
                    .iter()
                    .filter_map(|p| p.scenario().ok())
                    .map(|s| s.t_end)
                    .fold(base.t_end, f64::max);
                calibrate::calibrate_thresholds(&base, CALIBRATION_RUNS, CALIBRATION_FACTOR).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn calibrated(&self, name: &str) -> Result<Scenario, String> {
        let mut s = self.preset(name)?;
        s.detector.thresholds = Some(self.calibration()?.thresholds.clone());
        Ok(s)
    }

    pub fn run(&self, id: u8) -> CriterionResult {
        let start = Instant::now();
        let outcome = match id {
            1 => self.nominal_consensus(),
            2 => self.destabilization(),
            3 => self.localization(),
            4 => self.no_steady_state(),
            5 => self.detection(),
            6 => self.mitigation(),
            7 => folded_kl_numerics(),
            8 => graph_oracles(),
            9 => self.determinism(),
            _ => Err(format!("no criterion {id}")),
        };
        let checks = outcome.unwrap_or_else(|e| vec![Check::new("run", e, "completes", false)]);
        CriterionResult {
            id,
            title: title(id),
            passed: !checks.is_empty() && checks.iter().all(|c| c.passed),
            seconds: start.elapsed().as_secs_f64(),
            checks,
        }
    }

    pub fn run_all(&self, ids: &[u8], mut progress: impl FnMut(&CriterionResult)) -> Report {
        let start = Instant::now();
        let criteria: Vec<CriterionResult> = ids
            .iter()
            .map(|&id| {
                let r = self.run(id);
                progress(&r);
                r
            })
            .collect();
        Report {
            seed: self.opts.seed,
            coupling_override: self.opts.coupling,
            passed: criteria.iter().all(|c| c.passed),
            seconds: start.elapsed().as_secs_f64(),
            criteria,
        }
    }

    /// Attack-free canonical run with noisy links. Without mitigation the
    /// thresholds only label the trace, so this run does not wait for calibration.
    fn nominal_consensus(&self) -> Outcome {
        let mut s = self.preset("fig2")?;
        s.detector.thresholds = Some(Thresholds::never(s.n()));
        let start = Instant::now();
        let trace = run(&s)?;
        let elapsed = start.elapsed().as_secs_f64();
        let mut checks = consensus_checks(&s, &trace, "")?;
        checks.push(Check::below("runtime [s]", elapsed, 2.0));
        Ok(checks)
    }

    fn destabilization(&self) -> Outcome {
        let s = self.calibrated("fig3")?;
        let trace = run(&s)?;
        let t_div = trace.outcome.divergence_time;
        let mut checks = vec![Check::new(
            "divergence flag",
            format!("{} at t = {}", trace.outcome.diverged, t_div.map_or("-".into(), |t| format!("{t:.3} s"))),
            "true by t = 60 s",
            trace.outcome.diverged && t_div.is_some_and(|t| t <= 60.0),
        )];
        checks.push(instability_check(&s, true)?);
        Ok(checks)
    }

    fn localization(&self) -> Outcome {
        let s = self.calibrated("fig4")?;
        let trace = run(&s)?;
        let intact = [0, 1, 2];
        let mut checks =
            vec![Check::new("divergence flag", trace.outcome.diverged.to_string(), "false", !trace.outcome.diverged)];
        let tail = metrics::consensus_metrics(&trace, &intact).map_err(|e| e.to_string())?.tail_average;
        checks.push(Check::below("agents 0-2 tail disagreement", tail, 1e-2));
        let from = tail_start(&trace);
        let dev = metrics::deviation_from_subset(&trace, 3, &intact, from).map_err(|e| e.to_string())?;
        checks.push(Check::above("agent 3 tail distance from mean of 0-2", dev, 0.1));
        checks.push(instability_check(&s, false)?);

        let onset = s.first_attack_start().unwrap_or(0.0);
        let mut attacked = [0.0; 3];
        let mut baseline = [0.0; 3];
        for r in 0..NOISE_SEEDS {
            let mut a = s.clone();
            a.seed = s.seed + r;
            let ta = if r == 0 { trace.clone() } else { run(&a)? };
            let tb = run(&a.attack_free())?;
            for &i in &intact {
                attacked[i] +=
                    metrics::mean_norm(&ta, Series::TrackingError, i, onset, s.t_end).map_err(|e| e.to_string())?;
                baseline[i] +=
                    metrics::mean_norm(&tb, Series::TrackingError, i, onset, s.t_end).map_err(|e| e.to_string())?;
            }
        }
        for &i in &intact {
            let (a, b) = (attacked[i] / NOISE_SEEDS as f64, baseline[i] / NOISE_SEEDS as f64);
            let name = format!("agent {i} mean |eta| attacked / attack-free");
            checks.push(if b == 0.0 {
                // No in-neighbors: the tracking error is identically zero in both runs.
                Check::new(name, format!("{a:.3e} / {b:.3e}"), "identically zero", a == 0.0)
            } else {
                Check::below(&name, a / b, 5.0)
            });
        }
        Ok(checks)
    }

    fn no_steady_state(&self) -> Outcome {
        let s = self.calibrated("fig7")?;
        let attacked = run(&s)?;
        let free = run(&s.attack_free())?;
        let from = s.t_end - 10.0;
        let a = metrics::mean_norm(&attacked, Series::Input, 4, from, s.t_end).map_err(|e| e.to_string())?;
        let b = metrics::mean_norm(&free, Series::Input, 4, from, s.t_end).map_err(|e| e.to_string())?;
        Ok(vec![
            Check::above("agent 4 mean |u^c| last 10 s / attack-free", a / b, 10.0),
            Check::new("values", format!("{a:.4e} vs {b:.4e}"), "for reference", true),
        ])
    }

    fn detection(&self) -> Outcome {
        let mut checks = Vec::new();
        for (name, kind) in [("fig4", DetectorKind::Imp), ("fig7", DetectorKind::NonImp)] {
            let s = self.calibrated(name)?;
            let trace = run(&s)?;
            let onset = s.first_attack_start().ok_or("preset has no attack")?;
            let lat = metrics::detection_latency(&trace, 3, onset, kind);
            checks.push(Check::new(
                format!("{name} agent 3 {kind:?} latency [s]"),
                lat.map_or("never".into(), |l| format!("{l:.3}")),
                "< 0.5",
                lat.is_some_and(|l| l < 0.5),
            ));
        }
        let s = self.calibrated("fig2")?;
        let seeds: Vec<u64> = FALSE_POSITIVE_SEEDS.collect();
        let report = calibrate::false_positive_runs(&s, &seeds).map_err(|e| e.to_string())?;
        for (i, rate) in report.rates().into_iter().enumerate() {
            checks.push(Check::below(
                &format!("agent {i} false-positive step rate over {} seeds", seeds.len()),
                rate,
                0.01,
            ));
        }
        Ok(checks)
    }

    fn mitigation(&self) -> Outcome {
        let mut checks = Vec::new();
        for name in ["fig6", "fig9"] {
            let s = self.calibrated(name)?;
            let trace = run(&s)?;
            let intact = s.intact();
            let tail = metrics::consensus_metrics(&trace, &intact).map_err(|e| e.to_string())?.tail_average;
            checks.push(Check::below(&format!("{name} intact tail disagreement"), tail, 1e-2));
            let last = trace.len() - 1;
            let eff = metrics::effective_graph(&trace, &s.graph, last);
            let weakest = trace
                .edges
                .iter()
                .filter(|(j, i)| intact.contains(j) && intact.contains(i))
                .map(|&(j, i)| eff.a(i, j) / s.graph.a(i, j))
                .fold(f64::INFINITY, f64::min);
            let tree = metrics::effective_spanning_tree(&trace, &s.graph, last, &intact, CUT_WEIGHT);
            checks.push(Check::new(
                format!("{name} effective intact graph has a spanning tree at t_end"),
                format!("{tree} (weakest intact edge {weakest:.3})"),
                "true",
                tree,
            ));
        }
        let mut s = self.calibrated("fig2")?;
        s.mitigation = true;
        let trace = run(&s)?;
        checks.extend(consensus_checks(&s, &trace, "mitigation on, ")?);
        Ok(checks)
    }

    fn determinism(&self) -> Outcome {
        let s = self.calibrated("fig4")?;
        let mut bytes = Vec::new();
        for _ in 0..2 {
            let mut buf = Vec::new();
            run(&s)?.write_csv(&mut buf).map_err(|e| e.to_string())?;
            bytes.push(buf);
        }
        let same = bytes[0] == bytes[1];
        Ok(vec![Check::new(
            "fig4 trace.csv, two runs with the same seed",
            format!("{} / {} bytes, identical: {same}", bytes[0].len(), bytes[1].len()),
            "identical",
            same,
        )])
    }
}

fn run(s: &Scenario) -> Result<Trace, String> {
    run_scenario(s).map_err(|e| e.to_string())
}

fn tail_start(trace: &Trace) -> f64 {
    trace.t.last().copied().unwrap_or(0.0) * (1.0 - metrics::TAIL_FRACTION)
}

fn consensus_checks(s: &Scenario, trace: &Trace, prefix: &str) -> Outcome {
    let all: Vec<usize> = (0..s.n()).collect();
    let tail = metrics::consensus_metrics(trace, &all).map_err(|e| e.to_string())?.tail_average;
    let from = s.t_end - 5.0;
    let mut worst = 0.0f64;
    for i in 0..s.n() {
        worst = worst.max(metrics::norm_of_mean(trace, Series::Input, i, from, s.t_end).map_err(|e| e.to_string())?);
    }
    Ok(vec![
        Check::below(&format!("{prefix}tail disagreement"), tail, 1e-3),
        Check::below(&format!("{prefix}max_i |mean u_i| over last 5 s"), worst, 1e-3),
    ])
}

/// predicts_instability for the scenario's single attack, with the
/// steady-state residual evaluated over one attack period after onset.
fn instability_check(s: &Scenario, expected: bool) -> Result<Check, String> {
    let a = s.attacks.first().ok_or("preset has no attack")?;
    let class = attack::classify_attack(a, &s.dynamics);
    let p = graph::left_zero_eigenvector(&s.graph).map_err(|e| e.to_string())?;
    let n_u = s.dynamics.n_u();
    let residual = (0..64)
        .map(|k| {
            let t = a.t_start + k as f64 * std::f64::consts::TAU / 64.0;
            let f: Vec<DVector<f64>> =
                (0..s.n()).map(|i| if i == a.target { attack_signal(a, t) } else { DVector::zeros(n_u) }).collect();
            attack::steady_state_residual(&p, &f)
        })
        .fold(0.0, f64::max);
    let predicted = attack::predicts_instability(&class, residual > 1e-9);
    Ok(Check::new(
        "predicts_instability",
        format!("{predicted} ({:?}, max residual {residual:.3e})", class.kind),
        expected.to_string(),
        predicted == expected,
    ))
}

/// Closed-form folded KL against adaptive quadrature on random pairs with |mu| / sigma <= 0.3.
fn folded_kl_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: Option<(f64, f64, f64, FoldedGaussianParams, FoldedGaussianParams)> = None;
    let mut inside = 0;
    let pairs = 100;
    let draw = |rng: &mut ChaCha8Rng| -> Result<FoldedGaussianParams, String> {
        let sigma: f64 = rng.random_range(0.5..2.0);
        let mu = rng.random_range(-0.3..=0.3) * sigma;
        FoldedGaussianParams::new(mu, sigma * sigma).map_err(|e| e.to_string())
    };
    for _ in 0..pairs {
        let (p, q) = (draw(&mut rng)?, draw(&mut rng)?);
        let series = stats::folded_gaussian_kl(&p, &q).map_err(|e| e.to_string())?;
        let upper = 12.0 * p.sigma2.sqrt().max(q.sigma2.sqrt()) + p.mu.abs().max(q.mu.abs());
        let oracle =
            stats::kl_numeric_oracle(|x| p.density(x), |x| q.density(x), (0.0, upper)).map_err(|e| e.to_string())?;
        let err = (series - oracle).abs();
        let allowed = (0.1 * oracle.abs()).max(0.02);
        if err <= allowed {
            inside += 1;
        }
        if worst.as_ref().is_none_or(|w| err - allowed > w.0 - w.1) {
            worst = Some((err, allowed, oracle, p, q));
        }
    }
    let mut checks = vec![];
    let (err, allowed, oracle, p, q) = worst.expect("at least one pair");
    checks.push(Check::new(
        format!("pairs within max(10 %, 0.02) of the oracle ({pairs} pairs)"),
        format!(
            "{inside}; worst p = ({:.3}, {:.3}), q = ({:.3}, {:.3}): oracle {oracle:.4e}, error {err:.4e} > {allowed:.3e}",
            p.mu, p.sigma2, q.mu, q.sigma2
        ),
        format!("{pairs}"),
        inside == pairs,
    ));
    let z = FoldedGaussianParams::new(0.0, 1.3).map_err(|e| e.to_string())?;
    let same = stats::folded_gaussian_kl(&z, &z).map_err(|e| e.to_string())?;
    checks.push(Check::below("|KL| for equal zero-mean parameters", same.abs(), 1e-12));
    Ok(checks)
}

fn random_digraph(rng: &mut ChaCha8Rng) -> DiGraph {
    let n = rng.random_range(2..=6usize);
    let density: f64 = rng.random_range(0.1..0.6);
    let mut edges = Vec::new();
    for tail in 0..n {
        for head in 0..n {
            if tail != head && rng.random_bool(density) {
                edges.push((tail, head, rng.random_range(0.5..2.0)));
            }
        }
    }
    DiGraph::from_edges(n, &edges).expect("random edges are valid")
}

/// Reachability-based analyses against Laplacian spectra and subset enumeration.
fn graph_oracles() -> Outcome {
    const TOL: f64 = 1e-8;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let graphs = 100;
    let (mut simple_zero, mut blocks, mut robust_tree, mut with_tree) = (0, 0, 0, 0);
    for _ in 0..graphs {
        let g = random_digraph(&mut rng);
        let tree = graph::has_spanning_tree(&g);
        with_tree += usize::from(tree);
        let zeros = linalg::eigenvalues(&graph::laplacian(&g)).iter().filter(|z| z.norm() < TOL).count();
        simple_zero += usize::from(tree == (zeros == 1));
        let blocks_ok = match graph::root_partition(&g) {
            Ok(part) => {
                let rr = linalg::eigenvalues(&part.l_rr).iter().any(|z| z.norm() < TOL);
                let nrnr = part.l_nrnr.nrows() == 0 || linalg::eigenvalues(&part.l_nrnr).iter().all(|z| z.re > TOL);
                tree && rr && nrnr
            }
            Err(_) => !tree,
        };
        blocks += usize::from(blocks_ok);
        let robust = graph::is_r_robust(&g, 1).map_err(|e| e.to_string())?;
        robust_tree += usize::from(robust == tree);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let count =
        |name: &str, k: usize| Check::new(name, format!("{k}/{graphs}"), format!("{graphs}/{graphs}"), k == graphs);
    Ok(vec![
        count("spanning tree <=> simple zero Laplacian eigenvalue", simple_zero),
        count("root block singular, non-root block eigenvalues in the open right half-plane", blocks),
        count("1-robust <=> spanning tree", robust_tree),
        Check::new(
            "graphs with a spanning tree",
            format!("{with_tree}/{graphs}"),
            "both outcomes drawn",
            with_tree > 0 && with_tree < graphs,
        ),
        Check::below("runtime [s]", elapsed, 10.0),
    ])
}

pub fn parse_criteria(spec: &str) -> Result<Vec<u8>, CliError> {
    let mut ids = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let id: u8 = part.parse().map_err(|_| CliError::Input(format!("bad criterion id {part:?}")))?;
        if !CRITERIA.contains(&id) {
            return Err(CliError::Input(format!("no criterion {id}")));
        }
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    if ids.is_empty() {
        return Err(CliError::Input("no criteria selected".into()));
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_lists_parse_and_reject_unknown_ids() {
        assert_eq!(parse_criteria("1, 7,1").unwrap(), vec![1, 7]);
        assert!(parse_criteria("10").is_err());
        assert!(parse_criteria("x").is_err());
        assert!(parse_criteria("").is_err());
    }

    #[test]
    fn coupling_override_replaces_only_c() {
        let suite = Suite::new(SuiteOptions { seed: 5, coupling: Some(0.0) });
        let s = suite.preset("fig2").unwrap();
        assert_eq!(s.seed, 5);
        let g = s.resolve_gains().unwrap();
        assert_eq!(g.c, 0.0);
        let designed = Suite::new(SuiteOptions::default()).preset("fig2").unwrap().resolve_gains().unwrap();
        assert_eq!(g.k, designed.k);
    }

    #[test]
    fn failed_checks_lead_the_report_line() {
        let r = CriterionResult {
            id: 3,
            title: title(3),
            passed: false,
            seconds: 0.0,
            checks: vec![Check::below("a", 1.0, 2.0), Check::below("b", 3.0, 2.0)],
        };
        let line = r.to_string();
        assert!(line.starts_with("criterion 3 [FAIL]"));
        assert!(line.contains("b = ") && !line.contains("a = "));
    }
}
