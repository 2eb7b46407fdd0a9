use serde::{Deserialize, Serialize};

use super::metrics::{self, DetectorKind};
use super::scenario::Scenario;
use super::trace::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDetection {
    pub agent: usize,
    pub latency_imp: Option<f64>,
    pub latency_nonimp: Option<f64>,
    pub latency_either: Option<f64>,
    /// Share of live steps before the first attack with H1 from either detector.
    pub false_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    /// Tail max pairwise disagreement over all agents; null if one diverged.
    pub all_agents_tail: Option<f64>,
    pub intact_agents: Vec<usize>,
    pub intact_agents_tail: Option<f64>,
    /// Tail mean distance of each agent from the intact-agent mean.
    pub deviation_from_intact_mean: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub gamma_imp: Vec<f64>,
    pub gamma_nonimp: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub t_end: f64,
    pub dt: f64,
    pub records: usize,
    pub mitigation: bool,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    pub compromised: Vec<usize>,
    pub attack_start: Option<f64>,
    pub consensus: ConsensusSummary,
    pub detection: Vec<AgentDetection>,
    pub thresholds: Option<ThresholdSummary>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Summary {
    pub fn new(s: &Scenario, trace: &Trace) -> Self {
        let all: Vec<usize> = (0..s.n()).collect();
        let intact = s.intact();
        let tail =
            |subset: &[usize]| metrics::consensus_metrics(trace, subset).ok().and_then(|m| finite(m.tail_average));
        let tail_from = trace.t.last().copied().unwrap_or(0.0) * (1.0 - metrics::TAIL_FRACTION);
        let intact_diverged = intact.iter().any(|&i| trace.outcome.agent_divergence[i].is_some());
        let deviation_from_intact_mean = all
            .iter()
            .map(|&i| {
                if intact.is_empty() || intact_diverged || trace.outcome.agent_divergence[i].is_some() {
                    return None;
                }
                metrics::deviation_from_subset(trace, i, &intact, tail_from).ok().and_then(finite)
            })
            .collect();
        let attack_start = s.first_attack_start();
        let detection = all
            .iter()
            .map(|&i| {
                let lat = |k| attack_start.and_then(|t0| metrics::detection_latency(trace, i, t0, k));
                AgentDetection {
                    agent: i,
                    latency_imp: lat(DetectorKind::Imp),
                    latency_nonimp: lat(DetectorKind::NonImp),
                    latency_either: lat(DetectorKind::Either),
                    false_positive_rate: metrics::false_positive_rate(trace, i, attack_start),
                }
            })
            .collect();
        Self {
            scenario: s.name.clone(),
            seed: s.seed,
            t_end: s.t_end,
            dt: s.dt,
            records: trace.len(),
            mitigation: s.mitigation,
            diverged: trace.outcome.diverged,
            divergence_time: trace.outcome.divergence_time,
            compromised: s.compromised(),
            attack_start,
            consensus: ConsensusSummary {
                all_agents_tail: tail(&all),
                intact_agents_tail: if intact.is_empty() { None } else { tail(&intact) },
                intact_agents: intact,
                deviation_from_intact_mean,
            },
            detection,
            thresholds: s.detector.thresholds.as_ref().map(|t| ThresholdSummary {
                gamma_imp: t.gamma_imp.clone(),
                gamma_nonimp: t.gamma_nonimp.clone(),
                delta: t.delta.clone(),
            }),
        }
    }
}
