use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, DiGraph};

use super::trace::Trace;

/// Share of the trace treated as the tail by default.
pub const TAIL_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("agent subset is empty")]
    EmptySubset,
    #[error("agent {0} out of range")]
    AgentOutOfRange(usize),
    #[error("empty time range")]
    EmptyRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMetrics {
    /// Max pairwise ||x_i - x_j|| over the subset, per row.
    pub disagreement: Vec<f64>,
    /// Mean of `disagreement` over the tail; infinite if a subset agent diverged.
    pub tail_average: f64,
    /// Tail mean of ||x_i - subset mean|| per subset agent.
    pub deviation: Vec<f64>,
    pub diverged: bool,
}

fn check_agents(trace: &Trace, agents: &[usize]) -> Result<(), MetricsError> {
    if agents.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    match agents.iter().find(|&&i| i >= trace.n) {
        Some(&i) => Err(MetricsError::AgentOutOfRange(i)),
        None => Ok(()),
    }
}

fn tail_start(trace: &Trace, fraction: f64) -> usize {
    let rows = trace.len();
    rows - ((rows as f64 * fraction).ceil() as usize).clamp(1, rows)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn subset_mean(trace: &Trace, k: usize, subset: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; trace.n_x];
    for &i in subset {
        for (mc, xc) in m.iter_mut().zip(trace.x(k, i)) {
            *mc += xc / subset.len() as f64;
        }
    }
    m
}

pub fn consensus_metrics(trace: &Trace, subset: &[usize]) -> Result<ConsensusMetrics, MetricsError> {
    consensus_metrics_tail(trace, subset, TAIL_FRACTION)
}

pub fn consensus_metrics_tail(
    trace: &Trace,
    subset: &[usize],
    tail_fraction: f64,
) -> Result<ConsensusMetrics, MetricsError> {
    check_agents(trace, subset)?;
    if trace.is_empty() {
        return Err(MetricsError::EmptyRange);
    }
    if subset.iter().any(|&i| trace.outcome.agent_divergence.get(i).is_some_and(|d| d.is_some())) {
        return Ok(ConsensusMetrics {
            disagreement: Vec::new(),
            tail_average: f64::INFINITY,
            deviation: vec![f64::INFINITY; subset.len()],
            diverged: true,
        });
    }
    let disagreement: Vec<f64> = (0..trace.len())
        .map(|k| {
            let mut worst: f64 = 0.0;
            for (a, &i) in subset.iter().enumerate() {
                for &j in &subset[a + 1..] {
                    worst = worst.max(dist(trace.x(k, i), trace.x(k, j)));
                }
            }
            worst
        })
        .collect();
    let start = tail_start(trace, tail_fraction);
    let rows = (trace.len() - start) as f64;
    let tail_average = disagreement[start..].iter().sum::<f64>() / rows;
    let mut deviation = vec![0.0; subset.len()];
    for k in start..trace.len() {
        let m = subset_mean(trace, k, subset);
        for (d, &i) in deviation.iter_mut().zip(subset) {
            *d += dist(trace.x(k, i), &m) / rows;
        }
    }
    Ok(ConsensusMetrics { disagreement, tail_average, deviation, diverged: false })
}

/// Tail mean of ||x_agent - mean(x_subset)|| over rows with t >= from.
pub fn deviation_from_subset(trace: &Trace, agent: usize, subset: &[usize], from: f64) -> Result<f64, MetricsError> {
    check_agents(trace, subset)?;
    check_agents(trace, &[agent])?;
    let start = trace.row_at(from);
    if start >= trace.len() {
        return Err(MetricsError::EmptyRange);
    }
    let total: f64 = (start..trace.len()).map(|k| dist(trace.x(k, agent), &subset_mean(trace, k, subset))).sum();
    Ok(total / (trace.len() - start) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    /// Applied input u^c.
    Input,
    /// Tracking error fed to the controller.
    TrackingError,
}

fn series(trace: &Trace, which: Series, k: usize, i: usize) -> &[f64] {
    match which {
        Series::Input => trace.u(k, i),
        Series::TrackingError => trace.eta(k, i),
    }
}

fn row_range(trace: &Trace, from: f64, to: f64) -> Result<std::ops::Range<usize>, MetricsError> {
    let (a, b) = (trace.row_at(from), trace.row_at(to + 0.5 * trace.dt));
    if a >= b {
        Err(MetricsError::EmptyRange)
    } else {
        Ok(a..b)
    }
}

/// Time average of ||s_i(t)|| over [from, to].
pub fn mean_norm(trace: &Trace, which: Series, agent: usize, from: f64, to: f64) -> Result<f64, MetricsError> {
    check_agents(trace, &[agent])?;
    let r = row_range(trace, from, to)?;
    let len = r.len() as f64;
    Ok(r.map(|k| series(trace, which, k, agent).iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / len)
}

/// || time average of s_i(t) || over [from, to].
pub fn norm_of_mean(trace: &Trace, which: Series, agent: usize, from: f64, to: f64) -> Result<f64, MetricsError> {
    check_agents(trace, &[agent])?;
    let r = row_range(trace, from, to)?;
    let len = r.len() as f64;
    let mut acc: Vec<f64> = Vec::new();
    for k in r {
        let s = series(trace, which, k, agent);
        acc.resize(s.len(), 0.0);
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v / len;
        }
    }
    Ok(acc.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Imp,
    NonImp,
    Either,
}

fn alarm(trace: &Trace, kind: DetectorKind, k: usize, i: usize) -> bool {
    match kind {
        DetectorKind::Imp => trace.h_imp(k, i),
        DetectorKind::NonImp => trace.h_nonimp(k, i),
        DetectorKind::Either => trace.h_imp(k, i) || trace.h_nonimp(k, i),
    }
}

/// First time at or after `t_start` the agent raises H1, minus `t_start`.
pub fn detection_latency(trace: &Trace, agent: usize, t_start: f64, kind: DetectorKind) -> Option<f64> {
    if agent >= trace.n {
        return None;
    }
    (trace.row_at(t_start)..trace.len()).find(|&k| alarm(trace, kind, k, agent)).map(|k| trace.t[k] - t_start)
}

/// Share of live-detector rows before `until` on which either detector raised H1.
pub fn false_positive_rate(trace: &Trace, agent: usize, until: Option<f64>) -> Option<f64> {
    if agent >= trace.n {
        return None;
    }
    let end = until.map_or(trace.len(), |t| trace.row_at(t));
    let (mut live, mut alarms) = (0usize, 0usize);
    for k in 0..end {
        if trace.warm(k, agent) {
            live += 1;
            alarms += usize::from(alarm(trace, DetectorKind::Either, k, agent));
        }
    }
    (live > 0).then(|| alarms as f64 / live as f64)
}

/// Graph with weights Omega_ij xi_j a_ij at row k.
pub fn effective_graph(trace: &Trace, g: &DiGraph, k: usize) -> DiGraph {
    let mut w = g.adjacency().clone();
    for &(j, i) in &trace.edges {
        let omega = trace.omega(k, j, i).unwrap_or(1.0);
        w[(i, j)] *= omega * trace.xi(k, j);
    }
    DiGraph::from_adjacency(w).expect("scaled weights stay valid")
}

/// Whether the effective graph restricted to `subset` keeps a spanning tree
/// with every weight above `min_weight`.
pub fn effective_spanning_tree(trace: &Trace, g: &DiGraph, k: usize, subset: &[usize], min_weight: f64) -> bool {
    let eff = effective_graph(trace, g, k);
    let mut w = eff.adjacency().clone();
    w.iter_mut().for_each(|v| {
        if *v <= min_weight {
            *v = 0.0
        }
    });
    DiGraph::from_adjacency(w)
        .and_then(|pruned| pruned.subgraph(subset))
        .is_ok_and(|sub| graph::has_spanning_tree(&sub))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::engine::RunOutcome;

    fn synthetic(states: &[Vec<[f64; 2]>]) -> Trace {
        let rows = states.len();
        let n = states[0].len();
        let x: Vec<f64> = states.iter().flat_map(|r| r.iter().flat_map(|s| s.iter().copied())).collect();
        Trace {
            n,
            n_x: 2,
            n_u: 1,
            dt: 1.0,
            edges: Vec::new(),
            t: (0..rows).map(|k| k as f64).collect(),
            eta: x.clone(),
            x,
            u: (0..rows * n).map(|k| (k % 2) as f64 * 2.0 - 1.0).collect(),
            f: vec![0.0; rows * n],
            kl_imp: vec![0.0; rows * n],
            kl_nonimp: vec![0.0; rows * n],
            h_imp: vec![false; rows * n],
            h_nonimp: vec![false; rows * n],
            warm: vec![true; rows * n],
            xi: vec![1.0; rows * n],
            omega: Vec::new(),
            outcome: RunOutcome { agent_divergence: vec![None; n], ..Default::default() },
        }
    }

    #[test]
    fn identical_states_give_zero_metrics() {
        let tr = synthetic(&vec![vec![[1.0, 2.0]; 3]; 10]);
        let m = consensus_metrics(&tr, &[0, 1, 2]).unwrap();
        assert_eq!(m.tail_average, 0.0);
        assert!(m.deviation.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn constant_gap_is_the_disagreement() {
        let tr = synthetic(&vec![vec![[0.0, 0.0], [3.0, 4.0]]; 20]);
        let m = consensus_metrics(&tr, &[0, 1]).unwrap();
        assert_eq!(m.tail_average, 5.0);
        assert!(m.disagreement.iter().all(|&d| d == 5.0));
        assert_eq!(m.deviation, vec![2.5, 2.5]);
        assert_eq!(deviation_from_subset(&tr, 1, &[0], 0.0).unwrap(), 5.0);
    }

    #[test]
    fn empty_subset_is_rejected() {
        let tr = synthetic(&vec![vec![[0.0, 0.0]]; 2]);
        assert_eq!(consensus_metrics(&tr, &[]).unwrap_err(), MetricsError::EmptySubset);
    }

    #[test]
    fn divergence_short_circuits_only_its_subset() {
        let mut tr = synthetic(&vec![vec![[0.0, 0.0], [0.0, 0.0], [9.0, 9.0]]; 5]);
        tr.outcome.agent_divergence[2] = Some(1.0);
        assert!(consensus_metrics(&tr, &[0, 2]).unwrap().diverged);
        assert_eq!(consensus_metrics(&tr, &[0, 1]).unwrap().tail_average, 0.0);
    }

    #[test]
    fn norm_readings_differ_for_alternating_inputs() {
        let tr = synthetic(&vec![vec![[0.0, 0.0]; 1]; 10]);
        assert_eq!(mean_norm(&tr, Series::Input, 0, 0.0, 9.0).unwrap(), 1.0);
        assert_eq!(norm_of_mean(&tr, Series::Input, 0, 0.0, 9.0).unwrap(), 0.0);
    }

    #[test]
    fn latency_and_false_positives() {
        let mut tr = synthetic(&vec![vec![[0.0, 0.0]; 2]; 10]);
        tr.h_nonimp[7 * 2 + 1] = true;
        tr.h_imp[2 * 2 + 1] = true;
        assert_eq!(detection_latency(&tr, 1, 5.0, DetectorKind::NonImp), Some(2.0));
        assert_eq!(detection_latency(&tr, 1, 5.0, DetectorKind::Imp), None);
        assert_eq!(detection_latency(&tr, 0, 0.0, DetectorKind::Either), None);
        assert_eq!(false_positive_rate(&tr, 1, Some(5.0)), Some(0.2));
    }
}
