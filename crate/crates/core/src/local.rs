//! What a single agent observes in one control step. Detectors and trust
//! filters only ever receive a `LocalView`, which keeps them local by
//! construction.

use nalgebra::DVector;

use crate::dynamics::EdgeSamples;
use crate::graph::DiGraph;

#[derive(Debug, Clone)]
pub struct LocalView {
    agent: usize,
    n_x: usize,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    /// x_j^c - x_i^c per neighbor, flattened.
    diff: Vec<f64>,
    /// omega_ij per neighbor, flattened.
    noise: Vec<f64>,
    /// x_j^c + omega_ij per neighbor, flattened.
    received: Vec<f64>,
}

impl LocalView {
    pub fn new(g: &DiGraph, agent: usize, n_x: usize) -> Self {
        let neighbors = g.in_neighbors(agent);
        let weights = neighbors.iter().map(|&j| g.a(agent, j)).collect();
        let k = neighbors.len() * n_x;
        Self { agent, n_x, neighbors, weights, diff: vec![0.0; k], noise: vec![0.0; k], received: vec![0.0; k] }
    }

    /// Refreshes the view from the agent's own measured state and what it
    /// receives on each incoming edge (before channel noise).
    pub fn observe<'a>(&mut self, own: &[f64], received: impl Fn(usize) -> &'a [f64], noise: Option<&EdgeSamples>) {
        let n_x = self.n_x;
        for (k, &j) in self.neighbors.iter().enumerate() {
            let xj = received(j);
            for c in 0..n_x {
                let w = noise.map_or(0.0, |s| s.get(self.agent, j)[c]);
                self.diff[k * n_x + c] = xj[c] - own[c];
                self.noise[k * n_x + c] = w;
                self.received[k * n_x + c] = xj[c] + w;
            }
        }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// d_ij = x_j^c - x_i^c + omega_ij for the k-th in-neighbor.
    pub fn discrepancy(&self, k: usize) -> DVector<f64> {
        let r = k * self.n_x..(k + 1) * self.n_x;
        DVector::from_iterator(self.n_x, self.diff[r.clone()].iter().zip(&self.noise[r]).map(|(d, w)| d + w))
    }

    /// Received state x_j^c + omega_ij for the k-th in-neighbor.
    pub fn received(&self, k: usize) -> &[f64] {
        &self.received[k * self.n_x..(k + 1) * self.n_x]
    }

    /// Noisy tracking error sum_j a_ij d_ij.
    pub fn tracking_error(&self) -> DVector<f64> {
        let ones = vec![1.0; self.neighbors.len()];
        self.weighted_tracking_error(&ones)
    }

    /// sum_j s_j a_ij (x_j^c - x_i^c) + sum_j a_ij omega_ij. The scale only
    /// applies to the state differences; channel noise enters unweighted.
    pub fn weighted_tracking_error(&self, scale: &[f64]) -> DVector<f64> {
        assert_eq!(scale.len(), self.neighbors.len(), "one scale per in-neighbor");
        let n_x = self.n_x;
        let mut out = DVector::zeros(n_x);
        for (k, (&a, &s)) in self.weights.iter().zip(scale).enumerate() {
            for c in 0..n_x {
                out[c] += a * (s * self.diff[k * n_x + c] + self.noise[k * n_x + c]);
            }
        }
        out
    }

    /// (tau, phi) = (|| sum_j a_ij d_ij ||, sum_j || a_ij d_ij ||).
    pub fn error_sequences(&self) -> (f64, f64) {
        let tau = self.tracking_error().norm();
        let phi = (0..self.neighbors.len()).map(|k| self.discrepancy(k).norm() * self.weights[k]).sum();
        (tau, phi)
    }
}
