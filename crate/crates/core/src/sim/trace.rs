use std::io::Write;

use super::engine::{self, Observer, RunOutcome, StepRecord};
use super::scenario::Scenario;
use super::ConfigError;

/// Full per-step record of a run. Series are stored row-major in flat vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub dt: f64,
    /// In-edges in recording order as (tail, head): heads ascending, then tails.
    pub edges: Vec<(usize, usize)>,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    pub kl_imp: Vec<f64>,
    pub kl_nonimp: Vec<f64>,
    pub h_imp: Vec<bool>,
    pub h_nonimp: Vec<bool>,
    pub warm: Vec<bool>,
    pub xi: Vec<f64>,
    pub omega: Vec<f64>,
    pub outcome: RunOutcome,
}

impl Trace {
    fn with_capacity(s: &Scenario) -> Self {
        let rows = s.steps() + 1;
        let n = s.n();
        let n_x = s.dynamics.n_x();
        let n_u = s.dynamics.n_u();
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|i| s.graph.in_neighbors(i).into_iter().map(move |j| (j, i))).collect();
        Self {
            n,
            n_x,
            n_u,
            dt: s.dt,
            t: Vec::with_capacity(rows),
            x: Vec::with_capacity(rows * n * n_x),
            eta: Vec::with_capacity(rows * n * n_x),
            u: Vec::with_capacity(rows * n * n_u),
            f: Vec::with_capacity(rows * n * n_u),
            kl_imp: Vec::with_capacity(rows * n),
            kl_nonimp: Vec::with_capacity(rows * n),
            h_imp: Vec::with_capacity(rows * n),
            h_nonimp: Vec::with_capacity(rows * n),
            warm: Vec::with_capacity(rows * n),
            xi: Vec::with_capacity(rows * n),
            omega: Vec::with_capacity(rows * edges.len()),
            edges,
            outcome: RunOutcome::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x(&self, k: usize, i: usize) -> &[f64] {
        let o = (k * self.n + i) * self.n_x;
        &self.x[o..o + self.n_x]
    }

    pub fn eta(&self, k: usize, i: usize) -> &[f64] {
        let o = (k * self.n + i) * self.n_x;
        &self.eta[o..o + self.n_x]
    }

    pub fn u(&self, k: usize, i: usize) -> &[f64] {
        let o = (k * self.n + i) * self.n_u;
        &self.u[o..o + self.n_u]
    }

    pub fn f(&self, k: usize, i: usize) -> &[f64] {
        let o = (k * self.n + i) * self.n_u;
        &self.f[o..o + self.n_u]
    }

    pub fn kl_imp(&self, k: usize, i: usize) -> f64 {
        self.kl_imp[k * self.n + i]
    }

    pub fn kl_nonimp(&self, k: usize, i: usize) -> f64 {
        self.kl_nonimp[k * self.n + i]
    }

    pub fn h_imp(&self, k: usize, i: usize) -> bool {
        self.h_imp[k * self.n + i]
    }

    pub fn h_nonimp(&self, k: usize, i: usize) -> bool {
        self.h_nonimp[k * self.n + i]
    }

    pub fn warm(&self, k: usize, i: usize) -> bool {
        self.warm[k * self.n + i]
    }

    pub fn xi(&self, k: usize, i: usize) -> f64 {
        self.xi[k * self.n + i]
    }

    /// Trust of `head` in `tail` at row k, if that edge exists.
    pub fn omega(&self, k: usize, tail: usize, head: usize) -> Option<f64> {
        let e = self.edges.iter().position(|&edge| edge == (tail, head))?;
        Some(self.omega[k * self.edges.len() + e])
    }

    /// Index of the first row with t >= `time`.
    pub fn row_at(&self, time: f64) -> usize {
        self.t.partition_point(|&t| t < time - 1e-9 * self.dt)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        let vec_cols = |h: &mut Vec<String>, name: &str, dim: usize| {
            for i in 0..self.n {
                for c in 0..dim {
                    h.push(format!("{name}{i}_{c}"));
                }
            }
        };
        vec_cols(&mut h, "x", self.n_x);
        vec_cols(&mut h, "eta", self.n_x);
        vec_cols(&mut h, "u", self.n_u);
        vec_cols(&mut h, "f", self.n_u);
        for name in ["kl_imp", "kl_nonimp", "h_imp", "h_nonimp", "xi"] {
            for i in 0..self.n {
                h.push(format!("{name}{i}"));
            }
        }
        for &(j, i) in &self.edges {
            h.push(format!("omega{i}_{j}"));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        let (n, nx, nu, ne) = (self.n, self.n_x, self.n_u, self.edges.len());
        let mut row: Vec<String> = Vec::new();
        for k in 0..self.len() {
            row.clear();
            row.push(self.t[k].to_string());
            for (data, dim) in [(&self.x, nx), (&self.eta, nx), (&self.u, nu), (&self.f, nu)] {
                row.extend(data[k * n * dim..(k + 1) * n * dim].iter().map(|v| v.to_string()));
            }
            for data in [&self.kl_imp, &self.kl_nonimp] {
                row.extend(data[k * n..(k + 1) * n].iter().map(|v| v.to_string()));
            }
            for data in [&self.h_imp, &self.h_nonimp] {
                row.extend(data[k * n..(k + 1) * n].iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            }
            row.extend(self.xi[k * n..(k + 1) * n].iter().map(|v| v.to_string()));
            row.extend(self.omega[k * ne..(k + 1) * ne].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Observer for Trace {
    fn observe(&mut self, r: &StepRecord<'_>) {
        self.t.push(r.t);
        for (series, data) in [(&mut self.x, r.x), (&mut self.eta, r.eta), (&mut self.u, r.u), (&mut self.f, r.f)] {
            for v in data {
                series.extend_from_slice(v.as_slice());
            }
        }
        for d in r.detectors {
            self.kl_imp.push(d.avg_imp);
            self.kl_nonimp.push(d.avg_nonimp);
            self.h_imp.push(d.h_imp.is_attack());
            self.h_nonimp.push(d.h_nonimp.is_attack());
        }
        self.warm.extend_from_slice(r.warm);
        for ts in r.trust {
            self.xi.push(ts.xi);
            self.omega.extend_from_slice(&ts.omega);
        }
    }
}

/// Runs the scenario and keeps every step.
pub fn run_scenario(s: &Scenario) -> Result<Trace, ConfigError> {
    let mut trace = Trace::with_capacity(s);
    trace.outcome = engine::run_with(s, &mut trace)?;
    Ok(trace)
}
