//! Weighted directed communication topology and the graph analyses the
//! consensus and resilience results depend on.
//!
//! Convention: `a(i, j)` is the weight of the edge j -> i, i.e. agent i
//! receives information from agent j. In-neighbors of i are the j with
//! `a(i, j) > 0`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use thiserror::Error;

/// Default cap on node count for exhaustive robustness enumeration.
pub const ROBUSTNESS_ENUMERATION_CAP: usize = 12;

/// Relative tolerance for treating a Laplacian eigenvalue as zero.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("node index {0} out of range for {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("self loop on node {0}")]
    SelfLoop(usize),
    #[error("edge {tail}->{head} has invalid weight {weight}")]
    InvalidWeight { tail: usize, head: usize, weight: f64 },
    #[error("edge {0}->{1} listed more than once")]
    DuplicateEdge(usize, usize),
    #[error("graph has no spanning tree")]
    NoSpanningTree,
    #[error("subset is empty")]
    EmptySubset,
    #[error("robustness check needs at least 2 nodes")]
    TooSmall,
    #[error("{n} nodes exceeds the enumeration cap of {cap}")]
    TooLarge { n: usize, cap: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiGraph {
    weights: DMatrix<f64>,
}

impl DiGraph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Ok(Self { weights: DMatrix::zeros(n, n) })
    }

    /// Builds a graph from `(tail, head, weight)` triples.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut g = Self::empty(n)?;
        for &(tail, head, weight) in edges {
            if tail >= n {
                return Err(GraphError::NodeOutOfRange(tail, n));
            }
            if head >= n {
                return Err(GraphError::NodeOutOfRange(head, n));
            }
            if tail == head {
                return Err(GraphError::SelfLoop(tail));
            }
            if !weight.is_finite() || weight <= 0.0 {
                return Err(GraphError::InvalidWeight { tail, head, weight });
            }
            if g.weights[(head, tail)] != 0.0 {
                return Err(GraphError::DuplicateEdge(tail, head));
            }
            g.weights[(head, tail)] = weight;
        }
        Ok(g)
    }

    /// Builds a graph from a full adjacency matrix (`a[(i, j)]` = weight of j -> i).
    pub fn from_adjacency(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        let n = weights.nrows();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        assert_eq!(n, weights.ncols(), "adjacency matrix must be square");
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::InvalidWeight { tail: j, head: i, weight: w });
                }
                if i == j && w != 0.0 {
                    return Err(GraphError::SelfLoop(i));
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// Weight of the edge j -> i.
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// In-neighbors of `i` in ascending order.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.weights[(i, j)] > 0.0).collect()
    }

    /// Out-neighbors of `j` in ascending order.
    pub fn out_neighbors(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.weights[(i, j)] > 0.0).collect()
    }

    /// Edges as `(tail, head, weight)`, ordered by head then tail.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for head in 0..n {
            for tail in 0..n {
                let w = self.weights[(head, tail)];
                if w > 0.0 {
                    out.push((tail, head, w));
                }
            }
        }
        out
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        self.weights.row(i).sum()
    }

    /// Nodes reachable from `start` along directed edges, including `start`.
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(j) = queue.pop_front() {
            for i in 0..n {
                if !seen[i] && self.weights[(i, j)] > 0.0 {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        seen
    }

    /// Induced subgraph on `nodes` (in the given order).
    pub fn subgraph(&self, nodes: &[usize]) -> Result<DiGraph, GraphError> {
        let k = nodes.len();
        if k == 0 {
            return Err(GraphError::EmptySubset);
        }
        if let Some(&bad) = nodes.iter().find(|&&i| i >= self.n()) {
            return Err(GraphError::NodeOutOfRange(bad, self.n()));
        }
        Ok(DiGraph { weights: block(&self.weights, nodes, nodes) })
    }
}

/// L = D - A.
pub fn laplacian(g: &DiGraph) -> DMatrix<f64> {
    let n = g.n();
    let mut l = -g.adjacency().clone();
    for i in 0..n {
        l[(i, i)] = g.in_degree(i);
    }
    l
}

/// Nodes from which every node is reachable.
pub fn root_nodes(g: &DiGraph) -> Vec<usize> {
    (0..g.n()).filter(|&r| g.reachable_from(r).iter().all(|&s| s)).collect()
}

pub fn has_spanning_tree(g: &DiGraph) -> bool {
    !root_nodes(g).is_empty()
}

/// Laplacian blocks after permuting root nodes first.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPartition {
    pub root_nodes: Vec<usize>,
    pub nonroot_nodes: Vec<usize>,
    pub l_rr: DMatrix<f64>,
    pub l_rnr: DMatrix<f64>,
    pub l_nrr: DMatrix<f64>,
    pub l_nrnr: DMatrix<f64>,
}

fn block(l: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| l[(rows[r], cols[c])])
}

pub fn root_partition(g: &DiGraph) -> Result<LaplacianPartition, GraphError> {
    let roots = root_nodes(g);
    if roots.is_empty() {
        return Err(GraphError::NoSpanningTree);
    }
    let nonroots: Vec<usize> = (0..g.n()).filter(|i| !roots.contains(i)).collect();
    let l = laplacian(g);
    Ok(LaplacianPartition {
        l_rr: block(&l, &roots, &roots),
        l_rnr: block(&l, &roots, &nonroots),
        l_nrr: block(&l, &nonroots, &roots),
        l_nrnr: block(&l, &nonroots, &nonroots),
        root_nodes: roots,
        nonroot_nodes: nonroots,
    })
}

/// Nonnegative p with p^T L = 0 and sum(p) = 1, zero on non-root nodes.
pub fn left_zero_eigenvector(g: &DiGraph) -> Result<Vec<f64>, GraphError> {
    let roots = root_nodes(g);
    if roots.is_empty() {
        return Err(GraphError::NoSpanningTree);
    }
    let lt = laplacian(g).transpose();
    let svd = lt.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let (k, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty spectrum");
    let mut p: Vec<f64> = v_t.row(k).iter().copied().collect();
    let total: f64 = roots.iter().map(|&r| p[r]).sum();
    if total < 0.0 {
        p.iter_mut().for_each(|x| *x = -*x);
    }
    let mut out = vec![0.0; g.n()];
    for &r in &roots {
        out[r] = p[r].max(0.0);
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    Ok(out)
}

/// True iff some node of `subset` has at least `r` in-neighbors outside it.
pub fn is_r_reachable(g: &DiGraph, subset: &[usize], r: usize) -> Result<bool, GraphError> {
    if subset.is_empty() {
        return Err(GraphError::EmptySubset);
    }
    let n = g.n();
    let mut inside = vec![false; n];
    for &s in subset {
        if s >= n {
            return Err(GraphError::NodeOutOfRange(s, n));
        }
        inside[s] = true;
    }
    Ok(reachable_mask(g, &inside, r))
}

fn reachable_mask(g: &DiGraph, inside: &[bool], r: usize) -> bool {
    let n = g.n();
    (0..n).filter(|&i| inside[i]).any(|i| {
        let outside = (0..n).filter(|&j| !inside[j] && g.a(i, j) > 0.0).count();
        outside >= r
    })
}

pub fn is_r_robust(g: &DiGraph, r: usize) -> Result<bool, GraphError> {
    is_r_robust_capped(g, r, ROBUSTNESS_ENUMERATION_CAP)
}

/// Exhaustive check over all pairs of disjoint nonempty subsets.
pub fn is_r_robust_capped(g: &DiGraph, r: usize, cap: usize) -> Result<bool, GraphError> {
    let n = g.n();
    if n < 2 {
        return Err(GraphError::TooSmall);
    }
    if n > cap {
        return Err(GraphError::TooLarge { n, cap });
    }
    // Each node is labelled 0 (neither), 1 (S1) or 2 (S2).
    let total = 3usize.pow(n as u32);
    let mut s1 = vec![false; n];
    let mut s2 = vec![false; n];
    for code in 0..total {
        let mut c = code;
        for k in 0..n {
            s1[k] = c % 3 == 1;
            s2[k] = c % 3 == 2;
            c /= 3;
        }
        if !s1.iter().any(|&b| b) || !s2.iter().any(|&b| b) {
            continue;
        }
        if !reachable_mask(g, &s1, r) && !reachable_mask(g, &s2, r) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The five-agent topology used throughout, 0-based:
/// 0->1, 1->2, 2->3, 2->4, 4->3.
pub fn canonical_graph() -> DiGraph {
    DiGraph::from_edges(5, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (2, 4, 1.0), (4, 3, 1.0)])
        .expect("canonical edge list is valid")
}
