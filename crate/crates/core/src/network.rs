//! Communication graph, consensus weight matrices and simulated message
//! passing.
//!
//! Agents only ever see what arrives in their inbox, and the inbox is filled
//! from graph neighbors only. Weight matrices are checked against the graph's
//! sparsity pattern before any mixing happens.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{DacError, Result};
use crate::rng::Rng;

/// Row sums must be within this of one.
pub const ROW_STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyGraph {
    n: usize,
    adjacency: Vec<BTreeSet<usize>>,
}

impl TopologyGraph {
    /// Undirected graph from an edge list. Rejects self-loops, out-of-range
    /// endpoints and disconnected graphs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(DacError::Config("graph needs at least one node".into()));
        }
        let mut adjacency = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(DacError::Config(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(DacError::Config(format!("self-loop at node {i}")));
            }
            adjacency[i].insert(j);
            adjacency[j].insert(i);
        }
        let g = Self { n, adjacency };
        if !g.is_connected() {
            return Err(DacError::Disconnected);
        }
        Ok(g)
    }

    /// `rows × cols` grid with up/down/left/right neighbors, row-major ids.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Self::from_edges(rows * cols, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn ring(n: usize) -> Result<Self> {
        let edges: Vec<_> =
            if n < 3 { (1..n).map(|i| (i - 1, i)).collect() } else { (0..n).map(|i| (i, (i + 1) % n)).collect() };
        Self::from_edges(n, &edges)
    }

    /// Parses `grid:RxC`, `ring:N` or `complete:N`.
    pub fn parse(desc: &str) -> Result<Self> {
        let (kind, arg) = desc.split_once(':').ok_or_else(|| DacError::Config(format!("bad topology '{desc}'")))?;
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| DacError::Config(format!("bad topology '{desc}'")));
        match kind.trim() {
            "grid" => {
                let (r, c) =
                    arg.split_once(['x', 'X']).ok_or_else(|| DacError::Config(format!("bad grid '{desc}'")))?;
                Self::grid(num(r)?, num(c)?)
            }
            "ring" => Self::ring(num(arg)?),
            "complete" => Self::complete(num(arg)?),
            other => Err(DacError::Config(format!("unknown topology kind '{other}'"))),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i].iter().copied()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    /// Undirected edges with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for &j in &self.adjacency[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Both orientations of every edge, sorted lexicographically.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for &j in &self.adjacency[i] {
                out.push((i, j));
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Dense `n × n` mixing matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    n: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(DacError::Contract("weight matrix must be square".into()));
        }
        Ok(Self { n, data: rows.into_iter().flatten().collect() })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn averaging(n: usize) -> Self {
        Self { n, data: vec![1.0 / n as f64; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n).map(|j| (0..self.n).map(|i| self.get(i, j)).sum()).collect()
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.data.iter().all(|x| *x >= 0.0) && self.row_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }

    /// Off-diagonal support contained in the graph's edge set.
    pub fn respects(&self, graph: &TopologyGraph) -> bool {
        self.n == graph.n()
            && (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j) == 0.0 || graph.is_neighbor(i, j)))
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)]);
            }
        }
        Self { n, data }
    }
}

/// `W_ij = 1 / (1 + max(deg_i, deg_j))` on edges, remainder on the diagonal.
pub fn metropolis_weights(graph: &TopologyGraph) -> Result<WeightMatrix> {
    if !graph.is_connected() {
        return Err(DacError::Disconnected);
    }
    let n = graph.n();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let mut off = 0.0;
        for j in graph.neighbors(i) {
            let w = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
            data[i * n + j] = w;
            off += w;
        }
        data[i * n + i] = 1.0 - off;
    }
    Ok(WeightMatrix { n, data })
}

/// Pairwise averaging on edge `(i, j)`: identity except rows `i` and `j`.
pub fn gossip_matrix(n: usize, i: usize, j: usize) -> WeightMatrix {
    let mut w = WeightMatrix::identity(n);
    for &r in &[i, j] {
        w.data[r * n + r] = 0.0;
        w.data[r * n + i] = 0.5;
        w.data[r * n + j] = 0.5;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// Deterministic Metropolis–Hastings weights every round.
    Metropolis,
    /// One uniformly chosen edge averages per round.
    LazyGossip,
    /// No mixing at all. Fails the contraction check; exists for diagnostics.
    Identity,
}

impl WeightScheme {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "metropolis" | "metropolis-fixed" => Ok(Self::Metropolis),
            "lazy-gossip" | "lazy-random-gossip" | "gossip" => Ok(Self::LazyGossip),
            "identity" => Ok(Self::Identity),
            other => Err(DacError::Config(format!("unknown weight scheme '{other}'"))),
        }
    }
}

/// Source of consensus matrices `W_t` on a fixed graph. Owns its own random
/// stream, independent of the environment's.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightMatrixSampler {
    graph: TopologyGraph,
    scheme: WeightScheme,
    fixed: Option<WeightMatrix>,
    edges: Vec<(usize, usize)>,
    rng: Rng,
}

impl WeightMatrixSampler {
    pub fn new(graph: TopologyGraph, scheme: WeightScheme, rng: Rng) -> Result<Self> {
        let fixed = match scheme {
            WeightScheme::Metropolis => Some(metropolis_weights(&graph)?),
            WeightScheme::Identity => Some(WeightMatrix::identity(graph.n())),
            WeightScheme::LazyGossip => None,
        };
        let edges = graph.edges();
        Ok(Self { graph, scheme, fixed, edges, rng })
    }

    pub fn graph(&self) -> &TopologyGraph {
        &self.graph
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn sample(&mut self) -> WeightMatrix {
        if let Some(w) = &self.fixed {
            return w.clone();
        }
        if self.edges.is_empty() {
            return WeightMatrix::identity(self.graph.n());
        }
        let e = self.rng.random_range(0..self.edges.len());
        let (i, j) = self.edges[e];
        gossip_matrix(self.graph.n(), i, j)
    }

    /// Exact `E[W]`.
    pub fn expected_matrix(&self) -> WeightMatrix {
        if let Some(w) = &self.fixed {
            return w.clone();
        }
        let n = self.graph.n();
        if self.edges.is_empty() {
            return WeightMatrix::identity(n);
        }
        let mut acc = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            acc += gossip_matrix(n, i, j).to_dmatrix();
        }
        WeightMatrix::from_dmatrix(&(acc / self.edges.len() as f64))
    }

    /// Exact `E[Wᵀ (I − 11ᵀ/N) W]`, by enumeration of the finitely many
    /// matrices the scheme can produce.
    pub fn contraction_matrix(&self) -> DMatrix<f64> {
        if let Some(w) = &self.fixed {
            return contraction_of(w);
        }
        let n = self.graph.n();
        if self.edges.is_empty() {
            return contraction_of(&WeightMatrix::identity(n));
        }
        let mut acc = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            acc += contraction_of(&gossip_matrix(n, i, j));
        }
        acc / self.edges.len() as f64
    }
}

/// `Wᵀ (I − 11ᵀ/N) W` for one matrix.
pub fn contraction_of(w: &WeightMatrix) -> DMatrix<f64> {
    let n = w.n();
    let m = w.to_dmatrix();
    let centering = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    m.transpose() * centering * m
}

/// Monte-Carlo estimate of the contraction matrix from `samples` draws.
/// Advances the sampler's stream.
pub fn sampled_contraction_matrix(sampler: &mut WeightMatrixSampler, samples: usize) -> DMatrix<f64> {
    let n = sampler.graph().n();
    let mut acc = DMatrix::zeros(n, n);
    for _ in 0..samples {
        acc += contraction_of(&sampler.sample());
    }
    acc / samples as f64
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// Rayleigh-quotient readout.
pub fn spectral_norm_power(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> f64 {
    let n = m.nrows();
    // deterministic start with mass on every eigen-direction generically
    let mut x = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.37 * (i as f64 + 1.0).sin());
    let norm = x.norm();
    x /= norm;
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let y = m * &x;
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        let next = x.dot(&y);
        x = y / ny;
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // final Rayleigh quotient
    let y = m * &x;
    x.dot(&y).max(lambda)
}

/// Spectral norm via a dense symmetric eigendecomposition.
pub fn spectral_norm_dense(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |acc, e| acc.max(e.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contraction {
    pub rho_power: f64,
    pub rho_dense: f64,
}

impl Contraction {
    pub fn rho(&self) -> f64 {
        self.rho_dense
    }
}

fn contraction_from(m: &DMatrix<f64>) -> Contraction {
    Contraction { rho_power: spectral_norm_power(m, 200_000, 1e-15), rho_dense: spectral_norm_dense(m) }
}

/// `ρ_W` for a scheme, computed exactly. Rejects `ρ_W ≥ 1`.
pub fn spectral_contraction(sampler: &WeightMatrixSampler) -> Result<Contraction> {
    check_contraction(contraction_from(&sampler.contraction_matrix()))
}

pub fn spectral_contraction_fixed(w: &WeightMatrix) -> Result<Contraction> {
    check_contraction(contraction_from(&contraction_of(w)))
}

/// `ρ_W` estimated from draws of the sampler.
pub fn spectral_contraction_sampled(sampler: &mut WeightMatrixSampler, samples: usize) -> Result<Contraction> {
    check_contraction(contraction_from(&sampled_contraction_matrix(sampler, samples)))
}

/// Same numbers without the rejection, for reporting.
pub fn contraction_report(sampler: &WeightMatrixSampler) -> Contraction {
    contraction_from(&sampler.contraction_matrix())
}

fn check_contraction(c: Contraction) -> Result<Contraction> {
    if c.rho() >= 1.0 - 1e-12 {
        Err(DacError::Config(format!(
            "consensus contraction rho_W = {:.6} is not below 1; the weight scheme does not mix",
            c.rho()
        )))
    } else {
        Ok(c)
    }
}

/// The only thing that crosses between agents: a flattened `θ_j + α g_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMessage {
    pub from: usize,
    pub payload: Vec<f64>,
}

/// Delivers each agent's outgoing message to its graph neighbors. The inbox
/// of agent `i` holds messages from `N_i` only, ordered by sender id.
pub fn deliver(graph: &TopologyGraph, outgoing: &[ConsensusMessage]) -> Vec<Vec<ConsensusMessage>> {
    let mut inboxes: Vec<Vec<ConsensusMessage>> = vec![Vec::new(); graph.n()];
    for msg in outgoing {
        for j in graph.neighbors(msg.from) {
            inboxes[j].push(msg.clone());
        }
    }
    for inbox in &mut inboxes {
        inbox.sort_by_key(|m| m.from);
    }
    inboxes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn triangle_metropolis_is_uniform_thirds() {
        let g = TopologyGraph::complete(3).unwrap();
        let w = metropolis_weights(&g).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(w.get(i, j), 1.0 / 3.0, 1e-15));
            }
        }
    }

    #[test]
    fn single_edge_metropolis_is_half() {
        let g = TopologyGraph::from_edges(2, &[(0, 1)]).unwrap();
        let w = metropolis_weights(&g).unwrap();
        assert_eq!(w, WeightMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
    }

    #[test]
    fn metropolis_is_doubly_stochastic() {
        for g in [
            TopologyGraph::grid(2, 3).unwrap(),
            TopologyGraph::ring(7).unwrap(),
            TopologyGraph::from_edges(5, &[(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap(),
        ] {
            let w = metropolis_weights(&g).unwrap();
            assert!(w.row_sums().iter().all(|s| close(*s, 1.0, 1e-12)));
            assert!(w.col_sums().iter().all(|s| close(*s, 1.0, 1e-12)));
            assert!(w.respects(&g));
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        assert_eq!(TopologyGraph::from_edges(4, &[(0, 1), (2, 3)]), Err(DacError::Disconnected));
        assert!(TopologyGraph::from_edges(2, &[(1, 1)]).is_err());
    }

    #[test]
    fn grid_has_expected_shape() {
        let g = TopologyGraph::parse("grid:2x3").unwrap();
        assert_eq!(g.n(), 6);
        assert_eq!(g.edges().len(), 7);
        assert_eq!(g.directed_edges().len(), 14);
        assert_eq!(g.degree(1), 3);
        assert_eq!(g.degree(0), 2);
        assert!(TopologyGraph::parse("grid:2y3").is_err());
        assert!(TopologyGraph::parse("torus:4").is_err());
    }

    #[test]
    fn two_node_gossip_always_averages() {
        let g = TopologyGraph::from_edges(2, &[(0, 1)]).unwrap();
        let mut s = WeightMatrixSampler::new(g, WeightScheme::LazyGossip, stream(1, Stream::Gossip)).unwrap();
        for _ in 0..10 {
            assert_eq!(s.sample(), WeightMatrix::averaging(2));
        }
    }

    #[test]
    fn gossip_draw_changes_exactly_two_rows() {
        let g = TopologyGraph::grid(2, 3).unwrap();
        let mut s = WeightMatrixSampler::new(g.clone(), WeightScheme::LazyGossip, stream(2, Stream::Gossip)).unwrap();
        let id = WeightMatrix::identity(6);
        for _ in 0..100 {
            let w = s.sample();
            let changed = (0..6).filter(|&i| w.row(i) != id.row(i)).count();
            assert_eq!(changed, 2);
            assert!(w.is_row_stochastic(1e-12));
            assert!(w.respects(&g));
        }
    }

    #[test]
    fn averaging_matrix_has_zero_contraction() {
        let c = spectral_contraction_fixed(&WeightMatrix::averaging(5)).unwrap();
        assert!(c.rho_dense.abs() < 1e-12 && c.rho_power.abs() < 1e-12);
    }

    #[test]
    fn identity_is_rejected_with_rho_one() {
        let err = spectral_contraction_fixed(&WeightMatrix::identity(4)).unwrap_err();
        assert!(matches!(err, DacError::Config(_)));
        let c = contraction_from(&contraction_of(&WeightMatrix::identity(4)));
        assert!(close(c.rho_dense, 1.0, 1e-12));
    }

    #[test]
    fn metropolis_contraction_below_one_on_many_graphs() {
        for g in [
            TopologyGraph::grid(2, 3).unwrap(),
            TopologyGraph::grid(3, 3).unwrap(),
            TopologyGraph::ring(8).unwrap(),
            TopologyGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap(),
        ] {
            let s = WeightMatrixSampler::new(g, WeightScheme::Metropolis, stream(0, Stream::Gossip)).unwrap();
            let c = spectral_contraction(&s).unwrap();
            assert!(c.rho() < 1.0);
            assert!(close(c.rho_power, c.rho_dense, 1e-8));
        }
    }

    #[test]
    fn gossip_closed_form_matches_sampling() {
        let g = TopologyGraph::grid(2, 3).unwrap();
        let mut s = WeightMatrixSampler::new(g, WeightScheme::LazyGossip, stream(4, Stream::Gossip)).unwrap();
        let exact = spectral_contraction(&s).unwrap().rho();
        let est = spectral_contraction_sampled(&mut s, 20_000).unwrap().rho();
        assert!(exact < 1.0);
        assert!(close(exact, est, 0.02), "{exact} vs {est}");
    }

    #[test]
    fn inbox_contains_only_neighbors() {
        let g = TopologyGraph::grid(2, 3).unwrap();
        let out: Vec<_> = (0..6).map(|i| ConsensusMessage { from: i, payload: vec![i as f64] }).collect();
        let inboxes = deliver(&g, &out);
        for (i, inbox) in inboxes.iter().enumerate() {
            assert_eq!(inbox.len(), g.degree(i));
            assert!(inbox.iter().all(|m| g.is_neighbor(i, m.from)));
        }
    }
}
