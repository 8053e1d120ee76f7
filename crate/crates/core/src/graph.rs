//! Undirected weighted graphs over agent indices.
//!
//! Each coalition carries two graphs on its agents `1..=m`: the interference
//! graph (whose costs touch whose actions) and the communication graph (who
//! exchanges estimates with whom). This module provides the Laplacian and
//! connectivity primitives, the maximal triangle-free spanning subgraph used
//! to qualify a communication graph, and the per-agent induced graphs the
//! seeking dynamics run consensus on.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("self-loop on vertex {0}")]
    SelfLoop(usize),
    #[error("vertex {0} is not in the graph")]
    UnknownVertex(usize),
    #[error("edge {0}-{1} has non-positive or non-finite weight {2}")]
    BadWeight(usize, usize, f64),
    #[error("graph is not connected")]
    Disconnected,
    #[error("graphs are defined on different vertex sets")]
    VertexMismatch,
}

/// Simple undirected graph with positive edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    vertices: Vec<usize>,
    // keyed by (min, max)
    edges: BTreeMap<(usize, usize), f64>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Graph {
    /// Edgeless graph on the given vertices.
    pub fn new(vertices: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = vertices.into_iter().collect();
        Self { vertices: set.into_iter().collect(), edges: BTreeMap::new() }
    }

    /// Edgeless graph on `1..=n`.
    pub fn empty(n: usize) -> Self {
        Self::new(1..=n)
    }

    /// Graph on `1..=n` with unit-weight edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            g.add_edge(a, b, 1.0)?;
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        for a in 1..=n {
            for b in a + 1..=n {
                g.edges.insert((a, b), 1.0);
            }
        }
        g
    }

    pub fn path(n: usize) -> Self {
        let mut g = Self::empty(n);
        for a in 1..n {
            g.edges.insert((a, a + 1), 1.0);
        }
        g
    }

    /// Inserts or overwrites the edge `a-b`.
    pub fn add_edge(&mut self, a: usize, b: usize, weight: f64) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        for v in [a, b] {
            if !self.contains(v) {
                return Err(GraphError::UnknownVertex(v));
            }
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(GraphError::BadWeight(a, b, weight));
        }
        self.edges.insert(key(a, b), weight);
        Ok(())
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }

    /// Position of `v` in [`Graph::vertices`], which is also its row in the Laplacian.
    pub fn index_of(&self, v: usize) -> Option<usize> {
        self.vertices.binary_search(&v).ok()
    }

    /// Edges as `(min, max, weight)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&key(a, b))
    }

    /// Adjacency weight `a_{ab}`, zero when there is no edge.
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.edges.get(&key(a, b)).copied().unwrap_or(0.0)
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .keys()
            .filter_map(|&(a, b)| {
                if a == v {
                    Some(b)
                } else if b == v {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.keys().filter(|&&(a, b)| a == v || b == v).count()
    }

    /// `L = D - A`, rows and columns in [`Graph::vertices`] order.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.vertices.len();
        let mut l = DMatrix::zeros(n, n);
        for (&(a, b), &w) in &self.edges {
            let (i, j) = (self.index_of(a).unwrap(), self.index_of(b).unwrap());
            l[(i, j)] -= w;
            l[(j, i)] -= w;
            l[(i, i)] += w;
            l[(j, j)] += w;
        }
        l
    }

    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.vertices.first() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for u in self.neighbors(v) {
                if seen.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        seen.len() == self.vertices.len()
    }

    /// Second-smallest Laplacian eigenvalue (zero for a single vertex).
    pub fn algebraic_connectivity(&self) -> f64 {
        if self.vertices.len() < 2 {
            return 0.0;
        }
        let mut eig: Vec<f64> = self.laplacian().symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        eig[1]
    }

    fn closes_triangle(&self, a: usize, b: usize) -> bool {
        let na = self.neighbors(a);
        self.neighbors(b).iter().any(|u| na.binary_search(u).is_ok())
    }

    pub fn triangle_count(&self) -> usize {
        let mut count = 0;
        for &(a, b) in self.edges.keys() {
            for c in self.neighbors(b) {
                if c > b && self.has_edge(a, c) {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn is_subgraph_of(&self, other: &Graph) -> bool {
        self.vertices.iter().all(|&v| other.contains(v))
            && self.edges.keys().all(|&(a, b)| other.has_edge(a, b))
    }

    /// Subgraph induced on `keep` (vertices absent from the graph are ignored).
    pub fn induced(&self, keep: &BTreeSet<usize>) -> Graph {
        let vertices: Vec<usize> = self.vertices.iter().copied().filter(|v| keep.contains(v)).collect();
        let edges = self
            .edges
            .iter()
            .filter(|(&(a, b), _)| keep.contains(&a) && keep.contains(&b))
            .map(|(&k, &w)| (k, w))
            .collect();
        Graph { vertices, edges }
    }

    fn with_edges_of(&self, edges: impl IntoIterator<Item = ((usize, usize), f64)>) -> Graph {
        Graph { vertices: self.vertices.clone(), edges: edges.into_iter().collect() }
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vs: Vec<String> = self.vertices.iter().map(|v| v.to_string()).collect();
        let es: Vec<String> = self
            .edges()
            .map(|(a, b, w)| if w == 1.0 { format!("{a}-{b}") } else { format!("{a}-{b}({w})") })
            .collect();
        write!(f, "V={{{}}} E={{{}}}", vs.join(","), es.join(","))
    }
}

/// Candidate-edge order for the greedy triangle-free construction: shortest
/// index span first, then smallest endpoint.
fn greedy_order(g: &Graph) -> Vec<((usize, usize), f64)> {
    let mut edges: Vec<_> = g.edges.iter().map(|(&k, &w)| (k, w)).collect();
    edges.sort_by_key(|&((a, b), _)| (b - a, a));
    edges
}

fn greedy_triangle_free(g: &Graph) -> Graph {
    let mut h = g.with_edges_of([]);
    for ((a, b), w) in greedy_order(g) {
        if !h.closes_triangle(a, b) {
            h.edges.insert((a, b), w);
        }
    }
    h
}

/// A spanning subgraph of `g` without triangles to which no further edge of
/// `g` can be added without closing one. Deterministic for a given input.
pub fn max_triangle_free_spanning_subgraph(g: &Graph) -> Result<Graph, GraphError> {
    if !g.is_connected() {
        return Err(GraphError::Disconnected);
    }
    Ok(greedy_triangle_free(g))
}

/// Whether `h` is a triangle-free subgraph of `g` that is maximal with
/// respect to the edges of `g`.
pub fn is_maximal_triangle_free(h: &Graph, g: &Graph) -> bool {
    h.vertices == g.vertices
        && h.is_subgraph_of(g)
        && h.triangle_count() == 0
        && g.edges.keys().all(|&(a, b)| h.has_edge(a, b) || h.closes_triangle(a, b))
}

/// Outcome of checking a (interference, communication) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Assumption3Report {
    pub interference_connected: bool,
    pub communication_connected: bool,
    pub communication_within_interference: bool,
    /// A maximal triangle-free spanning subgraph of the interference graph
    /// that lies inside the communication graph, if one was found.
    pub kernel: Option<Graph>,
    /// False when the exhaustive kernel search hit its budget.
    pub kernel_search_complete: bool,
}

impl Assumption3Report {
    pub fn passed(&self) -> bool {
        self.interference_connected
            && self.communication_connected
            && self.communication_within_interference
            && self.kernel.is_some()
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.interference_connected {
            out.push("interference graph is disconnected");
        }
        if !self.communication_connected {
            out.push("communication graph is disconnected");
        }
        if !self.communication_within_interference {
            out.push("communication graph has edges outside the interference graph");
        }
        if self.kernel.is_none() {
            out.push(if self.kernel_search_complete {
                "no maximal triangle-free spanning subgraph of the interference graph fits inside the communication graph"
            } else {
                "kernel search budget exhausted"
            });
        }
        out
    }
}

const KERNEL_SEARCH_BUDGET: usize = 2_000_000;

/// Checks that both graphs are connected, that the communication graph sits
/// inside the interference graph, and that it contains some maximal
/// triangle-free spanning subgraph of the interference graph.
pub fn validate_assumption3(interference: &Graph, communication: &Graph) -> Result<Assumption3Report, GraphError> {
    if interference.vertices != communication.vertices {
        return Err(GraphError::VertexMismatch);
    }
    let within = communication.is_subgraph_of(interference);
    let mut report = Assumption3Report {
        interference_connected: interference.is_connected(),
        communication_connected: communication.is_connected(),
        communication_within_interference: within,
        kernel: None,
        kernel_search_complete: true,
    };
    if !within {
        return Ok(report);
    }
    let greedy = greedy_triangle_free(communication);
    if is_maximal_triangle_free(&greedy, interference) {
        report.kernel = Some(greedy);
        return Ok(report);
    }
    let mut search = KernelSearch {
        target: interference,
        candidates: greedy_order(communication),
        current: communication.with_edges_of([]),
        budget: KERNEL_SEARCH_BUDGET,
    };
    match search.run(0) {
        Some(found) => report.kernel = Some(found),
        None => report.kernel_search_complete = search.budget > 0,
    }
    Ok(report)
}

struct KernelSearch<'a> {
    target: &'a Graph,
    candidates: Vec<((usize, usize), f64)>,
    current: Graph,
    budget: usize,
}

impl KernelSearch<'_> {
    fn run(&mut self, idx: usize) -> Option<Graph> {
        if self.budget == 0 {
            return None;
        }
        self.budget -= 1;
        if idx == self.candidates.len() {
            return is_maximal_triangle_free(&self.current, self.target).then(|| self.current.clone());
        }
        let ((a, b), w) = self.candidates[idx];
        if !self.current.closes_triangle(a, b) {
            self.current.edges.insert((a, b), w);
            let found = self.run(idx + 1);
            self.current.edges.remove(&(a, b));
            if found.is_some() {
                return found;
            }
        }
        self.run(idx + 1)
    }
}

/// The communication graph restricted to `k` and its interference neighbours.
pub fn interference_to_k_graph(communication: &Graph, interference: &Graph, k: usize) -> Result<Graph, GraphError> {
    if !communication.contains(k) || !interference.contains(k) {
        return Err(GraphError::UnknownVertex(k));
    }
    let mut keep: BTreeSet<usize> = interference.neighbors(k).into_iter().collect();
    keep.insert(k);
    Ok(communication.induced(&keep))
}

/// `n x (n-1)` matrix whose columns are orthonormal and orthogonal to the
/// all-ones vector.
///
/// Built from the Householder reflection `H = I - 2vv'/(v'v)` with
/// `v = e1 - 1/sqrt(n)`, which maps `e1` to the normalised ones vector; the
/// complement is `H` without its first column. This pins the sign of every
/// column.
pub fn orthonormal_complement(n: usize) -> DMatrix<f64> {
    assert!(n >= 1, "orthonormal_complement needs n >= 1");
    if n == 1 {
        return DMatrix::zeros(1, 0);
    }
    let u = 1.0 / (n as f64).sqrt();
    let mut v = DVector::from_element(n, -u);
    v[0] += 1.0;
    let vv = v.dot(&v);
    let h = DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, n - 1).into_owned()
}
