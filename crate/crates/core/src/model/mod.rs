//! Ising instances over undirected graphs.
//!
//! Spins are `i8` values in `{-1, +1}`. Two-entry tables are indexed by
//! [`spin_index`]: slot 0 holds spin `-1`, slot 1 holds spin `+1`.

mod ensemble;
mod io;

pub use ensemble::{sample_instance, CouplingDist, EnsembleSpec, FieldDist, Topology};
pub use io::{read_model, write_model};

use crate::error::{Error, Result};

/// Table slot for a spin value.
#[inline]
pub fn spin_index(x: i8) -> usize {
    usize::from(x > 0)
}

/// Spin value stored in a table slot.
#[inline]
pub fn spin_of(index: usize) -> i8 {
    if index == 0 {
        -1
    } else {
        1
    }
}

fn check_spin(x: i8) -> Result<()> {
    if x == 1 || x == -1 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("spin must be +1 or -1, got {x}")))
    }
}

/// Simple undirected graph with canonically ordered edges.
///
/// Edges are stored as `(a, b)` with `a < b`, sorted lexicographically; an
/// edge id is the position in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, normalizing each pair to `(min, max)` and sorting.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let (graph, _) = Self::with_permutation(node_count, edges)?;
        Ok(graph)
    }

    /// Like [`Graph::new`], also returning for each input edge its canonical id.
    pub fn with_permutation(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, Vec<usize>)> {
        if node_count == 0 {
            return Err(Error::InvalidGraph("node count must be positive".into()));
        }
        let mut tagged = Vec::new();
        for (i, (a, b)) in edges.into_iter().enumerate() {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {a}")));
            }
            if a >= node_count || b >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) references a node outside 0..{node_count}"
                )));
            }
            tagged.push(((a.min(b), a.max(b)), i));
        }
        tagged.sort_unstable();
        for w in tagged.windows(2) {
            if w[0].0 == w[1].0 {
                let (a, b) = w[0].0;
                return Err(Error::InvalidGraph(format!("parallel edge ({a}, {b})")));
            }
        }
        let mut perm = vec![0; tagged.len()];
        let mut edges = Vec::with_capacity(tagged.len());
        for (id, (pair, input)) in tagged.into_iter().enumerate() {
            perm[input] = id;
            edges.push(pair);
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for (id, &(a, b)) in edges.iter().enumerate() {
            adjacency[a].push(id);
            adjacency[b].push(id);
        }
        Ok((Self { node_count, edges, adjacency }, perm))
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> Option<(usize, usize)> {
        self.edges.get(id).copied()
    }

    /// Ids of the edges incident to `node`, in increasing order.
    pub fn incident(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Canonical id of the edge joining `a` and `b`, if present.
    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&(a.min(b), a.max(b))).ok()
    }

    /// The endpoint of `edge` that is not `node`.
    #[inline]
    pub fn other_end(&self, edge: usize, node: usize) -> usize {
        let (a, b) = self.edges[edge];
        if a == node {
            b
        } else {
            a
        }
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &e in &self.adjacency[v] {
                let w = self.other_end(e, v);
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.node_count
    }
}

/// `n x n` square lattice, nearest-neighbour edges, open boundaries.
/// Node `(row, col)` has index `row * n + col`.
pub fn build_grid(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid side must be at least 2 (got {n}); smaller grids have degree-one nodes"
        )));
    }
    let mut edges = Vec::with_capacity(2 * n * (n - 1));
    for r in 0..n {
        for c in 0..n {
            let v = r * n + c;
            if c + 1 < n {
                edges.push((v, v + 1));
            }
            if r + 1 < n {
                edges.push((v, v + n));
            }
        }
    }
    Graph::new(n * n, edges)
}

/// Complete graph `K_n`.
pub fn build_complete(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "complete graph needs at least 3 nodes (got {n})"
        )));
    }
    let edges = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)));
    Graph::new(n, edges)
}

/// Pairwise binary model with `p(x) ∝ exp(Σ J_ab x_a x_b + Σ h_a x_a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    graph: Graph,
    couplings: Vec<f64>,
    fields: Vec<f64>,
}

impl IsingModel {
    pub fn new(graph: Graph, couplings: Vec<f64>, fields: Vec<f64>) -> Result<Self> {
        if couplings.len() != graph.edge_count() {
            return Err(Error::InvalidModel(format!(
                "{} couplings for {} edges",
                couplings.len(),
                graph.edge_count()
            )));
        }
        if fields.len() != graph.node_count() {
            return Err(Error::InvalidModel(format!(
                "{} fields for {} nodes",
                fields.len(),
                graph.node_count()
            )));
        }
        if let Some(i) = couplings.iter().position(|j| !j.is_finite()) {
            return Err(Error::InvalidModel(format!("coupling on edge {i} is not finite")));
        }
        if let Some(i) = fields.iter().position(|h| !h.is_finite()) {
            return Err(Error::InvalidModel(format!("field on node {i} is not finite")));
        }
        Ok(Self { graph, couplings, fields })
    }

    /// Model with the same coupling on every edge and the same field on every node.
    pub fn homogeneous(graph: Graph, coupling: f64, field: f64) -> Result<Self> {
        let couplings = vec![coupling; graph.edge_count()];
        let fields = vec![field; graph.node_count()];
        Self::new(graph, couplings, fields)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// All couplings non-negative.
    pub fn is_attractive(&self) -> bool {
        self.couplings.iter().all(|&j| j >= 0.0)
    }

    pub fn has_zero_field(&self) -> bool {
        self.fields.iter().all(|&h| h == 0.0)
    }

    /// Edge energy with each endpoint field halved:
    /// `-J_ab x_a x_b - (h_a x_a + h_b x_b) / 2`, where `a < b`.
    ///
    /// The halves add up to the full field term only at degree-two nodes; the
    /// variational functionals use [`IsingModel::factor_energy`] instead.
    pub fn edge_energy(&self, edge: usize, xa: i8, xb: i8) -> Result<f64> {
        let (a, b) = self
            .graph
            .edge(edge)
            .ok_or_else(|| Error::InvalidArgument(format!("no edge with id {edge}")))?;
        check_spin(xa)?;
        check_spin(xb)?;
        let (xa, xb) = (f64::from(xa), f64::from(xb));
        Ok(-self.couplings[edge] * xa * xb - (self.fields[a] * xa + self.fields[b] * xb) / 2.0)
    }

    /// Edge energy with each endpoint field split evenly over that node's
    /// incident edges: `-J_ab x_a x_b - h_a x_a / deg(a) - h_b x_b / deg(b)`.
    ///
    /// Summed over all edges this reproduces [`IsingModel::total_energy`] on
    /// any graph without isolated nodes.
    pub fn factor_energy(&self, edge: usize, xa: i8, xb: i8) -> f64 {
        let (a, b) = self.graph.edges[edge];
        let (xa, xb) = (f64::from(xa), f64::from(xb));
        let da = self.graph.degree(a) as f64;
        let db = self.graph.degree(b) as f64;
        -self.couplings[edge] * xa * xb - self.fields[a] * xa / da - self.fields[b] * xb / db
    }

    /// `factor_energy` tabulated as `[slot(x_a)][slot(x_b)]`.
    pub fn factor_energy_table(&self, edge: usize) -> [[f64; 2]; 2] {
        let mut t = [[0.0; 2]; 2];
        for (ia, row) in t.iter_mut().enumerate() {
            for (ib, v) in row.iter_mut().enumerate() {
                *v = self.factor_energy(edge, spin_of(ia), spin_of(ib));
            }
        }
        t
    }

    /// `E(x) = -Σ J_ab x_a x_b - Σ h_a x_a`.
    pub fn total_energy(&self, state: &[i8]) -> Result<f64> {
        if state.len() != self.node_count() {
            return Err(Error::InvalidArgument(format!(
                "state has {} spins, model has {} nodes",
                state.len(),
                self.node_count()
            )));
        }
        for &x in state {
            check_spin(x)?;
        }
        let pair: f64 = self
            .graph
            .edges
            .iter()
            .zip(&self.couplings)
            .map(|(&(a, b), &j)| j * f64::from(state[a]) * f64::from(state[b]))
            .sum();
        let field: f64 = self.fields.iter().zip(state).map(|(&h, &x)| h * f64::from(x)).sum();
        Ok(-pair - field)
    }
}
