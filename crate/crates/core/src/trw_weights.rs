//! Edge appearance probabilities for tree-re-weighted entropies.
//!
//! The edge-uniform choice `rho_ab = (|V| - 1) / |E|` can be certified by an
//! explicit set of `|E|` equally weighted spanning trees in which every edge
//! appears exactly `|V| - 1` times. The certificate for `K_N` starts from a
//! Walecki decomposition into Hamiltonian paths; sparser graphs are reached by
//! deleting edges one at a time, each time dropping one broken tree and
//! repairing the others with the dropped tree's remaining edges.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::model::{build_complete, Graph};

/// Exact tree weight.
pub type Weight = Ratio<u64>;

/// A weighted collection of spanning trees, each a sorted list of edge ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTreeSet {
    pub trees: Vec<Vec<usize>>,
    pub weights: Vec<Weight>,
}

impl SpanningTreeSet {
    /// Equal weights `1 / trees.len()`.
    pub fn uniform(trees: Vec<Vec<usize>>) -> Self {
        let n = trees.len() as u64;
        let weights = vec![Weight::new(1, n.max(1)); trees.len()];
        Self { trees, weights }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Number of trees containing each edge of a graph with `edge_count` edges.
    pub fn appearance_counts(&self, edge_count: usize) -> Vec<usize> {
        let mut counts = vec![0; edge_count];
        for tree in &self.trees {
            for &e in tree {
                if e < edge_count {
                    counts[e] += 1;
                }
            }
        }
        counts
    }

    /// Exact induced `rho_ab = Σ_{T ∋ ab} rho_T`.
    pub fn induced_rho_exact(&self, edge_count: usize) -> Vec<Weight> {
        let mut rho = vec![Weight::new(0, 1); edge_count];
        for (tree, w) in self.trees.iter().zip(&self.weights) {
            for &e in tree {
                if e < edge_count {
                    rho[e] += *w;
                }
            }
        }
        rho
    }

    /// Induced `rho`, each entry rounded once from its exact value.
    pub fn induced_rho(&self, edge_count: usize) -> Vec<f64> {
        self.induced_rho_exact(edge_count).iter().map(ratio_to_f64).collect()
    }

    /// Writes one tree per line: weight as `p/q`, then the sorted edge ids.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (tree, w) in self.trees.iter().zip(&self.weights) {
            write!(out, "{}/{}", w.numer(), w.denom())?;
            for e in tree {
                write!(out, " {e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut trees = Vec::new();
        let mut weights = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let mut toks = line.split_whitespace();
            let w = toks.next().unwrap_or_default();
            let (p, q) = w.split_once('/').ok_or_else(|| err(format!("weight {w:?} is not p/q")))?;
            let p: u64 = p.parse().map_err(|_| err(format!("bad weight numerator {p:?}")))?;
            let q: u64 = q.parse().map_err(|_| err(format!("bad weight denominator {q:?}")))?;
            if q == 0 {
                return Err(err("zero weight denominator".into()));
            }
            let tree = toks
                .map(|t| t.parse::<usize>().map_err(|_| err(format!("bad edge id {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            trees.push(tree);
            weights.push(Weight::new(p, q));
        }
        Ok(Self { trees, weights })
    }
}

fn ratio_to_f64(r: &Weight) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Per-edge appearance probabilities, optionally with the tree set behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAppearance {
    rho: Vec<f64>,
    certificate: Option<SpanningTreeSet>,
}

impl EdgeAppearance {
    /// Explicit values, each in `(0, 1]`. Used e.g. for `rho ≡ 1` on trees.
    pub fn from_values(rho: Vec<f64>) -> Result<Self> {
        if let Some((e, r)) = rho.iter().enumerate().find(|(_, &r)| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::InvalidArgument(format!("rho on edge {e} is {r}, outside (0, 1]")));
        }
        Ok(Self { rho, certificate: None })
    }

    /// Constant `value` on every edge of `graph`.
    pub fn constant(graph: &Graph, value: f64) -> Result<Self> {
        Self::from_values(vec![value; graph.edge_count()])
    }

    /// Appearance probabilities induced by a validated certificate.
    pub fn from_certificate(graph: &Graph, set: SpanningTreeSet) -> Result<Self> {
        let violations = validate_tree_set(graph, &set);
        if let Some(v) = violations.first() {
            return Err(Error::InvalidArgument(format!("invalid certificate: {v}")));
        }
        let rho = set.induced_rho(graph.edge_count());
        Ok(Self { rho, certificate: Some(set) })
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn certificate(&self) -> Option<&SpanningTreeSet> {
        self.certificate.as_ref()
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }
}

fn check_edge_uniform_preconditions(graph: &Graph) -> Result<()> {
    if let Some(node) = (0..graph.node_count()).find(|&v| graph.degree(v) < 2) {
        return Err(Error::DegreeOne { node });
    }
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    Ok(())
}

/// `rho_ab = (|V| - 1) / |E|` on every edge.
pub fn edge_uniform_rho(graph: &Graph) -> Result<EdgeAppearance> {
    check_edge_uniform_preconditions(graph)?;
    let value = (graph.node_count() - 1) as f64 / graph.edge_count() as f64;
    Ok(EdgeAppearance { rho: vec![value; graph.edge_count()], certificate: None })
}

/// `rho^(lambda) = rho + lambda (1 - rho)`, evaluated as `(1 - lambda) rho + lambda`
/// so that `lambda = 1` gives exactly 1.
pub fn rho_lambda(rho: &EdgeAppearance, lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} outside [0, 1]")));
    }
    Ok(rho.rho.iter().map(|&r| (1.0 - lambda) * r + lambda).collect())
}

/// A violated certificate invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LengthMismatch { trees: usize, weights: usize },
    InvalidEdge { tree: usize, edge: usize },
    DuplicateEdge { tree: usize, edge: usize },
    WrongSize { tree: usize, edges: usize, expected: usize },
    NotSpanning { tree: usize },
    NonPositiveWeight { tree: usize },
    WeightsNotNormalized { sum: f64 },
    RhoOutOfRange { edge: usize, rho: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { trees, weights } => {
                write!(f, "{trees} trees but {weights} weights")
            }
            Violation::InvalidEdge { tree, edge } => write!(f, "tree {tree}: invalid edge id {edge}"),
            Violation::DuplicateEdge { tree, edge } => write!(f, "tree {tree}: edge {edge} repeated"),
            Violation::WrongSize { tree, edges, expected } => {
                write!(f, "tree {tree}: not spanning ({edges} edges, a spanning tree has {expected})")
            }
            Violation::NotSpanning { tree } => write!(f, "tree {tree}: not spanning (contains a cycle or misses a node)"),
            Violation::NonPositiveWeight { tree } => write!(f, "tree {tree}: weight not positive"),
            Violation::WeightsNotNormalized { sum } => write!(f, "weights not normalized (sum {sum})"),
            Violation::RhoOutOfRange { edge, rho } => write!(f, "edge {edge}: induced rho {rho} outside (0, 1]"),
        }
    }
}

/// Union-find over `n` nodes; returns false when `edges` close a cycle.
fn is_spanning_tree(node_count: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut parent: Vec<usize> = (0..node_count).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut joined = 0;
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
        joined += 1;
    }
    joined + 1 == node_count
}

/// Checks every certificate invariant, collecting all violations.
pub fn validate_tree_set(graph: &Graph, set: &SpanningTreeSet) -> Vec<Violation> {
    let mut out = Vec::new();
    if set.trees.len() != set.weights.len() {
        out.push(Violation::LengthMismatch { trees: set.trees.len(), weights: set.weights.len() });
    }
    let expected = graph.node_count() - 1;
    for (t, tree) in set.trees.iter().enumerate() {
        let mut seen = BTreeSet::new();
        let mut ok = true;
        for &e in tree {
            if e >= graph.edge_count() {
                out.push(Violation::InvalidEdge { tree: t, edge: e });
                ok = false;
            } else if !seen.insert(e) {
                out.push(Violation::DuplicateEdge { tree: t, edge: e });
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        if tree.len() != expected {
            out.push(Violation::WrongSize { tree: t, edges: tree.len(), expected });
        } else if !is_spanning_tree(graph.node_count(), tree.iter().map(|&e| graph.edges()[e])) {
            out.push(Violation::NotSpanning { tree: t });
        }
    }
    for (t, w) in set.weights.iter().enumerate() {
        if *w.numer() == 0 {
            out.push(Violation::NonPositiveWeight { tree: t });
        }
    }
    let sum: Weight = set.weights.iter().copied().sum();
    if sum != Weight::new(1, 1) {
        out.push(Violation::WeightsNotNormalized { sum: ratio_to_f64(&sum) });
    }
    for (edge, r) in set.induced_rho_exact(graph.edge_count()).iter().enumerate() {
        if *r.numer() == 0 || *r > Weight::new(1, 1) {
            out.push(Violation::RhoOutOfRange { edge, rho: ratio_to_f64(r) });
        }
    }
    out
}

type Edge = (usize, usize);

fn norm(a: usize, b: usize) -> Edge {
    (a.min(b), a.max(b))
}

/// Hamiltonian paths of `K_{2m}` on vertices `0..2m` forming an edge
/// decomposition: path `i` visits `i, i+1, i-1, i+2, i-2, ..., i+m` (mod 2m).
fn walecki_paths(m: usize) -> Vec<Vec<usize>> {
    let n = 2 * m;
    (0..m)
        .map(|i| {
            let mut seq = vec![i];
            for k in 1..=m {
                seq.push((i + k) % n);
                if k < m {
                    seq.push((i + n - k) % n);
                }
            }
            seq
        })
        .collect()
}

/// `N(N-1)/2` Hamiltonian paths of `K_N` in which every edge appears `N-1` times.
fn complete_graph_trees(n: usize) -> Vec<BTreeSet<Edge>> {
    let path_edges = |seq: &[usize]| -> Vec<Edge> { seq.windows(2).map(|w| norm(w[0], w[1])).collect() };
    let mut trees = Vec::new();
    if n % 2 == 0 {
        // N-1 relabelings of one path decomposition: rotate 0..N-1, fix N-1.
        let paths = walecki_paths(n / 2);
        let relabel = |v: usize, k: usize| if v == n - 1 { v } else { (v + k) % (n - 1) };
        for k in 0..n - 1 {
            for p in &paths {
                let seq: Vec<usize> = p.iter().map(|&v| relabel(v, k)).collect();
                trees.push(path_edges(&seq).into_iter().collect());
            }
        }
    } else {
        // Close each path of K_{N-1} into a Hamiltonian cycle through the
        // extra vertex, then drop each cycle edge in turn.
        let hub = n - 1;
        for p in walecki_paths((n - 1) / 2) {
            let mut cycle = path_edges(&p);
            cycle.push(norm(*p.last().unwrap(), hub));
            cycle.push(norm(hub, p[0]));
            for skip in 0..cycle.len() {
                trees.push(cycle.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &e)| e).collect());
            }
        }
    }
    trees
}

/// Component label of every node in the forest `tree`.
fn components(n: usize, tree: &BTreeSet<Edge>) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in tree {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![usize::MAX; n];
    for root in 0..n {
        if label[root] != usize::MAX {
            continue;
        }
        label[root] = root;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if label[w] == usize::MAX {
                    label[w] = root;
                    stack.push(w);
                }
            }
        }
    }
    label
}

/// Edges on the unique path between `from` and `to` in the forest `tree`.
fn tree_path(n: usize, tree: &BTreeSet<Edge>, from: usize, to: usize) -> Vec<Edge> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in tree {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut parent = vec![usize::MAX; n];
    parent[from] = from;
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if parent[w] == usize::MAX {
                parent[w] = v;
                stack.push(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut v = to;
    while v != from {
        let p = parent[v];
        path.push(norm(p, v));
        v = p;
    }
    path.sort_unstable();
    path
}

fn is_forest(n: usize, tree: &BTreeSet<Edge>) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    tree.iter().all(|&(a, b)| {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
        ra != rb
    })
}

/// Places one copy of `edge` into the family by a shortest exchange chain:
/// `edge` enters some tree, evicting an edge on the cycle it closes, which
/// enters another tree, and so on until an edge joins two components of an
/// incomplete tree. A chain of length one is a direct repair.
fn insert_by_exchange(n: usize, trees: &mut [BTreeSet<Edge>], edge: Edge) -> bool {
    use std::collections::{HashMap, VecDeque};
    // Node: (tree, evicted edge); the root is the incoming copy.
    let mut pred: HashMap<(usize, Edge), Option<(usize, Edge)>> = HashMap::new();
    let mut queue: VecDeque<(Option<(usize, Edge)>, Edge)> = VecDeque::new();
    queue.push_back((None, edge));
    let labels: Vec<Vec<usize>> = trees.iter().map(|t| components(n, t)).collect();
    while let Some((node, x)) = queue.pop_front() {
        for t in 0..trees.len() {
            if trees[t].contains(&x) || node.is_some_and(|(src, _)| src == t) {
                continue;
            }
            if labels[t][x.0] != labels[t][x.1] {
                // Sink: walk the chain back, applying the exchanges.
                trees[t].insert(x);
                let mut cur = node;
                let mut carried = x;
                while let Some((src, evicted)) = cur {
                    debug_assert_eq!(evicted, carried);
                    let prev = pred[&(src, evicted)];
                    let incoming = match prev {
                        Some((_, e)) => e,
                        None => edge,
                    };
                    trees[src].remove(&evicted);
                    trees[src].insert(incoming);
                    carried = incoming;
                    cur = prev;
                }
                return true;
            }
            for y in tree_path(n, &trees[t], x.0, x.1) {
                if let std::collections::hash_map::Entry::Vacant(v) = pred.entry((t, y)) {
                    v.insert(node);
                    queue.push_back((Some((t, y)), y));
                }
            }
        }
    }
    false
}

/// One elimination step: delete `removed` from the current graph and tree
/// set, drop one tree that contained it and hand that tree's other edges to
/// the trees left incomplete.
fn eliminate_edge(
    n: usize,
    edges: &mut BTreeSet<Edge>,
    trees: &mut Vec<BTreeSet<Edge>>,
    removed: Edge,
    step: usize,
) -> Result<()> {
    let fail = |reason: String| Error::Certificate { step, reason };
    if !edges.remove(&removed) {
        return Err(fail(format!("edge {removed:?} is not in the current graph")));
    }
    for v in [removed.0, removed.1] {
        let deg = edges.iter().filter(|&&(a, b)| a == v || b == v).count();
        if deg < 2 {
            return Err(fail(format!("removing {removed:?} leaves node {v} with degree {deg}")));
        }
    }
    let current = Graph::new(n, edges.iter().copied()).expect("edges stay valid");
    if !current.is_connected() {
        return Err(fail(format!("removing {removed:?} disconnects the graph")));
    }

    let containing: Vec<usize> = (0..trees.len()).filter(|&t| trees[t].contains(&removed)).collect();
    for &dropped in &containing {
        let mut trial = trees.clone();
        let donor: Vec<Edge> = trial[dropped].iter().copied().filter(|&e| e != removed).collect();
        trial.remove(dropped);
        for t in trial.iter_mut() {
            t.remove(&removed);
        }
        if donor.iter().all(|&e| insert_by_exchange(n, &mut trial, e)) {
            if !trial.iter().all(|t| t.len() == n - 1 && is_forest(n, t)) {
                return Err(fail("exchange chain produced an invalid tree".into()));
            }
            *trees = trial;
            return Ok(());
        }
    }
    Err(fail(format!(
        "after removing {removed:?} no family of spanning trees covers every edge {} times",
        n - 1
    )))
}

/// Builds an edge-uniform certificate for `graph`, reached from `K_N` by
/// deleting the `K_N` edges listed in `elimination_order` (ids in the
/// canonical edge order of `K_N`) one at a time.
pub fn build_edge_uniform_certificate(graph: &Graph, elimination_order: &[usize]) -> Result<SpanningTreeSet> {
    let n = graph.node_count();
    let complete = build_complete(n)?;
    let mut edges: BTreeSet<Edge> = complete.edges().iter().copied().collect();
    let mut trees = complete_graph_trees(n);
    for (step, &id) in elimination_order.iter().enumerate() {
        let removed = complete
            .edge(id)
            .ok_or_else(|| Error::Certificate { step, reason: format!("K_{n} has no edge id {id}") })?;
        eliminate_edge(n, &mut edges, &mut trees, removed, step)?;
    }
    let target: BTreeSet<Edge> = graph.edges().iter().copied().collect();
    if edges != target {
        return Err(Error::Certificate {
            step: elimination_order.len(),
            reason: "eliminations do not produce the input graph".into(),
        });
    }
    let trees: Vec<Vec<usize>> = trees
        .iter()
        .map(|t| t.iter().map(|&(a, b)| graph.edge_id(a, b).expect("edge in graph")).collect())
        .collect();
    let set = SpanningTreeSet::uniform(trees);
    let violations = validate_tree_set(graph, &set);
    if let Some(v) = violations.first() {
        return Err(Error::Certificate { step: elimination_order.len(), reason: v.to_string() });
    }
    let counts = set.appearance_counts(graph.edge_count());
    if let Some(e) = counts.iter().position(|&c| c != n - 1) {
        return Err(Error::Certificate {
            step: elimination_order.len(),
            reason: format!("edge {e} appears in {} trees instead of {}", counts[e], n - 1),
        });
    }
    Ok(set)
}

/// Finds an elimination order from `K_N` down to `graph` and the resulting
/// certificate. At each step the missing edges are tried by decreasing
/// endpoint degree sum in the current graph (ties by lower id), and the first
/// one whose elimination succeeds is taken.
pub fn certificate_for_graph(graph: &Graph) -> Result<(Vec<usize>, SpanningTreeSet)> {
    check_edge_uniform_preconditions(graph)?;
    let n = graph.node_count();
    let complete = build_complete(n)?;
    let mut edges: BTreeSet<Edge> = complete.edges().iter().copied().collect();
    let mut trees = complete_graph_trees(n);
    let mut remaining: Vec<usize> = (0..complete.edge_count())
        .filter(|&i| {
            let (a, b) = complete.edges()[i];
            graph.edge_id(a, b).is_none()
        })
        .collect();
    let mut order = Vec::with_capacity(remaining.len());
    let mut degree = vec![n - 1; n];
    while !remaining.is_empty() {
        let step = order.len();
        remaining.sort_by_key(|&i| {
            let (a, b) = complete.edges()[i];
            (std::cmp::Reverse(degree[a] + degree[b]), i)
        });
        let mut chosen = None;
        let mut last_err = None;
        for (k, &id) in remaining.iter().enumerate() {
            let mut e2 = edges.clone();
            let mut t2 = trees.clone();
            match eliminate_edge(n, &mut e2, &mut t2, complete.edges()[id], step) {
                Ok(()) => {
                    edges = e2;
                    trees = t2;
                    chosen = Some(k);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let k = match chosen {
            Some(k) => k,
            None => return Err(last_err.expect("at least one candidate")),
        };
        let id = remaining.remove(k);
        let (a, b) = complete.edges()[id];
        degree[a] -= 1;
        degree[b] -= 1;
        order.push(id);
    }
    let set = build_edge_uniform_certificate(graph, &order)?;
    Ok((order, set))
}
