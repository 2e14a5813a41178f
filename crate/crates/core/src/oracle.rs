//! Ground truth for small instances.

use crate::error::{Error, Result};
use crate::exact::{self, ExactMethod, PairwiseLogModel, DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT, ENUMERATION_CEILING};
use crate::fbp::BeliefSet;
use crate::model::{Graph, IsingModel};

/// Exact partition function and marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub log_z: f64,
    pub node_marginals: Vec<[f64; 2]>,
    /// Per edge, `[slot(x_a)][slot(x_b)]` with `a < b`.
    pub edge_marginals: Vec<[[f64; 2]; 2]>,
}

impl ExactResult {
    pub fn beliefs(&self) -> BeliefSet {
        BeliefSet { node: self.node_marginals.clone(), edge: self.edge_marginals.clone() }
    }
}

/// Enumerates all `2^N` states; `N` may not exceed [`DEFAULT_ENUMERATION_CAP`].
pub fn brute_force(model: &IsingModel) -> Result<ExactResult> {
    brute_force_with_cap(model, DEFAULT_ENUMERATION_CAP)
}

/// As [`brute_force`] with a raised cap, up to [`ENUMERATION_CEILING`].
pub fn brute_force_with_cap(model: &IsingModel, cap: usize) -> Result<ExactResult> {
    let n = model.node_count();
    let cap = cap.min(ENUMERATION_CEILING);
    if n > cap {
        return Err(Error::TooLarge { nodes: n, cap });
    }
    if n > DEFAULT_ENUMERATION_CAP {
        eprintln!("warning: enumerating 2^{n} states, this may take a while");
    }
    let e = exact::enumerate(&PairwiseLogModel::from_ising(model), true)?;
    Ok(ExactResult { log_z: e.log_z, node_marginals: e.node, edge_marginals: e.pair })
}

/// `ln Z` by enumeration when `N <= DEFAULT_ENUMERATION_CAP`, otherwise by
/// variable elimination.
pub fn exact_log_z(model: &IsingModel) -> Result<(f64, ExactMethod)> {
    exact::log_partition(&PairwiseLogModel::from_ising(model), DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT)
}

/// Adds an auxiliary spin joined to every node `a` with coupling `h_a` and
/// zeroes all fields, so that `ln Z = ln Z* - ln 2`. Returns the new model and
/// the auxiliary node id (`N`).
pub fn to_zero_field(model: &IsingModel) -> Result<(IsingModel, usize)> {
    let n = model.node_count();
    if n == 0 {
        return Err(Error::InvalidModel("model has no nodes".into()));
    }
    let g = model.graph();
    let edges: Vec<(usize, usize)> = g.edges().iter().copied().chain((0..n).map(|a| (a, n))).collect();
    let couplings_in: Vec<f64> = model.couplings().iter().copied().chain(model.fields().iter().copied()).collect();
    let (graph, ids) = Graph::with_permutation(n + 1, edges)?;
    let mut couplings = vec![0.0; couplings_in.len()];
    for (i, &id) in ids.iter().enumerate() {
        couplings[id] = couplings_in[i];
    }
    Ok((IsingModel::new(graph, couplings, vec![0.0; n + 1])?, n))
}
