use crate::error::Result;
use crate::rng::{stream_rng, uniform};

use super::{build_complete, build_grid, Graph, IsingModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Grid(usize),
    Complete(usize),
}

impl Topology {
    pub fn build(&self) -> Result<Graph> {
        match *self {
            Topology::Grid(n) => build_grid(n),
            Topology::Complete(n) => build_complete(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingDist {
    /// `J ~ U(0, 1)`.
    Attractive,
    /// `J ~ U(-1, 1)`.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldDist {
    Zero,
    /// `h ~ U(-1, 1)`.
    Symmetric,
    /// `h ~ U(0, 1)`.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleSpec {
    pub topology: Topology,
    pub couplings: CouplingDist,
    pub fields: FieldDist,
    pub seed: u64,
}

/// Draws one instance. Couplings come first, in edge-id order, then fields in
/// node order, all from stream 0 of `spec.seed`.
pub fn sample_instance(spec: &EnsembleSpec) -> Result<IsingModel> {
    let graph = spec.topology.build()?;
    let mut rng = stream_rng(spec.seed, 0);
    let (jlo, jhi) = match spec.couplings {
        CouplingDist::Attractive => (0.0, 1.0),
        CouplingDist::Mixed => (-1.0, 1.0),
    };
    let couplings: Vec<f64> = (0..graph.edge_count()).map(|_| uniform(&mut rng, jlo, jhi)).collect();
    let fields: Vec<f64> = match spec.fields {
        FieldDist::Zero => vec![0.0; graph.node_count()],
        FieldDist::Symmetric => (0..graph.node_count()).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
        FieldDist::Positive => (0..graph.node_count()).map(|_| uniform(&mut rng, 0.0, 1.0)).collect(),
    };
    IsingModel::new(graph, couplings, fields)
}
