//! The multiplicative correction `Z = Z^(lambda) * C^(lambda)`.
//!
//! With `p0(x) = Π_a B_a(x_a)` built from the fractional node beliefs,
//! `C = E_{x~p0}[ Π_ab B_ab(x_a,x_b)^rho_ab / Π_a B_a(x_a)^{Σ_c rho_ac} ]`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::{self, ExactMethod, PairwiseLogModel, DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT};
use crate::fbp::BeliefSet;
use crate::model::{spin_index, IsingModel};
use crate::numeric::CompensatedSum;
use crate::rng::{stream_rng, unit_f64};

/// Samples per RNG stream.
pub const DEFAULT_BATCH_SIZE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub samples: u64,
    pub log_mean: f64,
    pub std_error_log: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionEstimate {
    /// Log of the sample mean of the weights.
    pub log_mean: f64,
    /// Delta-method standard error of `log_mean`.
    pub std_error_log: f64,
    pub samples: u64,
    /// Running estimate after each batch.
    pub trace: Vec<TracePoint>,
    /// Set when the estimate is degenerate (every weight zero).
    pub diagnostic: Option<String>,
}

fn check_inputs(model: &IsingModel, rho: &[f64], beliefs: &BeliefSet) -> Result<()> {
    if rho.len() != model.edge_count() {
        return Err(Error::InvalidArgument(format!("{} rho values for {} edges", rho.len(), model.edge_count())));
    }
    if beliefs.node.len() != model.node_count() || beliefs.edge.len() != model.edge_count() {
        return Err(Error::InvalidArgument("belief set does not match the model".into()));
    }
    Ok(())
}

/// `ln(B_ab / (B_a B_b))`, with zero-mass entries outside the support of `B_a B_b` set to 0.
fn pmi_table(beliefs: &BeliefSet, e: usize, a: usize, b: usize) -> [[f64; 2]; 2] {
    let t = &beliefs.edge[e];
    std::array::from_fn(|xa| {
        std::array::from_fn(|xb| {
            let (na, nb) = (beliefs.node[a][xa], beliefs.node[b][xb]);
            if na <= 0.0 || nb <= 0.0 {
                0.0
            } else {
                (t[xa][xb] / (na * nb)).ln()
            }
        })
    })
}

/// Log of the expectand at `state`:
/// `Σ_ab rho_ab ln B_ab(x_a,x_b) - Σ_a (Σ_c rho_ac) ln B_a(x_a)`.
///
/// A zero node belief at `state` is an error; a zero edge belief gives `-inf`.
pub fn log_weight(model: &IsingModel, rho: &[f64], beliefs: &BeliefSet, state: &[i8]) -> Result<f64> {
    check_inputs(model, rho, beliefs)?;
    if state.len() != model.node_count() {
        return Err(Error::InvalidArgument("state length does not match the model".into()));
    }
    for (a, &x) in state.iter().enumerate() {
        if x != 1 && x != -1 {
            return Err(Error::InvalidArgument(format!("spin {x} at node {a}")));
        }
        if beliefs.node[a][spin_index(x)] <= 0.0 {
            return Err(Error::DegenerateMarginal { node: a });
        }
    }
    Ok(log_weight_unchecked(model, rho, beliefs, state))
}

fn log_weight_unchecked(model: &IsingModel, rho: &[f64], beliefs: &BeliefSet, state: &[i8]) -> f64 {
    let mut w = 0.0;
    for (e, &(a, b)) in model.graph().edges().iter().enumerate() {
        let (xa, xb) = (spin_index(state[a]), spin_index(state[b]));
        let pab = beliefs.edge[e][xa][xb];
        if pab <= 0.0 {
            return f64::NEG_INFINITY;
        }
        w += rho[e] * (pab / (beliefs.node[a][xa] * beliefs.node[b][xb])).ln();
    }
    w
}

/// Exact `ln C` by enumeration; `N` may not exceed [`DEFAULT_ENUMERATION_CAP`].
pub fn exact_correction(model: &IsingModel, rho: &[f64], beliefs: &BeliefSet) -> Result<f64> {
    let n = model.node_count();
    if n > DEFAULT_ENUMERATION_CAP {
        return Err(Error::TooLarge { nodes: n, cap: DEFAULT_ENUMERATION_CAP });
    }
    Ok(exact_correction_with(model, rho, beliefs, DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT)?.0)
}

/// Exact `ln C`, enumerating up to `cap` nodes and eliminating variables above it.
pub fn exact_correction_with(
    model: &IsingModel,
    rho: &[f64],
    beliefs: &BeliefSet,
    cap: usize,
    width_limit: usize,
) -> Result<(f64, ExactMethod)> {
    check_inputs(model, rho, beliefs)?;
    let mut pm = PairwiseLogModel::new(model.node_count());
    for (a, b) in beliefs.node.iter().enumerate() {
        pm.add_unary(a, [b[0].ln(), b[1].ln()])?;
    }
    for (e, &(a, b)) in model.graph().edges().iter().enumerate() {
        let t = pmi_table(beliefs, e, a, b).map(|row| row.map(|v| rho[e] * v));
        pm.add_pair(a, b, t)?;
    }
    exact::log_partition(&pm, cap, width_limit)
}

/// Running sums of `exp(w - max)` and `exp(2 (w - max))`.
#[derive(Debug, Clone, Copy)]
struct Moments {
    count: u64,
    max: f64,
    s1: CompensatedSum,
    s2: CompensatedSum,
}

impl Moments {
    fn empty() -> Self {
        Self { count: 0, max: f64::NEG_INFINITY, s1: CompensatedSum::new(), s2: CompensatedSum::new() }
    }

    fn from_weights(ws: &[f64]) -> Self {
        let max = ws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut m = Self { count: ws.len() as u64, max, ..Self::empty() };
        if max > f64::NEG_INFINITY {
            for &w in ws {
                let e = (w - max).exp();
                m.s1.add(e);
                m.s2.add(e * e);
            }
        }
        m
    }

    fn merge(&mut self, other: &Moments) {
        let max = self.max.max(other.max);
        let mut out = Self { count: self.count + other.count, max, ..Self::empty() };
        if max > f64::NEG_INFINITY {
            for m in [&*self, other] {
                if m.max > f64::NEG_INFINITY {
                    let s = (m.max - max).exp();
                    out.s1.add(m.s1.value() * s);
                    out.s2.add(m.s2.value() * s * s);
                }
            }
        }
        *self = out;
    }

    fn point(&self) -> TracePoint {
        let n = self.count as f64;
        let mean = self.s1.value() / n;
        let log_mean = if mean > 0.0 { self.max + mean.ln() } else { f64::NEG_INFINITY };
        let std_error_log = if mean > 0.0 && self.count > 1 {
            let var = ((self.s2.value() / n - mean * mean) * n / (n - 1.0)).max(0.0);
            (var / n).sqrt() / mean
        } else if mean > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
        TracePoint { samples: self.count, log_mean, std_error_log }
    }
}

/// Monte Carlo estimate of `ln C` from `num_samples` draws of `p0`, in batches of
/// [`DEFAULT_BATCH_SIZE`].
pub fn estimate_correction(
    model: &IsingModel,
    rho: &[f64],
    beliefs: &BeliefSet,
    num_samples: u64,
    seed: u64,
) -> Result<CorrectionEstimate> {
    estimate_correction_batched(model, rho, beliefs, num_samples, seed, DEFAULT_BATCH_SIZE)
}

/// As [`estimate_correction`]. Batch `k` draws from RNG stream `k` of `seed`, so the
/// result depends on `(seed, batch_size)` but not on the thread count.
pub fn estimate_correction_batched(
    model: &IsingModel,
    rho: &[f64],
    beliefs: &BeliefSet,
    num_samples: u64,
    seed: u64,
    batch_size: usize,
) -> Result<CorrectionEstimate> {
    check_inputs(model, rho, beliefs)?;
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    if beliefs.node.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("node beliefs must lie in [0, 1]".into()));
    }
    let n = model.node_count();
    let batches = num_samples.div_ceil(batch_size as u64);
    let per_batch: Vec<Moments> = (0..batches)
        .into_par_iter()
        .map(|k| {
            let len = (num_samples - k * batch_size as u64).min(batch_size as u64) as usize;
            let mut rng = stream_rng(seed, k);
            let mut state = vec![0i8; n];
            let ws: Vec<f64> = (0..len)
                .map(|_| {
                    for (a, x) in state.iter_mut().enumerate() {
                        *x = if unit_f64(&mut rng) < beliefs.node[a][1] { 1 } else { -1 };
                    }
                    log_weight_unchecked(model, rho, beliefs, &state)
                })
                .collect();
            Moments::from_weights(&ws)
        })
        .collect();

    let mut total = Moments::empty();
    let mut trace = Vec::with_capacity(per_batch.len());
    for m in &per_batch {
        total.merge(m);
        trace.push(total.point());
    }
    let last = total.point();
    let diagnostic = (last.log_mean == f64::NEG_INFINITY)
        .then(|| format!("all {} sampled weights are zero", last.samples));
    Ok(CorrectionEstimate {
        log_mean: last.log_mean,
        std_error_log: last.std_error_log,
        samples: last.samples,
        trace,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbp::{run_fbp, FbpOptions};
    use crate::model::{build_grid, sample_instance, CouplingDist, EnsembleSpec, FieldDist, Graph, Topology};
    use crate::oracle::brute_force;
    use crate::trw_weights::{edge_uniform_rho, rho_lambda};

    fn grid3(seed: u64) -> IsingModel {
        sample_instance(&EnsembleSpec { topology: Topology::Grid(3), couplings: CouplingDist::Attractive, fields: FieldDist::Positive, seed }).unwrap()
    }

    fn solve(m: &IsingModel, lambda: f64) -> (Vec<f64>, BeliefSet, f64) {
        let r = rho_lambda(&edge_uniform_rho(m.graph()).unwrap(), lambda).unwrap();
        let res = run_fbp(m, &r, &FbpOptions::default()).unwrap();
        assert!(res.converged);
        (r, res.beliefs, res.log_z)
    }

    #[test]
    fn free_model_has_unit_weights() {
        let m = IsingModel::homogeneous(build_grid(3).unwrap(), 0.0, 0.0).unwrap();
        let (r, b, _) = solve(&m, 0.4);
        assert_eq!(log_weight(&m, &r, &b, &[1, -1, 1, 1, -1, -1, 1, 1, -1]).unwrap(), 0.0);
        assert_eq!(exact_correction(&m, &r, &b).unwrap(), 0.0);
        let est = estimate_correction(&m, &r, &b, 100, 9).unwrap();
        assert_eq!(est.log_mean, 0.0);
        assert_eq!(est.std_error_log, 0.0);
        assert_eq!(est.samples, 100);
    }

    #[test]
    fn exact_path_weight_is_log_probability_minus_node_terms() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let m = IsingModel::new(g, vec![0.5, -0.3, 0.8], vec![0.2, -0.1, 0.4, 0.0]).unwrap();
        let ex = brute_force(&m).unwrap();
        let r = vec![1.0; 3];
        let b = ex.beliefs();
        let state = [1, 1, -1, -1];
        let log_p = -m.total_energy(&state).unwrap() - ex.log_z;
        let node_terms: f64 = state.iter().enumerate().map(|(a, &x)| b.node[a][spin_index(x)].ln()).sum();
        let w = log_weight(&m, &r, &b, &state).unwrap();
        assert!((w - (log_p - node_terms)).abs() < 1e-12);
        assert!(exact_correction(&m, &r, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn weight_matches_direct_product() {
        let m = grid3(4);
        let (r, b, _) = solve(&m, 0.5);
        let state = [1i8; 9];
        let mut num = 1.0;
        for (e, _) in m.graph().edges().iter().enumerate() {
            num *= b.edge[e][1][1].powf(r[e]);
        }
        let mut den = 1.0;
        for a in 0..9 {
            let s: f64 = m.graph().incident(a).iter().map(|&e| r[e]).sum();
            den *= b.node[a][1].powf(s);
        }
        let w = log_weight(&m, &r, &b, &state).unwrap();
        assert!((w - (num / den).ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_correction_closes_the_gap() {
        let m = grid3(1);
        let z = brute_force(&m).unwrap().log_z;
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let (r, b, lz) = solve(&m, lambda);
            let c = exact_correction(&m, &r, &b).unwrap();
            assert!((lz + c - z).abs() < 1e-8, "lambda {lambda}: {}", lz + c - z);
        }
    }

    #[test]
    fn estimate_is_within_three_sigma_and_deterministic() {
        let m = grid3(2);
        let (r, b, _) = solve(&m, 0.3);
        let exact = exact_correction(&m, &r, &b).unwrap();
        let est = estimate_correction(&m, &r, &b, 100_000, 17).unwrap();
        assert!((est.log_mean - exact).abs() <= 3.0 * est.std_error_log, "{} vs {exact} (se {})", est.log_mean, est.std_error_log);
        let again = estimate_correction(&m, &r, &b, 100_000, 17).unwrap();
        assert_eq!(est, again);
        assert_eq!(est.trace.len(), 100);
        assert!(est.trace.windows(2).all(|w| w[0].samples < w[1].samples));
    }

    #[test]
    fn zero_node_belief_is_degenerate() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let m = IsingModel::homogeneous(g, 0.0, 0.0).unwrap();
        let b = BeliefSet { node: vec![[0.0, 1.0], [0.5, 0.5]], edge: vec![[[0.0, 0.0], [0.5, 0.5]]] };
        assert!(matches!(log_weight(&m, &[1.0], &b, &[-1, 1]), Err(Error::DegenerateMarginal { node: 0 })));
        assert_eq!(log_weight(&m, &[1.0], &b, &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn all_zero_weights_are_reported() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let m = IsingModel::homogeneous(g, 0.0, 0.0).unwrap();
        // Edge belief puts no mass where p0 does.
        let b = BeliefSet { node: vec![[0.0, 1.0], [0.0, 1.0]], edge: vec![[[1.0, 0.0], [0.0, 0.0]]] };
        let est = estimate_correction(&m, &[1.0], &b, 10, 0).unwrap();
        assert_eq!(est.log_mean, f64::NEG_INFINITY);
        assert!(est.diagnostic.is_some());
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = grid3(0);
        let (r, b, _) = solve(&m, 0.5);
        assert!(estimate_correction(&m, &r, &b, 0, 0).is_err());
        assert!(estimate_correction_batched(&m, &r, &b, 10, 0, 0).is_err());
        assert!(exact_correction(&m, &r[1..], &b).is_err());
        assert!(log_weight(&m, &r, &b, &[1; 8]).is_err());
    }
}
