//! Fractional belief propagation in the log domain.
//!
//! For per-edge weights `rho_ab` in `(0, 1]` the fractional free energy is
//! `E(B) - H(B)` with
//! `H = -Σ_ab rho_ab Σ B_ab ln B_ab + Σ_a (Σ_{c~a} rho_ac - 1) Σ B_a ln B_a`.
//! Its stationary points are parametrized by node-to-node messages
//! `mu_{b->a}(x_a)`: node beliefs are `B_a ∝ Π_b mu_{b->a}` and edge beliefs are
//! `B_ab ∝ exp(-E_ab / rho_ab) mu_{b->a}^{k_a / rho_ab} mu_{a->b}^{k_b / rho_ab}`
//! with `k_a = Σ_{c~a} rho_ac - 1`.
//!
//! The solver iterates the equivalent cavity form
//! `M_{b->a}(x_a) ∝ Σ_{x_b} exp(-E_ab / rho_ab) P_b(x_b) / M_{a->b}(x_b)`,
//! `P_b = Π_c M_{c->b}^{rho_bc}`, which stays well posed where the `mu` update
//! has a vanishing exponent (plain BP at degree-two nodes), and converts to
//! `mu_{b->a} = (P_a / M_{b->a})^{rho_ab / k_a}` at the end.

use crate::error::{Error, Result};
use crate::model::IsingModel;
use crate::numeric::{log_sum_exp, normalize_log2, xlogx};

/// Default tolerance for the local-consistency constraints on beliefs.
pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-7;

/// `|k_a|` at or below this is treated as an exactly vanishing exponent.
const DEGENERATE_EXPONENT: f64 = 1e-12;

/// Message slot for edge `e` directed into its lower (`into_low`) or higher endpoint.
#[inline]
fn slot(edge: usize, into_low: bool) -> usize {
    2 * edge + usize::from(!into_low)
}

/// Log-domain messages `ln mu_{b->a}(x_a)`, normalized to a maximum of zero.
///
/// Slot `2e` holds the message into the lower endpoint of edge `e`,
/// slot `2e + 1` the message into the higher endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    log_mu: Vec<[f64; 2]>,
}

impl MessageSet {
    pub fn uniform(edge_count: usize) -> Self {
        Self { log_mu: vec![[0.0; 2]; 2 * edge_count] }
    }

    /// Wraps raw log messages, normalizing each directed edge.
    pub fn from_log(mut log_mu: Vec<[f64; 2]>) -> Result<Self> {
        if log_mu.len() % 2 != 0 {
            return Err(Error::InvalidArgument("message count must be even".into()));
        }
        if log_mu.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("messages must be finite".into()));
        }
        log_mu.iter_mut().for_each(normalize_log2);
        Ok(Self { log_mu })
    }

    /// Raw slots, see the type docs for the layout.
    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.log_mu
    }

    pub fn edge_count(&self) -> usize {
        self.log_mu.len() / 2
    }

    /// `ln mu` on edge `edge` into node `target`, given the edge's endpoints.
    pub fn into_node(&self, edge: usize, endpoints: (usize, usize), target: usize) -> [f64; 2] {
        self.log_mu[slot(edge, target == endpoints.0)]
    }
}

/// Node and edge beliefs. Tables are indexed by spin slot (0 for `-1`, 1 for `+1`);
/// edge tables are `[slot(x_a)][slot(x_b)]` with `a < b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSet {
    pub node: Vec<[f64; 2]>,
    pub edge: Vec<[[f64; 2]; 2]>,
}

impl BeliefSet {
    /// Largest `|Σ_{x_b} B_ab(x_a, x_b) - B_a(x_a)|` over edges, endpoints and spins.
    pub fn consistency_violation(&self, model: &IsingModel) -> f64 {
        let mut worst: f64 = 0.0;
        for (e, &(a, b)) in model.graph().edges().iter().enumerate() {
            let t = &self.edge[e];
            for x in 0..2 {
                worst = worst.max((t[x][0] + t[x][1] - self.node[a][x]).abs());
                worst = worst.max((t[0][x] + t[1][x] - self.node[b][x]).abs());
            }
        }
        worst
    }

    /// Largest deviation from normalization, plus any negative mass.
    pub fn normalization_violation(&self) -> f64 {
        let nodes = self.node.iter().map(|b| (b[0] + b[1] - 1.0).abs() + neg(b.iter()));
        let edges = self.edge.iter().map(|t| (t.iter().flatten().sum::<f64>() - 1.0).abs() + neg(t.iter().flatten()));
        nodes.chain(edges).fold(0.0, f64::max)
    }

    /// Membership in the local polytope up to `tol`.
    pub fn check(&self, model: &IsingModel, tol: f64) -> Result<()> {
        if self.node.len() != model.node_count() || self.edge.len() != model.edge_count() {
            return Err(Error::InvalidArgument("belief set does not match the model".into()));
        }
        let violation = self.consistency_violation(model).max(self.normalization_violation());
        if violation.is_nan() || violation > tol {
            return Err(Error::Inconsistent { violation, tol });
        }
        Ok(())
    }
}

fn neg<'a>(xs: impl Iterator<Item = &'a f64>) -> f64 {
    xs.map(|&x| (-x).max(0.0)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Every directed message recomputed from the previous sweep's snapshot.
    Parallel,
    /// Node by node; later nodes see messages already updated in this sweep.
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Uniform,
    Messages(MessageSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbpOptions {
    pub max_iters: usize,
    /// Sup-norm of the change in normalized log messages over one sweep.
    pub tol: f64,
    /// Weight of the previous log message in the geometric mix.
    pub damping: f64,
    pub schedule: Schedule,
    pub init: Init,
}

impl Default for FbpOptions {
    fn default() -> Self {
        Self { max_iters: 10_000, tol: 1e-10, damping: 0.5, schedule: Schedule::Sequential, init: Init::Uniform }
    }
}

impl FbpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidArgument(format!("damping {} outside [0, 1)", self.damping)));
        }
        Ok(())
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
}

#[derive(Debug, Clone)]
pub struct FbpResult {
    pub messages: MessageSet,
    pub beliefs: BeliefSet,
    /// Fractional free energy evaluated on `beliefs`.
    pub free_energy: f64,
    /// `-free_energy`.
    pub log_z: f64,
    /// The same quantity from the message-product formula.
    pub log_z_product: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub residual_trace: Vec<f64>,
}

/// Per-run constants shared by the solver and the evaluators.
struct Frame<'a> {
    model: &'a IsingModel,
    rho: &'a [f64],
    /// `Σ_{c~a} rho_ac - 1`.
    kappa: Vec<f64>,
    /// Factor energies `[slot(x_a)][slot(x_b)]`.
    energy: Vec<[[f64; 2]; 2]>,
}

impl<'a> Frame<'a> {
    fn new(model: &'a IsingModel, rho: &'a [f64]) -> Result<Self> {
        let g = model.graph();
        if rho.len() != g.edge_count() {
            return Err(Error::InvalidArgument(format!("{} rho values for {} edges", rho.len(), g.edge_count())));
        }
        if let Some((e, r)) = rho.iter().enumerate().find(|(_, &r)| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::InvalidArgument(format!("rho on edge {e} is {r}, outside (0, 1]")));
        }
        if let Some(a) = (0..g.node_count()).find(|&a| g.degree(a) == 0) {
            return Err(Error::InvalidModel(format!("node {a} is isolated")));
        }
        let kappa = (0..g.node_count())
            .map(|a| g.incident(a).iter().map(|&e| rho[e]).sum::<f64>() - 1.0)
            .collect();
        let energy = (0..g.edge_count()).map(|e| model.factor_energy_table(e)).collect();
        Ok(Self { model, rho, kappa, energy })
    }

    /// Message form requires a non-vanishing exponent except at leaves.
    fn require_message_form(&self) -> Result<()> {
        let g = self.model.graph();
        for (a, &k) in self.kappa.iter().enumerate() {
            if k.abs() <= DEGENERATE_EXPONENT && g.degree(a) > 1 {
                return Err(Error::DegenerateExponent { node: a, degree: g.degree(a) });
            }
        }
        Ok(())
    }

    fn edge_count(&self) -> usize {
        self.energy.len()
    }

    /// Slot of the message on `edge` into `node`.
    fn slot_into(&self, edge: usize, node: usize) -> usize {
        slot(edge, self.model.graph().edges()[edge].0 == node)
    }

    /// `ln P_a = Σ_c rho_ac ln M_{c->a}`.
    fn cavity_product(&self, cavity: &[[f64; 2]], a: usize) -> [f64; 2] {
        let mut p = [0.0; 2];
        for &e in self.model.graph().incident(a) {
            let m = cavity[self.slot_into(e, a)];
            p[0] += self.rho[e] * m[0];
            p[1] += self.rho[e] * m[1];
        }
        p
    }

    /// Fresh cavity message on `edge` from `from` into `to`, normalized.
    fn cavity_update(&self, cavity: &[[f64; 2]], p_from: &[f64; 2], edge: usize, from: usize, to: usize) -> [f64; 2] {
        let back = cavity[self.slot_into(edge, from)];
        let low_is_to = self.model.graph().edges()[edge].0 == to;
        let t = &self.energy[edge];
        let r = self.rho[edge];
        let mut out = [0.0; 2];
        for (xt, o) in out.iter_mut().enumerate() {
            let terms: [f64; 2] = std::array::from_fn(|xf| {
                let en = if low_is_to { t[xt][xf] } else { t[xf][xt] };
                -en / r + p_from[xf] - back[xf]
            });
            *o = crate::numeric::log_add_exp(terms[0], terms[1]);
        }
        normalize_log2(&mut out);
        out
    }

    fn cavity_to_mu(&self, cavity: &[[f64; 2]]) -> MessageSet {
        let g = self.model.graph();
        let mut log_mu = vec![[0.0; 2]; cavity.len()];
        for a in 0..g.node_count() {
            let p = self.cavity_product(cavity, a);
            let k = self.kappa[a];
            for &e in g.incident(a) {
                let s = self.slot_into(e, a);
                let r = self.rho[e];
                let mut m = if k.abs() > DEGENERATE_EXPONENT {
                    [r / k * (p[0] - cavity[s][0]), r / k * (p[1] - cavity[s][1])]
                } else {
                    [r * cavity[s][0], r * cavity[s][1]]
                };
                normalize_log2(&mut m);
                log_mu[s] = m;
            }
        }
        MessageSet { log_mu }
    }

    fn mu_to_cavity(&self, mu: &MessageSet) -> Vec<[f64; 2]> {
        let g = self.model.graph();
        let mut cavity = vec![[0.0; 2]; mu.log_mu.len()];
        for a in 0..g.node_count() {
            let mut total = [0.0; 2];
            for &e in g.incident(a) {
                let m = mu.log_mu[self.slot_into(e, a)];
                total[0] += m[0];
                total[1] += m[1];
            }
            let k = self.kappa[a];
            for &e in g.incident(a) {
                let s = self.slot_into(e, a);
                let r = self.rho[e];
                let m = mu.log_mu[s];
                let mut c = if k.abs() > DEGENERATE_EXPONENT {
                    [total[0] - k / r * m[0], total[1] - k / r * m[1]]
                } else {
                    [m[0] / r, m[1] / r]
                };
                normalize_log2(&mut c);
                cavity[s] = c;
            }
        }
        cavity
    }

    fn edge_log_table(&self, mu: &MessageSet, e: usize) -> [[f64; 2]; 2] {
        let (a, b) = self.model.graph().edges()[e];
        let r = self.rho[e];
        let ma = mu.log_mu[slot(e, true)];
        let mb = mu.log_mu[slot(e, false)];
        let (ka, kb) = (self.kappa[a] / r, self.kappa[b] / r);
        let t = &self.energy[e];
        std::array::from_fn(|xa| std::array::from_fn(|xb| -t[xa][xb] / r + ka * ma[xa] + kb * mb[xb]))
    }

    fn node_log_table(&self, mu: &MessageSet, a: usize) -> [f64; 2] {
        let mut s = [0.0; 2];
        for &e in self.model.graph().incident(a) {
            let m = mu.log_mu[self.slot_into(e, a)];
            s[0] += m[0];
            s[1] += m[1];
        }
        s
    }

    fn beliefs(&self, mu: &MessageSet) -> BeliefSet {
        let g = self.model.graph();
        let node = (0..g.node_count())
            .map(|a| {
                let l = self.node_log_table(mu, a);
                let z = log_sum_exp(&l);
                let b = [(l[0] - z).exp(), (l[1] - z).exp()];
                let s = b[0] + b[1];
                [b[0] / s, b[1] / s]
            })
            .collect();
        let edge = (0..self.edge_count())
            .map(|e| {
                let l = self.edge_log_table(mu, e);
                let flat = [l[0][0], l[0][1], l[1][0], l[1][1]];
                let z = log_sum_exp(&flat);
                let mut t = l.map(|row| row.map(|v| (v - z).exp()));
                let s: f64 = t.iter().flatten().sum();
                t.iter_mut().flatten().for_each(|v| *v /= s);
                t
            })
            .collect();
        BeliefSet { node, edge }
    }

    fn free_energy(&self, beliefs: &BeliefSet) -> f64 {
        let g = self.model.graph();
        let mut energy = 0.0;
        let mut edge_entropy = 0.0;
        for e in 0..self.edge_count() {
            let t = &beliefs.edge[e];
            let en = &self.energy[e];
            let mut u = 0.0;
            let mut s = 0.0;
            for xa in 0..2 {
                for xb in 0..2 {
                    u += en[xa][xb] * t[xa][xb];
                    s += xlogx(t[xa][xb]);
                }
            }
            energy += u;
            edge_entropy += self.rho[e] * s;
        }
        let node_term: f64 = (0..g.node_count())
            .map(|a| self.kappa[a] * (xlogx(beliefs.node[a][0]) + xlogx(beliefs.node[a][1])))
            .sum();
        // F = E - H,  H = -Σ rho Σ B ln B + Σ k_a Σ B_a ln B_a
        energy + edge_entropy - node_term
    }

    fn log_z_product(&self, mu: &MessageSet) -> f64 {
        let edges: f64 = (0..self.edge_count())
            .map(|e| {
                let l = self.edge_log_table(mu, e);
                self.rho[e] * log_sum_exp(&[l[0][0], l[0][1], l[1][0], l[1][1]])
            })
            .sum();
        let nodes: f64 = (0..self.model.node_count())
            .map(|a| -self.kappa[a] * log_sum_exp(&self.node_log_table(mu, a)))
            .sum();
        edges + nodes
    }
}

/// Runs fractional BP for per-edge weights `rho` (typically `rho^(lambda)`).
///
/// Returns the best-residual iterate with `converged = false` when `max_iters`
/// sweeps do not bring the residual below `tol`.
pub fn run_fbp(model: &IsingModel, rho: &[f64], options: &FbpOptions) -> Result<FbpResult> {
    options.validate()?;
    let frame = Frame::new(model, rho)?;
    frame.require_message_form()?;
    let g = model.graph();
    let mut cavity = match &options.init {
        Init::Uniform => vec![[0.0; 2]; 2 * g.edge_count()],
        Init::Messages(mu) => {
            if mu.edge_count() != g.edge_count() {
                return Err(Error::InvalidArgument("initial messages do not match the model".into()));
            }
            frame.mu_to_cavity(mu)
        }
    };
    let d = options.damping;
    let mix = |fresh: [f64; 2], old: [f64; 2]| -> [f64; 2] {
        let mut v = [(1.0 - d) * fresh[0] + d * old[0], (1.0 - d) * fresh[1] + d * old[1]];
        normalize_log2(&mut v);
        v
    };

    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, cavity.clone());
    let mut converged = false;
    let mut iterations = 0;
    let mut scratch = cavity.clone();
    while iterations < options.max_iters {
        iterations += 1;
        let mut residual: f64 = 0.0;
        match options.schedule {
            Schedule::Sequential => {
                for t in 0..g.node_count() {
                    let p = frame.cavity_product(&cavity, t);
                    for &e in g.incident(t) {
                        let s = g.other_end(e, t);
                        let k = frame.slot_into(e, s);
                        let v = mix(frame.cavity_update(&cavity, &p, e, t, s), cavity[k]);
                        residual = residual.max((v[0] - cavity[k][0]).abs()).max((v[1] - cavity[k][1]).abs());
                        cavity[k] = v;
                    }
                }
            }
            Schedule::Parallel => {
                let products: Vec<[f64; 2]> = (0..g.node_count()).map(|a| frame.cavity_product(&cavity, a)).collect();
                for t in 0..g.node_count() {
                    for &e in g.incident(t) {
                        let s = g.other_end(e, t);
                        let k = frame.slot_into(e, s);
                        scratch[k] = mix(frame.cavity_update(&cavity, &products[t], e, t, s), cavity[k]);
                        residual = residual.max((scratch[k][0] - cavity[k][0]).abs()).max((scratch[k][1] - cavity[k][1]).abs());
                    }
                }
                std::mem::swap(&mut cavity, &mut scratch);
            }
        }
        if !residual.is_finite() || cavity.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(format!("non-finite message after sweep {iterations}")));
        }
        trace.push(residual);
        if residual < best.0 {
            best.0 = residual;
            best.1.clone_from(&cavity);
        }
        if residual <= options.tol {
            converged = true;
            break;
        }
    }
    let (final_residual, cavity) = if converged { (*trace.last().unwrap(), cavity) } else { best };

    let messages = frame.cavity_to_mu(&cavity);
    let beliefs = frame.beliefs(&messages);
    let free_energy = frame.free_energy(&beliefs);
    if !free_energy.is_finite() {
        return Err(Error::NumericOverflow("free energy is not finite".into()));
    }
    let log_z_product = frame.log_z_product(&messages);
    Ok(FbpResult {
        messages,
        beliefs,
        free_energy,
        log_z: -free_energy,
        log_z_product,
        converged,
        iterations,
        final_residual,
        residual_trace: trace,
    })
}

/// Node and edge beliefs implied by `mu` messages.
pub fn beliefs_from_messages(model: &IsingModel, rho: &[f64], messages: &MessageSet) -> Result<BeliefSet> {
    let frame = Frame::new(model, rho)?;
    frame.require_message_form()?;
    if messages.edge_count() != model.edge_count() {
        return Err(Error::InvalidArgument("messages do not match the model".into()));
    }
    Ok(frame.beliefs(messages))
}

/// Fractional free energy `E(B) - H(B)`; beliefs must be locally consistent
/// within [`DEFAULT_CONSISTENCY_TOL`].
pub fn free_energy(model: &IsingModel, rho: &[f64], beliefs: &BeliefSet) -> Result<f64> {
    free_energy_with_tol(model, rho, beliefs, DEFAULT_CONSISTENCY_TOL)
}

pub fn free_energy_with_tol(model: &IsingModel, rho: &[f64], beliefs: &BeliefSet, tol: f64) -> Result<f64> {
    let frame = Frame::new(model, rho)?;
    beliefs.check(model, tol)?;
    Ok(frame.free_energy(beliefs))
}

/// `ln Z^(lambda)` from the message-product formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductLogZ {
    pub log_z: f64,
    /// Local-consistency violation of the beliefs these messages imply; zero at a fixed point.
    pub consistency_residual: f64,
    /// `consistency_residual <= DEFAULT_CONSISTENCY_TOL`.
    pub at_fixed_point: bool,
}

/// Evaluates `ln Z^(lambda)` as a product over edges and nodes of message sums.
/// Only meaningful at a fixed point; the result carries a flag saying whether
/// the messages are one.
pub fn log_z_from_messages(model: &IsingModel, rho: &[f64], messages: &MessageSet) -> Result<ProductLogZ> {
    let beliefs = beliefs_from_messages(model, rho, messages)?;
    let frame = Frame::new(model, rho)?;
    let consistency_residual = beliefs.consistency_violation(model);
    Ok(ProductLogZ {
        log_z: frame.log_z_product(messages),
        consistency_residual,
        at_fixed_point: consistency_residual <= DEFAULT_CONSISTENCY_TOL,
    })
}
