//! Exact log-sums over binary pairwise models: Gray-code enumeration and
//! variable elimination.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::IsingModel;
use crate::numeric::{log_add_exp, log_sum_exp, CompensatedSum};

/// Largest node count enumerated without an explicit override.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;
/// Enumeration refuses anything larger.
pub const ENUMERATION_CEILING: usize = 25;
/// Largest intermediate factor scope allowed during elimination.
pub const DEFAULT_WIDTH_LIMIT: usize = 24;

/// Bits fixed per parallel chunk.
const PREFIX_BITS: usize = 8;

/// Unnormalized log weight `Σ_a unary_a(x_a) + Σ_(a,b) pair_ab(x_a, x_b)`
/// over `n` binary variables. Tables use spin slots (0 for `-1`, 1 for `+1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseLogModel {
    n: usize,
    unary: Vec<[f64; 2]>,
    pairs: Vec<(usize, usize, [[f64; 2]; 2])>,
}

impl PairwiseLogModel {
    pub fn new(n: usize) -> Self {
        Self { n, unary: vec![[0.0; 2]; n], pairs: Vec::new() }
    }

    /// Log weight `-E(x) = Σ J x_a x_b + Σ h x_a` of an Ising model.
    pub fn from_ising(model: &IsingModel) -> Self {
        let mut m = Self::new(model.node_count());
        for (a, &h) in model.fields().iter().enumerate() {
            m.unary[a] = [-h, h];
        }
        for (&(a, b), &j) in model.graph().edges().iter().zip(model.couplings()) {
            m.pairs.push((a, b, [[j, -j], [-j, j]]));
        }
        m
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Adds `table` to the unary term of `a`.
    pub fn add_unary(&mut self, a: usize, table: [f64; 2]) -> Result<()> {
        if a >= self.n {
            return Err(Error::InvalidArgument(format!("node {a} out of range")));
        }
        check_table(table.iter())?;
        self.unary[a][0] += table[0];
        self.unary[a][1] += table[1];
        Ok(())
    }

    /// Appends a pair term indexed `[x_a][x_b]`.
    pub fn add_pair(&mut self, a: usize, b: usize, table: [[f64; 2]; 2]) -> Result<()> {
        if a >= self.n || b >= self.n || a == b {
            return Err(Error::InvalidArgument(format!("bad pair ({a}, {b})")));
        }
        check_table(table.iter().flatten())?;
        self.pairs.push((a, b, table));
        Ok(())
    }

    /// Whether flipping every spin leaves the weight unchanged.
    fn is_flip_symmetric(&self) -> bool {
        self.unary.iter().all(|t| t[0] == t[1])
            && self.pairs.iter().all(|(_, _, t)| t[0][0] == t[1][1] && t[0][1] == t[1][0])
    }

    fn has_neg_infinity(&self) -> bool {
        let u = self.unary.iter().flatten();
        let p = self.pairs.iter().flat_map(|(_, _, t)| t.iter().flatten());
        u.chain(p).any(|v| *v == f64::NEG_INFINITY)
    }

    /// Log weight of the state with bit `a` of `bits` holding the slot of `x_a`.
    fn log_weight_bits(&self, bits: u64) -> f64 {
        let bit = |a: usize| ((bits >> a) & 1) as usize;
        let mut w: f64 = (0..self.n).map(|a| self.unary[a][bit(a)]).sum();
        for &(a, b, ref t) in &self.pairs {
            w += t[bit(a)][bit(b)];
        }
        w
    }
}

fn check_table<'a>(mut xs: impl Iterator<Item = &'a f64>) -> Result<()> {
    if xs.any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidArgument("log table entries must be finite or -inf".into()));
    }
    Ok(())
}

/// Result of a full enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub log_z: f64,
    /// Normalized node marginals, empty unless requested.
    pub node: Vec<[f64; 2]>,
    /// Normalized pair marginals in pair order, empty unless requested.
    pub pair: Vec<[[f64; 2]; 2]>,
}

/// Per-chunk partial sums, all scaled by `exp(-max)`.
struct Partial {
    max: f64,
    total: CompensatedSum,
    up: Vec<CompensatedSum>,
    both_up: Vec<CompensatedSum>,
}

/// Exact log-sum over all `2^n` states, with marginals when `marginals` is set.
///
/// States are walked in Gray-code order inside each of up to `2^8` prefix
/// chunks; chunks run in parallel and merge in chunk order, so the result
/// does not depend on the thread count.
pub fn enumerate(model: &PairwiseLogModel, marginals: bool) -> Result<Enumeration> {
    let n = model.n;
    if n > ENUMERATION_CEILING {
        return Err(Error::TooLarge { nodes: n, cap: ENUMERATION_CEILING });
    }
    // Under a global flip symmetry only states with the last spin down are
    // walked; each stands for itself and its mirror, which keeps zero-field
    // node marginals at exactly one half.
    let symmetric = n > 0 && model.is_flip_symmetric();
    let free = n - usize::from(symmetric);
    let prefix = free.min(PREFIX_BITS);
    let inner = free - prefix;
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &(a, b, _)) in model.pairs.iter().enumerate() {
        adjacency[a].push(k);
        adjacency[b].push(k);
    }
    let incremental = !model.has_neg_infinity();

    let walk = |chunk: u64, visit: &mut dyn FnMut(u64, f64)| {
        let mut bits = chunk << inner;
        let mut w = model.log_weight_bits(bits);
        visit(bits, w);
        for i in 1..(1u64 << inner) {
            let k = i.trailing_zeros() as usize;
            let old = ((bits >> k) & 1) as usize;
            let new = 1 - old;
            bits ^= 1 << k;
            if incremental {
                let mut dw = model.unary[k][new] - model.unary[k][old];
                for &p in &adjacency[k] {
                    let (a, b, ref t) = model.pairs[p];
                    let (xa, xb) = (((bits >> a) & 1) as usize, ((bits >> b) & 1) as usize);
                    dw += if a == k { t[new][xb] - t[old][xb] } else { t[xa][new] - t[xa][old] };
                }
                w += dw;
            } else {
                w = model.log_weight_bits(bits);
            }
            visit(bits, w);
        }
    };

    let partials: Vec<Partial> = (0..(1u64 << prefix))
        .into_par_iter()
        .map(|chunk| {
            let mut max = f64::NEG_INFINITY;
            walk(chunk, &mut |_, w| max = max.max(w));
            let mut p = Partial {
                max,
                total: CompensatedSum::new(),
                up: vec![CompensatedSum::new(); if marginals { n } else { 0 }],
                both_up: vec![CompensatedSum::new(); if marginals { model.pairs.len() } else { 0 }],
            };
            if max == f64::NEG_INFINITY {
                return p;
            }
            walk(chunk, &mut |bits, w| {
                let e = (w - max).exp();
                if symmetric {
                    p.total.add(2.0 * e);
                } else {
                    p.total.add(e);
                }
                if marginals {
                    for a in 0..n {
                        if symmetric || (bits >> a) & 1 == 1 {
                            p.up[a].add(e);
                        }
                    }
                    for (k, &(a, b, _)) in model.pairs.iter().enumerate() {
                        let hit = if symmetric { ((bits >> a) ^ (bits >> b)) & 1 == 0 } else { (bits >> a) & (bits >> b) & 1 == 1 };
                        if hit {
                            p.both_up[k].add(e);
                        }
                    }
                }
            });
            p
        })
        .collect();

    let max = partials.iter().map(|p| p.max).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NumericOverflow("every state has zero weight".into()));
    }
    let mut total = CompensatedSum::new();
    let mut up = vec![CompensatedSum::new(); if marginals { n } else { 0 }];
    let mut both_up = vec![CompensatedSum::new(); if marginals { model.pairs.len() } else { 0 }];
    for p in &partials {
        if p.max == f64::NEG_INFINITY {
            continue;
        }
        let s = (p.max - max).exp();
        total.add(p.total.value() * s);
        for (acc, v) in up.iter_mut().zip(&p.up) {
            acc.add(v.value() * s);
        }
        for (acc, v) in both_up.iter_mut().zip(&p.both_up) {
            acc.add(v.value() * s);
        }
    }
    let z = total.value();
    let log_z = max + z.ln();
    if !log_z.is_finite() {
        return Err(Error::NumericOverflow("log partition is not finite".into()));
    }
    let up: Vec<f64> = up.iter().map(|s| s.value() / z).collect();
    let node = up.iter().map(|&u| [1.0 - u, u]).collect();
    let pair = model
        .pairs
        .iter()
        .zip(&both_up)
        .map(|(&(a, b, _), s)| {
            let uu = s.value() / z;
            [[1.0 - up[a] - up[b] + uu, up[b] - uu], [up[a] - uu, uu]]
        })
        .collect();
    Ok(Enumeration { log_z, node, pair })
}

/// Log table over a sorted variable scope; bit `i` of the index is `vars[i]`.
#[derive(Debug, Clone)]
struct Factor {
    vars: Vec<usize>,
    table: Vec<f64>,
}

impl Factor {
    fn value_at(&self, assignment: impl Fn(usize) -> usize) -> f64 {
        let idx = self.vars.iter().enumerate().fold(0usize, |acc, (i, &v)| acc | (assignment(v) << i));
        self.table[idx]
    }
}

/// Exact log-sum by variable elimination with a greedy min-scope order.
///
/// Fails with [`Error::WidthExceeded`] when an intermediate scope grows
/// beyond `width_limit` variables.
pub fn eliminate(model: &PairwiseLogModel, width_limit: usize) -> Result<f64> {
    let n = model.n;
    let mut factors: Vec<Option<Factor>> = Vec::new();
    for (a, t) in model.unary.iter().enumerate() {
        factors.push(Some(Factor { vars: vec![a], table: t.to_vec() }));
    }
    for &(a, b, ref t) in &model.pairs {
        let (lo, hi, tbl) = if a < b {
            (a, b, [t[0][0], t[1][0], t[0][1], t[1][1]])
        } else {
            (b, a, [t[0][0], t[0][1], t[1][0], t[1][1]])
        };
        factors.push(Some(Factor { vars: vec![lo, hi], table: tbl.to_vec() }));
    }
    let mut neighbours: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); n];
    for &(a, b, _) in &model.pairs {
        neighbours[a].insert(b);
        neighbours[b].insert(a);
    }
    let mut alive = vec![true; n];
    let mut constant = CompensatedSum::new();

    for _ in 0..n {
        let v = (0..n).filter(|&v| alive[v]).min_by_key(|&v| (neighbours[v].len(), v)).unwrap();
        let scope: Vec<usize> = neighbours[v].iter().copied().collect();
        if scope.len() > width_limit {
            return Err(Error::WidthExceeded { width: scope.len(), limit: width_limit });
        }
        let taken: Vec<Factor> = factors
            .iter_mut()
            .filter(|f| f.as_ref().is_some_and(|f| f.vars.contains(&v)))
            .map(|f| f.take().unwrap())
            .collect();
        let table: Vec<f64> = (0..1usize << scope.len())
            .map(|idx| {
                let at = |x: usize| -> f64 {
                    let assign = |u: usize| {
                        if u == v {
                            x
                        } else {
                            (idx >> scope.binary_search(&u).unwrap()) & 1
                        }
                    };
                    taken.iter().map(|f| f.value_at(assign)).sum()
                };
                log_add_exp(at(0), at(1))
            })
            .collect();
        if scope.is_empty() {
            constant.add(table[0]);
        } else {
            factors.push(Some(Factor { vars: scope.clone(), table }));
        }
        alive[v] = false;
        for &u in &scope {
            neighbours[u].remove(&v);
            for &w in &scope {
                if w != u {
                    neighbours[u].insert(w);
                }
            }
        }
        neighbours[v].clear();
    }
    let log_z = constant.value();
    if log_z.is_nan() || log_z == f64::INFINITY {
        return Err(Error::NumericOverflow("log partition is not finite".into()));
    }
    Ok(log_z)
}

/// How an exact log partition was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactMethod {
    Enumeration,
    Elimination,
}

impl std::fmt::Display for ExactMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExactMethod::Enumeration => "enumeration",
            ExactMethod::Elimination => "elimination",
        })
    }
}

/// Enumerates up to `cap` variables and eliminates above it.
pub fn log_partition(model: &PairwiseLogModel, cap: usize, width_limit: usize) -> Result<(f64, ExactMethod)> {
    if model.n <= cap.min(ENUMERATION_CEILING) {
        Ok((enumerate(model, false)?.log_z, ExactMethod::Enumeration))
    } else {
        Ok((eliminate(model, width_limit)?, ExactMethod::Elimination))
    }
}

/// Reference log-sum by direct evaluation of every state; for tests.
#[doc(hidden)]
pub fn naive_log_sum(model: &PairwiseLogModel) -> f64 {
    let ws: Vec<f64> = (0..1u64 << model.n).map(|b| model.log_weight_bits(b)).collect();
    log_sum_exp(&ws)
}
