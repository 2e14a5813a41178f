//! Lambda sweeps, derivatives of the fractional free energy and the search
//! for the lambda at which the fractional estimate is exact.
//!
//! With `F(lambda) = -ln Z^(lambda)`, the envelope theorem at a stationary point gives
//! `dF/dlambda = Σ_ab (1 - rho_ab) I_ab >= 0`, where `rho_ab` is the base
//! (`lambda = 0`) weight and `I_ab` the mutual information of the edge belief.
//! So `ln Z^(lambda)` is non-increasing in `lambda`, from the upper bound at
//! `lambda = 0` to the lower bound at `lambda = 1` on attractive models.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbp::{run_fbp, BeliefSet, FbpOptions, FbpResult, Init};
use crate::model::IsingModel;
use crate::trw_weights::{rho_lambda, EdgeAppearance};

/// Rounding below this is treated as zero mutual information.
const MI_ROUNDING: f64 = 1e-12;

/// `Σ B_ab ln B_ab - Σ B_a ln B_a - Σ B_b ln B_b` for edge `edge`, evaluated as
/// `Σ B_ab ln(B_ab / (B_a B_b))` with the node terms taken from the edge
/// table's own marginals (identical on the local polytope). Values within
/// rounding below zero are clamped to zero.
pub fn mutual_information(beliefs: &BeliefSet, edge: usize) -> f64 {
    let t = &beliefs.edge[edge];
    let ba = [t[0][0] + t[0][1], t[1][0] + t[1][1]];
    let bb = [t[0][0] + t[1][0], t[0][1] + t[1][1]];
    let mut i = 0.0;
    for xa in 0..2 {
        for xb in 0..2 {
            let p = t[xa][xb];
            if p > 0.0 {
                i += p * (p / (ba[xa] * bb[xb])).ln();
            }
        }
    }
    if (-MI_ROUNDING..0.0).contains(&i) {
        0.0
    } else {
        i
    }
}

/// `dF/dlambda = Σ_ab (1 - rho_ab) I_ab` with base weights `rho`; never negative.
pub fn df_dlambda(beliefs: &BeliefSet, rho: &[f64]) -> f64 {
    rho.iter().enumerate().map(|(e, &r)| (1.0 - r) * mutual_information(beliefs, e)).sum()
}

/// Strictly ascending lambda values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    /// `start, start + step, ..., stop`. Values are rounded to 12 decimals so
    /// that e.g. `0.15` is the nearest double rather than `3 * 0.05`.
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&stop) || start > stop {
            return Err(Error::InvalidArgument(format!("grid [{start}, {stop}] not within [0, 1]")));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("grid step {step} must be positive")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        let values = (0..=count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect();
        Self::from_values(values)
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty lambda grid".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("lambda grid values must lie in [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("lambda grid must be strictly ascending".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for LambdaGrid {
    /// `0, 0.05, ..., 1`.
    fn default() -> Self {
        Self::new(0.0, 1.0, 0.05).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// In grid order, each point starting from the previous converged messages.
    WarmSequential,
    /// All points at once from uniform messages.
    ColdParallel,
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub lambda: f64,
    pub result: FbpResult,
    pub mutual_information: Vec<f64>,
    pub df_dlambda: f64,
    /// Finite difference of `df_dlambda` over the neighbouring grid points;
    /// `None` when a point it needs did not converge or the grid has one point.
    pub d2f_dlambda2: Option<f64>,
}

impl SweepPoint {
    pub fn free_energy(&self) -> f64 {
        self.result.free_energy
    }

    pub fn log_z(&self) -> f64 {
        self.result.log_z
    }

    pub fn converged(&self) -> bool {
        self.result.converged
    }
}

#[derive(Debug, Clone)]
pub struct LambdaSweep {
    pub mode: SweepMode,
    pub points: Vec<SweepPoint>,
    pub lambda_star: Option<f64>,
    pub crossing_found: bool,
    /// Grid point of largest `|d2F/dlambda2|`; descriptive only.
    pub lambda_bar: Option<f64>,
}

impl LambdaSweep {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(SweepPoint::converged)
    }

    /// Indices `i` where both `i` and `i + 1` converged and `F` drops by more than `slack`.
    pub fn monotonicity_violations(&self, slack: f64) -> Vec<usize> {
        self.points
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].converged() && w[1].converged() && w[1].free_energy() < w[0].free_energy() - slack)
            .map(|(i, _)| i)
            .collect()
    }

    /// Divided second differences of `F` at interior points (scaled to a second
    /// derivative), `None` where a needed point did not converge.
    pub fn free_energy_second_differences(&self) -> Vec<Option<f64>> {
        self.points
            .windows(3)
            .map(|w| {
                if !w.iter().all(SweepPoint::converged) {
                    return None;
                }
                let (h0, h1) = (w[1].lambda - w[0].lambda, w[2].lambda - w[1].lambda);
                let s0 = (w[1].free_energy() - w[0].free_energy()) / h0;
                let s1 = (w[2].free_energy() - w[1].free_energy()) / h1;
                Some(2.0 * (s1 - s0) / (h0 + h1))
            })
            .collect()
    }

    /// Records `lambda_star` and `crossing_found` from a search outcome.
    pub fn attach(&mut self, star: &LambdaStar) {
        match star {
            LambdaStar::Found { lambda, .. } => {
                self.lambda_star = Some(*lambda);
                self.crossing_found = true;
            }
            LambdaStar::NoCrossing { .. } => {
                self.lambda_star = None;
                self.crossing_found = false;
            }
        }
    }
}

fn solve_at(model: &IsingModel, rho: &EdgeAppearance, lambda: f64, options: &FbpOptions) -> Result<FbpResult> {
    run_fbp(model, &rho_lambda(rho, lambda)?, options)
}

/// Runs FBP at every grid point and records `F`, `dF/dlambda` and the finite
/// difference second derivative. Non-convergence is flagged per point, not
/// returned as an error.
pub fn sweep(
    model: &IsingModel,
    rho: &EdgeAppearance,
    grid: &LambdaGrid,
    options: &FbpOptions,
    mode: SweepMode,
) -> Result<LambdaSweep> {
    if rho.len() != model.edge_count() {
        return Err(Error::InvalidArgument("rho does not match the model".into()));
    }
    let results: Vec<FbpResult> = match mode {
        SweepMode::WarmSequential => {
            let mut out: Vec<FbpResult> = Vec::with_capacity(grid.len());
            for &lambda in grid.values() {
                let opts = match out.last() {
                    Some(prev) if prev.converged => options.clone().with_init(Init::Messages(prev.messages.clone())),
                    _ => options.clone(),
                };
                out.push(solve_at(model, rho, lambda, &opts)?);
            }
            out
        }
        SweepMode::ColdParallel => grid
            .values()
            .par_iter()
            .map(|&lambda| solve_at(model, rho, lambda, options))
            .collect::<Result<_>>()?,
    };
    let mut points: Vec<SweepPoint> = grid
        .values()
        .iter()
        .zip(results)
        .map(|(&lambda, result)| {
            let mutual_information = (0..model.edge_count()).map(|e| mutual_information(&result.beliefs, e)).collect();
            let df = df_dlambda(&result.beliefs, rho.values());
            SweepPoint { lambda, result, mutual_information, df_dlambda: df, d2f_dlambda2: None }
        })
        .collect();

    let n = points.len();
    if n >= 2 {
        for i in 0..n {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            if points[lo].converged() && points[hi].converged() && points[i].converged() {
                let d = (points[hi].df_dlambda - points[lo].df_dlambda) / (points[hi].lambda - points[lo].lambda);
                points[i].d2f_dlambda2 = Some(d);
            }
        }
    }
    let lambda_bar = points
        .iter()
        .filter_map(|p| p.d2f_dlambda2.map(|d| (p.lambda, d.abs())))
        .fold(None, |best: Option<(f64, f64)>, (l, d)| match best {
            Some((_, bd)) if bd >= d => best,
            _ => Some((l, d)),
        })
        .map(|(l, _)| l);
    Ok(LambdaSweep { mode, points, lambda_star: None, crossing_found: false, lambda_bar })
}

/// Tolerances for [`find_lambda_star`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// `|ln Z^(lambda) - ln Z|` treated as zero.
    pub tol_log_z: f64,
    /// Bracket width at which bisection stops.
    pub tol_lambda: f64,
    pub fbp: FbpOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { tol_log_z: 1e-7, tol_lambda: 1e-10, fbp: FbpOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaStar {
    Found {
        /// Smallest lambda (to `tol_lambda`) with `ln Z^(lambda) <= ln Z + tol_log_z`.
        lambda: f64,
        log_z: f64,
        /// `ln Z^(lambda) - ln Z` at `lambda`.
        residual: f64,
        /// Range over which `|ln Z^(lambda) - ln Z| <= tol_log_z`.
        flat_interval: (f64, f64),
        /// Successive brackets of the main bisection.
        brackets: Vec<(f64, f64)>,
        evaluations: usize,
    },
    /// `ln Z^(0)` and `ln Z^(1)` lie on the same side of `ln Z`.
    NoCrossing { gap_at_zero: f64, gap_at_one: f64 },
}

/// Bisection on `g(lambda) = ln Z^(lambda) - log_z_exact`, which is
/// non-increasing. A probe whose FBP run does not converge (after a cold
/// retry) is an [`Error::NonConvergent`].
pub fn find_lambda_star(
    model: &IsingModel,
    rho: &EdgeAppearance,
    log_z_exact: f64,
    options: &SearchOptions,
) -> Result<LambdaStar> {
    if !log_z_exact.is_finite() {
        return Err(Error::InvalidArgument("exact log partition must be finite".into()));
    }
    if !(options.tol_lambda > 0.0) || !(options.tol_log_z > 0.0) {
        return Err(Error::InvalidArgument("search tolerances must be positive".into()));
    }
    let mut warm: Option<crate::fbp::MessageSet> = None;
    let mut evaluations = 0;
    let mut probe = |lambda: f64| -> Result<f64> {
        evaluations += 1;
        let mut res = match &warm {
            Some(m) => solve_at(model, rho, lambda, &options.fbp.clone().with_init(Init::Messages(m.clone())))?,
            None => solve_at(model, rho, lambda, &options.fbp)?,
        };
        if !res.converged && warm.is_some() {
            res = solve_at(model, rho, lambda, &options.fbp)?;
        }
        if !res.converged {
            return Err(Error::NonConvergent { lambda, residual: res.final_residual });
        }
        warm = Some(res.messages);
        Ok(res.log_z - log_z_exact)
    };
    let tol = options.tol_log_z;
    let g0 = probe(0.0)?;
    let g1 = probe(1.0)?;
    if g0 < -tol || g1 > tol {
        return Ok(LambdaStar::NoCrossing { gap_at_zero: g0, gap_at_one: g1 });
    }

    // Leftmost lambda with g <= tol.
    let (lambda, residual, brackets) = if g0 <= tol {
        (0.0, g0, Vec::new())
    } else {
        let (mut lo, mut hi, mut g_hi) = (0.0, 1.0, g1);
        let mut brackets = vec![(lo, hi)];
        while hi - lo > options.tol_lambda {
            let mid = 0.5 * (lo + hi);
            let g = probe(mid)?;
            if g <= tol {
                hi = mid;
                g_hi = g;
            } else {
                lo = mid;
            }
            brackets.push((lo, hi));
        }
        (hi, g_hi, brackets)
    };
    // Rightmost lambda with g >= -tol.
    let right = if g1 >= -tol {
        1.0
    } else {
        let (mut lo, mut hi) = (lambda, 1.0);
        while hi - lo > options.tol_lambda {
            let mid = 0.5 * (lo + hi);
            if probe(mid)? >= -tol {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Ok(LambdaStar::Found {
        lambda,
        log_z: log_z_exact + residual,
        residual,
        flat_interval: (lambda, right.max(lambda)),
        brackets,
        evaluations,
    })
}
