use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use fracbp::analysis::{find_lambda_star, sweep, LambdaStar, LambdaSweep, SearchOptions, SweepMode};
use fracbp::correction::{estimate_correction_batched, exact_correction_with, CorrectionEstimate};
use fracbp::exact::{ExactMethod, DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT};
use fracbp::fbp::FbpOptions;
use fracbp::model::{read_model, sample_instance, write_model, CouplingDist, EnsembleSpec, FieldDist};
use fracbp::oracle::exact_log_z;
use fracbp::rng::derive_seed;
use fracbp::trw_weights::{
    build_edge_uniform_certificate, certificate_for_graph, edge_uniform_rho, rho_lambda, validate_tree_set, SpanningTreeSet,
};
use fracbp::{build_complete, build_grid, run_fbp, Error, Graph, IsingModel, Result};
use rayon::prelude::*;

use crate::config::{
    Command, Ensemble, ExactArgs, GenerateArgs, McArgs, Route, SamplingArgs, StarArgs, SweepArgs, TopologyKind, TreeArgs,
};
use crate::output::{num, opt, write_csv};

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Non-convergence, a missing crossing or a failed validation occurred.
    pub flagged: bool,
    pub files: Vec<PathBuf>,
    /// Text for standard output.
    pub report: String,
}

pub fn run(command: &Command) -> Result<Outcome> {
    let echo = format!("fracbp {}\n{:#?}", command.name(), command);
    match command {
        Command::Sweep(a) => cmd_sweep(a, &echo),
        Command::LambdaStar(a) => cmd_lambda_star(a, &echo),
        Command::Concentration(a) => cmd_concentration(a, &echo),
        Command::McConvergence(a) => cmd_mc_convergence(a, &echo),
        Command::Mixed(a) => cmd_mixed(a, &echo),
        Command::ValidateTrees(a) => cmd_validate_trees(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Exact(a) => cmd_exact(a),
    }
}

/// One model of an experiment.
#[derive(Debug, Clone)]
pub struct Instance {
    pub label: String,
    pub size: usize,
    pub index: usize,
    /// Seed the instance was sampled from; the ensemble seed for model files.
    pub seed: u64,
    pub model: IsingModel,
}

/// Samples `instances` models per size; instance `i` of size `s` uses
/// `derive_seed(seed, s, i)`.
pub fn instances(ens: &Ensemble) -> Result<Vec<Instance>> {
    if let Some(path) = &ens.model {
        let model = read_model(BufReader::new(File::open(path)?))?;
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
        return Ok(vec![Instance { label, size: model.node_count(), index: 0, seed: ens.seed, model }]);
    }
    if ens.sizes.is_empty() || ens.instances == 0 {
        return Err(Error::InvalidArgument("need at least one size and one instance".into()));
    }
    let tag = match ens.topology {
        TopologyKind::Grid => "grid",
        TopologyKind::Complete => "complete",
    };
    let mut out = Vec::new();
    for &size in &ens.sizes {
        for index in 0..ens.instances {
            let seed = derive_seed(ens.seed, size as u64, index as u64);
            let spec = EnsembleSpec { topology: ens.topology_for(size), couplings: ens.couplings, fields: ens.fields, seed };
            out.push(Instance { label: format!("{tag}{size}-{index}"), size, index, seed, model: sample_instance(&spec)? });
        }
    }
    Ok(out)
}

fn defaults(topology: TopologyKind, sizes: &[usize], instances: usize, couplings: CouplingDist, fields: FieldDist) -> Ensemble {
    Ensemble { topology, sizes: sizes.to_vec(), instances, couplings, fields, seed: 0, model: None }
}

/// Reference `ln Z` for a lambda* search.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub log_z: f64,
    /// Standard error for the sampled route, zero otherwise.
    pub std_error: f64,
    pub route: &'static str,
}

fn method_name(m: ExactMethod) -> &'static str {
    match m {
        ExactMethod::Enumeration => "enumeration",
        ExactMethod::Elimination => "elimination",
    }
}

/// `ln Z` by the requested route. The sampled route estimates
/// `ln Z^(lambda_ref) + ln C^(lambda_ref)`.
pub fn reference_log_z(
    model: &IsingModel,
    route: Route,
    fbp: &FbpOptions,
    sampling: &SamplingArgs,
    lambda_ref: f64,
    seed: u64,
) -> Result<Reference> {
    if route != Route::Mc {
        match exact_log_z(model) {
            Ok((log_z, m)) => return Ok(Reference { log_z, std_error: 0.0, route: method_name(m) }),
            Err(Error::WidthExceeded { .. }) if route == Route::Auto => {}
            Err(e) => return Err(e),
        }
    }
    let rho = rho_lambda(&edge_uniform_rho(model.graph())?, lambda_ref)?;
    let res = run_fbp(model, &rho, fbp)?;
    if !res.converged {
        return Err(Error::NonConvergent { lambda: lambda_ref, residual: res.final_residual });
    }
    let est = estimate_correction_batched(model, &rho, &res.beliefs, sampling.samples, seed, sampling.batch_size)?;
    Ok(Reference { log_z: res.log_z + est.log_mean, std_error: est.std_error_log, route: "mc" })
}

/// Log correction at one sweep point: exact when feasible, sampled otherwise.
fn correction_at(
    model: &IsingModel,
    rho: &[f64],
    beliefs: &fracbp::BeliefSet,
    sampling: &SamplingArgs,
    seed: u64,
) -> Result<(f64, f64, &'static str)> {
    match exact_correction_with(model, rho, beliefs, DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT) {
        Ok((c, m)) => Ok((c, 0.0, method_name(m))),
        Err(Error::WidthExceeded { .. }) => {
            let est = estimate_correction_batched(model, rho, beliefs, sampling.samples, seed, sampling.batch_size)?;
            Ok((est.log_mean, est.std_error_log, "mc"))
        }
        Err(e) => Err(e),
    }
}

/// Outcome of a lambda* search with its reference.
#[derive(Debug, Clone)]
pub struct StarRecord {
    pub reference: Option<Reference>,
    pub star: Option<LambdaStar>,
    /// Set when the search could not finish (non-convergence).
    pub failure: Option<String>,
}

impl StarRecord {
    pub fn lambda(&self) -> Option<f64> {
        match self.star {
            Some(LambdaStar::Found { lambda, .. }) => Some(lambda),
            _ => None,
        }
    }

    pub fn status(&self) -> String {
        match (&self.star, &self.failure) {
            (_, Some(f)) => f.clone(),
            (Some(LambdaStar::Found { .. }), _) => "crossing".into(),
            (Some(LambdaStar::NoCrossing { .. }), _) => "no-crossing".into(),
            (None, None) => "skipped".into(),
        }
    }

    pub fn flagged(&self) -> bool {
        !matches!(self.star, Some(LambdaStar::Found { .. }))
    }
}

pub fn search_star(
    model: &IsingModel,
    route: Route,
    search: &SearchOptions,
    sampling: &SamplingArgs,
    lambda_ref: f64,
    seed: u64,
) -> Result<StarRecord> {
    let reference = match reference_log_z(model, route, &search.fbp, sampling, lambda_ref, seed) {
        Ok(r) => r,
        Err(e @ Error::NonConvergent { .. }) => return Ok(StarRecord { reference: None, star: None, failure: Some(e.to_string()) }),
        Err(e) => return Err(e),
    };
    let rho = edge_uniform_rho(model.graph())?;
    match find_lambda_star(model, &rho, reference.log_z, search) {
        Ok(star) => Ok(StarRecord { reference: Some(reference), star: Some(star), failure: None }),
        Err(e @ Error::NonConvergent { .. }) => Ok(StarRecord { reference: Some(reference), star: None, failure: Some(e.to_string()) }),
        Err(e) => Err(e),
    }
}

fn star_columns(r: &StarRecord) -> Vec<String> {
    let (lambda, flat, residual, g0, g1) = match &r.star {
        Some(LambdaStar::Found { lambda, flat_interval, residual, .. }) => {
            (num(*lambda), Some(*flat_interval), num(*residual), String::new(), String::new())
        }
        Some(LambdaStar::NoCrossing { gap_at_zero, gap_at_one }) => {
            (String::new(), None, String::new(), num(*gap_at_zero), num(*gap_at_one))
        }
        None => Default::default(),
    };
    vec![
        r.reference.as_ref().map(|x| x.route.to_string()).unwrap_or_default(),
        opt(r.reference.as_ref().map(|x| x.log_z)),
        opt(r.reference.as_ref().map(|x| x.std_error)),
        lambda,
        opt(flat.map(|f| f.0)),
        opt(flat.map(|f| f.1)),
        residual,
        g0,
        g1,
        r.status(),
    ]
}

const STAR_HEADER: [&str; 10] =
    ["route", "log_z_ref", "log_z_ref_se", "lambda_star", "flat_lo", "flat_hi", "residual", "gap_at_zero", "gap_at_one", "status"];

fn instance_columns(inst: &Instance) -> Vec<String> {
    vec![
        inst.label.clone(),
        inst.size.to_string(),
        inst.index.to_string(),
        inst.seed.to_string(),
        inst.model.node_count().to_string(),
        inst.model.edge_count().to_string(),
    ]
}

const INSTANCE_HEADER: [&str; 6] = ["instance", "size", "index", "seed", "nodes", "edges"];

fn search_options(a: &StarArgs) -> SearchOptions {
    SearchOptions { tol_log_z: a.tol_log_z, tol_lambda: a.tol_lambda, fbp: a.fbp.options() }
}

/// lambda* for every instance, computed concurrently, in instance order.
pub fn star_records(insts: &[Instance], a: &StarArgs) -> Result<Vec<StarRecord>> {
    let search = search_options(a);
    insts
        .par_iter()
        .map(|inst| search_star(&inst.model, a.route, &search, &a.sampling, a.lambda_ref, derive_seed(inst.seed, 1, 0)))
        .collect()
}

pub fn cmd_lambda_star(a: &StarArgs, echo: &str) -> Result<Outcome> {
    let ens = a.ensemble.resolve(&defaults(TopologyKind::Grid, &[3], 1, CouplingDist::Attractive, FieldDist::Positive));
    let echo = &format!("{echo}\nresolved {ens:#?}");
    let insts = instances(&ens)?;
    let records = star_records(&insts, a)?;
    let header: Vec<&str> = INSTANCE_HEADER.iter().chain(STAR_HEADER.iter()).copied().collect();
    let rows: Vec<Vec<String>> =
        insts.iter().zip(&records).map(|(i, r)| instance_columns(i).into_iter().chain(star_columns(r)).collect()).collect();
    let file = write_csv(&a.out.out_dir, "lambda_star.csv", echo, &header, &rows)?;
    let mut report = String::new();
    for (i, r) in insts.iter().zip(&records) {
        report += &format!("{}: {} {}\n", i.label, r.status(), opt(r.lambda()));
    }
    Ok(Outcome { flagged: records.iter().any(StarRecord::flagged), files: vec![file], report })
}

/// Spread statistics of the lambda* values found for one size.
#[derive(Debug, Clone, PartialEq)]
pub struct Spread {
    pub size: usize,
    pub nodes: usize,
    pub instances: usize,
    pub found: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; zero for a single value.
    pub std_dev: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Spread {
    pub fn from_values(size: usize, nodes: usize, instances: usize, values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { size, nodes, instances, found: 0, mean: None, std_dev: None, min: None, max: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Self {
            size,
            nodes,
            instances,
            found: n,
            mean: Some(mean),
            std_dev: Some(sd),
            min: values.iter().copied().reduce(f64::min),
            max: values.iter().copied().reduce(f64::max),
        }
    }

    pub fn range(&self) -> Option<f64> {
        Some(self.max? - self.min?)
    }
}

pub fn spreads(insts: &[Instance], records: &[StarRecord]) -> Vec<Spread> {
    let mut sizes: Vec<usize> = insts.iter().map(|i| i.size).collect();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|size| {
            let members: Vec<(&Instance, &StarRecord)> = insts.iter().zip(records).filter(|(i, _)| i.size == size).collect();
            let values: Vec<f64> = members.iter().filter_map(|(_, r)| r.lambda()).collect();
            Spread::from_values(size, members[0].0.model.node_count(), members.len(), &values)
        })
        .collect()
}

pub fn cmd_concentration(a: &StarArgs, echo: &str) -> Result<Outcome> {
    let ens = a.ensemble.resolve(&defaults(TopologyKind::Grid, &[6, 8, 10], 4, CouplingDist::Attractive, FieldDist::Zero));
    let echo = &format!("{echo}\nresolved {ens:#?}");
    let insts = instances(&ens)?;
    let records = star_records(&insts, a)?;
    let header: Vec<&str> = INSTANCE_HEADER.iter().chain(STAR_HEADER.iter()).copied().collect();
    let rows: Vec<Vec<String>> =
        insts.iter().zip(&records).map(|(i, r)| instance_columns(i).into_iter().chain(star_columns(r)).collect()).collect();
    let f1 = write_csv(&a.out.out_dir, "concentration.csv", echo, &header, &rows)?;

    let spread = spreads(&insts, &records);
    let rows: Vec<Vec<String>> = spread
        .iter()
        .map(|s| {
            vec![
                s.size.to_string(),
                s.nodes.to_string(),
                s.instances.to_string(),
                s.found.to_string(),
                opt(s.mean),
                opt(s.std_dev),
                opt(s.min),
                opt(s.max),
                opt(s.range()),
                opt(s.std_dev.map(|d| d * (s.nodes as f64).sqrt())),
            ]
        })
        .collect();
    let header = ["size", "nodes", "instances", "found", "mean", "std_dev", "min", "max", "range", "std_dev_sqrt_nodes"];
    let f2 = write_csv(&a.out.out_dir, "concentration_summary.csv", echo, &header, &rows)?;
    let mut report = String::new();
    for s in &spread {
        report += &format!(
            "size {}: {}/{} crossings, mean {}, std dev {}\n",
            s.size,
            s.found,
            s.instances,
            opt(s.mean),
            opt(s.std_dev)
        );
    }
    Ok(Outcome { flagged: records.iter().any(StarRecord::flagged), files: vec![f1, f2], report })
}

/// A sweep with per-point corrections and the crossing verdict.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub sweep: LambdaSweep,
    /// `(ln C, standard error, method)` per converged point.
    pub corrections: Vec<Option<(f64, f64, &'static str)>>,
    pub reference: Option<Reference>,
    pub star: StarRecord,
}

impl SweepRecord {
    /// For a crossing: `|ln Z^(lambda*) - ln Z| <= 1e-6`. For no crossing: the
    /// gaps have the sign that rules a crossing out.
    pub fn verdict_consistent(&self) -> Option<bool> {
        match self.star.star.as_ref()? {
            LambdaStar::Found { residual, .. } => Some(residual.abs() <= 1e-6),
            LambdaStar::NoCrossing { gap_at_zero, gap_at_one } => Some(*gap_at_one > 0.0 || *gap_at_zero < 0.0),
        }
    }
}

pub fn sweep_record(inst: &Instance, a: &SweepArgs) -> Result<SweepRecord> {
    let fbp = a.fbp.options();
    let rho = edge_uniform_rho(inst.model.graph())?;
    let mut sw = sweep(&inst.model, &rho, &a.grid.grid()?, &fbp, SweepMode::WarmSequential)?;
    let corrections = sw
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if !p.converged() {
                return Ok(None);
            }
            let r = rho_lambda(&rho, p.lambda)?;
            correction_at(&inst.model, &r, &p.result.beliefs, &a.sampling, derive_seed(inst.seed, 2, k as u64)).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let search = SearchOptions { fbp: fbp.clone(), ..SearchOptions::default() };
    let star = search_star(&inst.model, Route::Auto, &search, &a.sampling, 0.5, derive_seed(inst.seed, 1, 0))?;
    if let Some(s) = &star.star {
        sw.attach(s);
    }
    Ok(SweepRecord { reference: star.reference.clone(), sweep: sw, corrections, star })
}

fn sweep_experiment(a: &SweepArgs, echo: &str, ens: Ensemble, stem: &str) -> Result<Outcome> {
    let echo = &format!("{echo}\nresolved {ens:#?}");
    let insts = instances(&ens)?;
    let records: Vec<SweepRecord> = insts.par_iter().map(|i| sweep_record(i, a)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (inst, rec) in insts.iter().zip(&records) {
        for (p, c) in rec.sweep.points.iter().zip(&rec.corrections) {
            rows.push(vec![
                inst.label.clone(),
                num(p.lambda),
                num(p.free_energy()),
                num(p.log_z()),
                opt(c.map(|c| c.0)),
                opt(c.map(|c| c.1)),
                c.map(|c| c.2.to_string()).unwrap_or_default(),
                opt(c.map(|c| p.log_z() + c.0)),
                num(p.df_dlambda),
                opt(p.d2f_dlambda2),
                p.converged().to_string(),
                p.result.iterations.to_string(),
                num(p.result.final_residual),
            ]);
        }
    }
    let header = [
        "instance",
        "lambda",
        "free_energy",
        "log_z",
        "log_correction",
        "log_correction_se",
        "correction_method",
        "corrected_log_z",
        "dF_dlambda",
        "d2F_dlambda2",
        "converged",
        "iterations",
        "final_residual",
    ];
    let f1 = write_csv(&a.out.out_dir, &format!("{stem}.csv"), echo, &header, &rows)?;

    let rows: Vec<Vec<String>> = insts
        .iter()
        .zip(&records)
        .map(|(inst, rec)| {
            let mut row = instance_columns(inst);
            row.extend(star_columns(&rec.star));
            row.push(opt(rec.sweep.lambda_bar));
            row.push(rec.sweep.all_converged().to_string());
            row.push(rec.verdict_consistent().map(|v| v.to_string()).unwrap_or_default());
            row
        })
        .collect();
    let header: Vec<&str> = INSTANCE_HEADER
        .iter()
        .chain(STAR_HEADER.iter())
        .copied()
        .chain(["lambda_bar", "all_converged", "verdict_consistent"])
        .collect();
    let f2 = write_csv(&a.out.out_dir, &format!("{stem}_summary.csv"), echo, &header, &rows)?;

    let mut report = String::new();
    for (inst, rec) in insts.iter().zip(&records) {
        report += &format!("{}: {} {}\n", inst.label, rec.star.status(), opt(rec.star.lambda()));
    }
    let flagged = records.iter().any(|r| !r.sweep.all_converged() || r.star.flagged());
    Ok(Outcome { flagged, files: vec![f1, f2], report })
}

pub fn cmd_sweep(a: &SweepArgs, echo: &str) -> Result<Outcome> {
    let ens = a.ensemble.resolve(&defaults(TopologyKind::Grid, &[3], 1, CouplingDist::Attractive, FieldDist::Positive));
    sweep_experiment(a, echo, ens, "sweep")
}

pub fn cmd_mixed(a: &SweepArgs, echo: &str) -> Result<Outcome> {
    let ens = a.ensemble.resolve(&defaults(TopologyKind::Grid, &[4], 20, CouplingDist::Mixed, FieldDist::Symmetric));
    sweep_experiment(a, echo, ens, "mixed")
}

/// Sampled correction at one lambda against its exact value.
#[derive(Debug, Clone)]
pub struct McRecord {
    pub lambda: f64,
    pub converged: bool,
    pub exact: Option<f64>,
    pub estimate: Option<CorrectionEstimate>,
    /// First trace sample count from which the running estimate stays within
    /// the threshold of the reference (exact when known, else the final estimate).
    pub m_c: Option<u64>,
}

impl McRecord {
    pub fn within_three_sigma(&self) -> Option<bool> {
        let est = self.estimate.as_ref()?;
        Some((est.log_mean - self.exact?).abs() <= 3.0 * est.std_error_log)
    }
}

pub fn mc_records(inst: &Instance, a: &McArgs) -> Result<Vec<McRecord>> {
    let fbp = a.fbp.options();
    let rho = edge_uniform_rho(inst.model.graph())?;
    a.lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let r = rho_lambda(&rho, lambda)?;
            let res = run_fbp(&inst.model, &r, &fbp)?;
            if !res.converged {
                return Ok(McRecord { lambda, converged: false, exact: None, estimate: None, m_c: None });
            }
            let exact = match exact_correction_with(&inst.model, &r, &res.beliefs, DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT) {
                Ok((c, _)) => Some(c),
                Err(Error::WidthExceeded { .. }) => None,
                Err(e) => return Err(e),
            };
            let est = estimate_correction_batched(
                &inst.model,
                &r,
                &res.beliefs,
                a.sampling.samples,
                derive_seed(inst.seed, 3, k as u64),
                a.sampling.batch_size,
            )?;
            let target = exact.unwrap_or(est.log_mean);
            let mut m_c = None;
            for p in est.trace.iter().rev() {
                if (p.log_mean - target).abs() <= a.threshold {
                    m_c = Some(p.samples);
                } else {
                    break;
                }
            }
            Ok(McRecord { lambda, converged: true, exact, estimate: Some(est), m_c })
        })
        .collect()
}

/// `ln(M_2 / M_1) / ln(N_2 / N_1)` for mean convergence sample counts `M`
/// at node counts `N`.
pub fn scaling_exponent(nodes: (usize, usize), m_c: (f64, f64)) -> f64 {
    (m_c.1 / m_c.0).ln() / (nodes.1 as f64 / nodes.0 as f64).ln()
}

pub fn cmd_mc_convergence(a: &McArgs, echo: &str) -> Result<Outcome> {
    let ens = a.ensemble.resolve(&defaults(TopologyKind::Grid, &[3], 1, CouplingDist::Attractive, FieldDist::Positive));
    let echo = &format!("{echo}\nresolved {ens:#?}");
    if a.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::InvalidArgument("lambdas must lie in [0, 1]".into()));
    }
    let insts = instances(&ens)?;
    let records: Vec<Vec<McRecord>> = insts.par_iter().map(|i| mc_records(i, a)).collect::<Result<_>>()?;

    let mut trace_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for (inst, recs) in insts.iter().zip(&records) {
        for r in recs {
            if let Some(est) = &r.estimate {
                for p in &est.trace {
                    trace_rows.push(vec![inst.label.clone(), num(r.lambda), p.samples.to_string(), num(p.log_mean), num(p.std_error_log)]);
                }
            }
            let mut row = instance_columns(inst);
            row.extend([
                num(r.lambda),
                r.converged.to_string(),
                opt(r.exact),
                opt(r.estimate.as_ref().map(|e| e.log_mean)),
                opt(r.estimate.as_ref().map(|e| e.std_error_log)),
                r.m_c.map(|m| m.to_string()).unwrap_or_default(),
                r.within_three_sigma().map(|v| v.to_string()).unwrap_or_default(),
            ]);
            summary_rows.push(row);
        }
    }
    let f1 = write_csv(
        &a.out.out_dir,
        "mc_convergence.csv",
        echo,
        &["instance", "lambda", "samples", "running_log_mean", "std_error"],
        &trace_rows,
    )?;
    let header: Vec<&str> = INSTANCE_HEADER
        .iter()
        .copied()
        .chain(["lambda", "converged", "exact_log_correction", "estimate", "std_error", "m_c", "within_3_sigma"])
        .collect();
    let f2 = write_csv(&a.out.out_dir, "mc_summary.csv", echo, &header, &summary_rows)?;

    // Mean M_c per size and the exponent between consecutive sizes.
    let mut per_size: Vec<(usize, usize, f64)> = Vec::new();
    let mut sizes: Vec<usize> = insts.iter().map(|i| i.size).collect();
    sizes.dedup();
    for size in sizes {
        let ms: Vec<f64> = insts
            .iter()
            .zip(&records)
            .filter(|(i, _)| i.size == size)
            .flat_map(|(_, rs)| rs.iter().filter_map(|r| r.m_c.map(|m| m as f64)))
            .collect();
        let nodes = insts.iter().find(|i| i.size == size).unwrap().model.node_count();
        let mean = if ms.is_empty() { f64::NAN } else { ms.iter().sum::<f64>() / ms.len() as f64 };
        per_size.push((size, nodes, mean));
    }
    let mut scaling_rows = Vec::new();
    let mut report = String::new();
    for (k, &(size, nodes, mean)) in per_size.iter().enumerate() {
        let exponent = (k > 0).then(|| scaling_exponent((per_size[k - 1].1, nodes), (per_size[k - 1].2, mean)));
        scaling_rows.push(vec![size.to_string(), nodes.to_string(), num(mean), opt(exponent)]);
        report += &format!("size {size}: mean M_c {mean}, exponent from previous size {}\n", opt(exponent));
    }
    let f3 = write_csv(&a.out.out_dir, "mc_scaling.csv", echo, &["size", "nodes", "mean_m_c", "exponent"], &scaling_rows)?;
    let flagged = records.iter().flatten().any(|r| !r.converged);
    Ok(Outcome { flagged, files: vec![f1, f2, f3], report })
}

fn read_graph(a: &TreeArgs) -> Result<Graph> {
    match (a.complete, a.grid, &a.model) {
        (Some(n), _, _) => build_complete(n),
        (_, Some(n), _) => build_grid(n),
        (_, _, Some(p)) => Ok(read_model(BufReader::new(File::open(p)?))?.graph().clone()),
        _ => Err(Error::InvalidArgument("one of --complete, --grid or --model is required".into())),
    }
}

pub fn cmd_validate_trees(a: &TreeArgs) -> Result<Outcome> {
    let graph = read_graph(a)?;
    let set = match &a.certificate {
        Some(p) => SpanningTreeSet::read(BufReader::new(File::open(p)?))?,
        None if a.complete.is_some() => build_edge_uniform_certificate(&graph, &[])?,
        None => certificate_for_graph(&graph)?.1,
    };
    let violations = validate_tree_set(&graph, &set);
    let mut report = format!("{} nodes, {} edges, {} trees\n", graph.node_count(), graph.edge_count(), set.len());
    let counts = set.appearance_counts(graph.edge_count());
    let rho = set.induced_rho_exact(graph.edge_count());
    for (e, &(x, y)) in graph.edges().iter().enumerate() {
        report += &format!("edge {e} ({x}-{y}): count {}, rho {}\n", counts[e], rho[e]);
    }
    for v in &violations {
        report += &format!("violation: {v}\n");
    }
    if violations.is_empty() {
        report += "valid\n";
    }
    let mut files = Vec::new();
    if let Some(p) = &a.write {
        set.write(std::io::BufWriter::new(File::create(p)?))?;
        files.push(p.clone());
    }
    Ok(Outcome { flagged: !violations.is_empty(), files, report })
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<Outcome> {
    let ens = a.ensemble.resolve(&defaults(TopologyKind::Grid, &[3], 1, CouplingDist::Attractive, FieldDist::Positive));
    let insts = instances(&ens)?;
    std::fs::create_dir_all(&a.out.out_dir)?;
    let mut files = Vec::new();
    for inst in &insts {
        let path = a.out.out_dir.join(format!("{}.model", inst.label));
        write_model(&inst.model, std::io::BufWriter::new(File::create(&path)?))?;
        files.push(path);
    }
    Ok(Outcome { flagged: false, files, report: String::new() })
}

pub fn cmd_exact(a: &ExactArgs) -> Result<Outcome> {
    let model = read_model(BufReader::new(File::open(&a.model)?))?;
    let (log_z, m) = exact_log_z(&model)?;
    Ok(Outcome { flagged: false, files: Vec::new(), report: format!("log_z {log_z} ({})\n", method_name(m)) })
}
