//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::process::ExitCode;
use std::time::Instant;

use fracbp::analysis::{df_dlambda, find_lambda_star, sweep, LambdaGrid, LambdaStar, LambdaSweep, SearchOptions, SweepMode};
use fracbp::correction::{estimate_correction, exact_correction, exact_correction_with};
use fracbp::exact::{DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT};
use fracbp::fbp::{FbpResult, Init};
use fracbp::model::{sample_instance, CouplingDist, EnsembleSpec, FieldDist, Topology};
use fracbp::oracle::{brute_force, to_zero_field};
use fracbp::rng::derive_seed;
use fracbp::trw_weights::{build_edge_uniform_certificate, edge_uniform_rho, rho_lambda, validate_tree_set, EdgeAppearance};
use fracbp::{build_complete, run_fbp, FbpOptions, IsingModel};
use fracbp_cli::config::{Route, SamplingArgs, StarArgs};
use fracbp_cli::experiments::{instances, mc_records, scaling_exponent, spreads, star_records, Instance};
use rayon::prelude::*;

const SEED: u64 = 20_240_601;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

struct Case {
    label: String,
    model: IsingModel,
    rho: EdgeAppearance,
    log_z: f64,
    sweep: LambdaSweep,
}

fn attractive(topology: Topology, stream: u64, count: u64) -> Vec<(String, IsingModel)> {
    (0..count)
        .map(|i| {
            let seed = derive_seed(SEED, stream, i);
            let spec = EnsembleSpec { topology, couplings: CouplingDist::Attractive, fields: FieldDist::Positive, seed };
            (format!("{topology:?}#{i}"), sample_instance(&spec).unwrap())
        })
        .collect()
}

fn build_cases() -> Vec<Case> {
    let mut models = attractive(Topology::Grid(3), 1, 20);
    models.extend(attractive(Topology::Grid(4), 2, 20));
    models.extend(attractive(Topology::Complete(5), 3, 20));
    models
        .into_par_iter()
        .map(|(label, model)| {
            let rho = edge_uniform_rho(model.graph()).unwrap();
            let log_z = brute_force(&model).unwrap().log_z;
            let sweep = sweep(&model, &rho, &LambdaGrid::default(), &FbpOptions::default(), SweepMode::WarmSequential).unwrap();
            Case { label, model, rho, log_z, sweep }
        })
        .collect()
}

fn worst<I: IntoIterator<Item = (f64, String)>>(items: I) -> Option<(f64, String)> {
    items.into_iter().fold(None, |acc, (v, s)| match acc {
        Some((w, _)) if w >= v => acc,
        _ => Some((v, s)),
    })
}

fn sandwich(cases: &[Case], started: Instant) -> Verdict {
    let mut bad = Vec::new();
    for c in cases {
        let (first, last) = (&c.sweep.points[0], c.sweep.points.last().unwrap());
        if !(first.converged() && last.converged()) {
            bad.push(format!("{}: not converged", c.label));
        } else if last.log_z() > c.log_z + 1e-9 || first.log_z() < c.log_z - 1e-9 {
            bad.push(format!("{}: {} <= {} <= {} fails", c.label, last.log_z(), c.log_z, first.log_z()));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Verdict {
        id: 1,
        name: "sandwich ln Z^(1) <= ln Z <= ln Z^(0)",
        pass: bad.is_empty() && secs < 60.0,
        detail: format!("{} instances, {} violations, {secs:.1}s {}", cases.len(), bad.len(), bad.join("; ")),
    }
}

fn monotonicity(cases: &[Case]) -> Verdict {
    let mut bad = Vec::new();
    let mut unconverged = 0;
    for c in cases {
        unconverged += c.sweep.points.iter().filter(|p| !p.converged()).count();
        // ln Z^(lambda) non-increasing, equivalently F non-decreasing.
        for i in c.sweep.monotonicity_violations(1e-9) {
            bad.push(format!("{} at lambda {}", c.label, c.sweep.points[i].lambda));
        }
    }
    Verdict {
        id: 2,
        name: "monotonicity: ln Z^(lambda) = -F non-increasing over the 0.05 grid",
        pass: bad.is_empty(),
        detail: format!("{} violations, {unconverged} unconverged points skipped {}", bad.len(), bad.join("; ")),
    }
}

fn convexity(cases: &[Case]) -> Verdict {
    let mut bad = Vec::new();
    let mut largest: f64 = f64::NEG_INFINITY;
    for c in cases {
        for w in c.sweep.points.windows(3) {
            if !w.iter().all(|p| p.converged()) {
                continue;
            }
            // Second difference of ln Z^(lambda) = -F.
            let d = -(w[2].free_energy() - 2.0 * w[1].free_energy() + w[0].free_energy());
            largest = largest.max(-d);
            if d < -1e-7 {
                bad.push(format!("{} at lambda {}: {d:e}", c.label, w[1].lambda));
            }
        }
    }
    Verdict {
        id: 3,
        name: "convexity: second differences of ln Z^(lambda) >= -1e-7",
        pass: bad.is_empty(),
        detail: format!("{} violations, most negative {:e} {}", bad.len(), -largest, bad.join("; ")),
    }
}

fn exact_identity(cases: &[Case]) -> Verdict {
    let results: Vec<(f64, String)> = cases
        .par_iter()
        .filter(|c| c.model.node_count() <= 16)
        .flat_map_iter(|c| {
            c.sweep.points.iter().filter(|p| p.converged()).map(move |p| {
                let r = rho_lambda(&c.rho, p.lambda).unwrap();
                let corr = exact_correction(&c.model, &r, &p.result.beliefs).unwrap();
                ((c.log_z - (p.log_z() + corr)).abs(), format!("{} lambda {}", c.label, p.lambda))
            })
        })
        .collect();
    let n = results.len();
    let (w, at) = worst(results).unwrap();
    Verdict {
        id: 4,
        name: "ln Z = ln Z^(lambda) + ln C^(lambda) exactly, every grid lambda",
        pass: w <= 1e-8,
        detail: format!("{n} points, worst {w:e} at {at}"),
    }
}

fn lambda_star(cases: &[Case]) -> Verdict {
    let out: Vec<std::result::Result<f64, String>> = cases
        .par_iter()
        .map(|c| match find_lambda_star(&c.model, &c.rho, c.log_z, &SearchOptions::default()) {
            Ok(LambdaStar::Found { lambda, .. }) if (0.0..=1.0).contains(&lambda) => {
                let res = run_fbp(&c.model, &rho_lambda(&c.rho, lambda).unwrap(), &FbpOptions::default()).unwrap();
                let g = (res.log_z - c.log_z).abs();
                if res.converged && g <= 1e-6 {
                    Ok(g)
                } else {
                    Err(format!("{}: |g| = {g:e}", c.label))
                }
            }
            other => Err(format!("{}: {other:?}", c.label)),
        })
        .collect();
    let errs: Vec<String> = out.iter().filter_map(|r| r.clone().err()).collect();
    let w = out.iter().filter_map(|r| r.as_ref().ok().copied()).fold(0.0, f64::max);
    Verdict {
        id: 5,
        name: "lambda* in [0,1] with |ln Z^(lambda*) - ln Z| <= 1e-6",
        pass: errs.is_empty(),
        detail: format!("{} instances, worst |g| {w:e} {}", cases.len(), errs.join("; ")),
    }
}

fn derivative(cases: &[Case]) -> Verdict {
    let h = 1e-3;
    let results: Vec<(f64, String)> = cases
        .par_iter()
        .flat_map_iter(|c| {
            let n = c.sweep.points.len();
            c.sweep.points[1..n - 1].iter().filter(|p| p.converged()).filter_map(move |p| {
                let opts = FbpOptions::default().with_init(Init::Messages(p.result.messages.clone()));
                let at = |l: f64| run_fbp(&c.model, &rho_lambda(&c.rho, l).unwrap(), &opts).unwrap();
                let (lo, hi) = (at(p.lambda - h), at(p.lambda + h));
                if !(lo.converged && hi.converged) {
                    return None;
                }
                let fd = (hi.free_energy - lo.free_energy) / (2.0 * h);
                let an = df_dlambda(&p.result.beliefs, c.rho.values());
                Some(((an - fd).abs() / an.abs(), format!("{} lambda {}: {an} vs {fd}", c.label, p.lambda)))
            })
        })
        .collect();
    let n = results.len();
    let (w, at) = worst(results).unwrap();
    Verdict {
        id: 6,
        name: "dF/dlambda = Σ(1-rho)I matches central differences (h=1e-3), relative 1e-4",
        pass: w <= 1e-4,
        detail: format!("{n} interior points, worst relative {w:e} at {at}"),
    }
}

fn certificates() -> Verdict {
    let mut bad = Vec::new();
    let mut k4 = None;
    for n in 4..=8 {
        let g = build_complete(n).unwrap();
        let m = g.edge_count();
        match build_edge_uniform_certificate(&g, &[]) {
            Ok(set) => {
                if set.len() != m {
                    bad.push(format!("K{n}: {} trees", set.len()));
                }
                if !validate_tree_set(&g, &set).is_empty() {
                    bad.push(format!("K{n}: invalid"));
                }
                if set.appearance_counts(m).iter().any(|&c| c != n - 1) {
                    bad.push(format!("K{n}: uneven counts"));
                }
                let exact = set.induced_rho_exact(m);
                if exact.iter().any(|r| *r.numer() as u128 * m as u128 != *r.denom() as u128 * (n as u128 - 1)) {
                    bad.push(format!("K{n}: rho not (N-1)/|E|"));
                }
                if n == 4 {
                    k4 = Some(exact[0]);
                }
            }
            Err(e) => bad.push(format!("K{n}: {e}")),
        }
    }
    let k4_half = k4.is_some_and(|r| *r.numer() == 1 && *r.denom() == 2);
    Verdict {
        id: 7,
        name: "edge-uniform certificates for K4..K8",
        pass: bad.is_empty() && k4_half,
        detail: format!("K4 rho = {}, {}", k4.map(|r| r.to_string()).unwrap_or_default(), bad.join("; ")),
    }
}

fn mc_correction() -> Verdict {
    let lambdas = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut lines = Vec::new();
    let mut pass = true;
    let mut mean_mc = Vec::new();
    for (k, size) in [3usize, 6].into_iter().enumerate() {
        let seed = derive_seed(SEED, 8, k as u64);
        let spec = EnsembleSpec { topology: Topology::Grid(size), couplings: CouplingDist::Attractive, fields: FieldDist::Positive, seed };
        let model = sample_instance(&spec).unwrap();
        let rho = edge_uniform_rho(model.graph()).unwrap();
        let mut worst_sigma: f64 = 0.0;
        for (j, &l) in lambdas.iter().enumerate() {
            let r = rho_lambda(&rho, l).unwrap();
            let res = run_fbp(&model, &r, &FbpOptions::default()).unwrap();
            if !res.converged {
                pass = false;
                lines.push(format!("grid({size}) lambda {l}: not converged"));
                continue;
            }
            let (exact, method) = exact_correction_with(&model, &r, &res.beliefs, DEFAULT_ENUMERATION_CAP, DEFAULT_WIDTH_LIMIT).unwrap();
            let est = estimate_correction(&model, &r, &res.beliefs, 100_000, derive_seed(seed, 9, j as u64)).unwrap();
            let sigmas = (est.log_mean - exact).abs() / est.std_error_log;
            worst_sigma = worst_sigma.max(sigmas);
            if !(sigmas <= 3.0) {
                pass = false;
                lines.push(format!("grid({size}) lambda {l}: {} vs {exact} ({method}), {sigmas:.2} SE", est.log_mean));
            }
        }
        lines.push(format!("grid({size}) worst {worst_sigma:.2} SE"));

        let inst = Instance { label: format!("grid{size}"), size, index: 0, seed, model };
        let args = fracbp_cli::config::McArgs {
            ensemble: Default::default(),
            fbp: Default::default(),
            sampling: SamplingArgs { samples: 100_000, batch_size: 100 },
            lambdas: lambdas.to_vec(),
            threshold: 0.01,
            out: fracbp_cli::config::OutArgs { out_dir: std::env::temp_dir() },
        };
        let recs = mc_records(&inst, &args).unwrap();
        let ms: Vec<f64> = recs.iter().filter_map(|r| r.m_c.map(|m| m as f64)).collect();
        mean_mc.push((inst.model.node_count(), ms.iter().sum::<f64>() / ms.len().max(1) as f64));
    }
    let exponent = scaling_exponent((mean_mc[0].0, mean_mc[1].0), (mean_mc[0].1, mean_mc[1].1));
    lines.push(format!("mean M_c {:.0} -> {:.0}, scaling exponent {exponent:.2} (reported only)", mean_mc[0].1, mean_mc[1].1));
    Verdict { id: 8, name: "sampled ln C within 3 SE of exact at 1e5 samples, grid(3) and grid(6)", pass, detail: lines.join("; ") }
}

fn concentration() -> Verdict {
    let ens = fracbp_cli::config::Ensemble {
        topology: fracbp_cli::config::TopologyKind::Grid,
        sizes: vec![6, 8, 10],
        instances: 4,
        couplings: CouplingDist::Attractive,
        fields: FieldDist::Zero,
        seed: SEED,
        model: None,
    };
    let insts = instances(&ens).unwrap();
    let args = StarArgs {
        ensemble: Default::default(),
        fbp: Default::default(),
        sampling: SamplingArgs::default(),
        route: Route::Auto,
        lambda_ref: 0.5,
        tol_lambda: 1e-10,
        tol_log_z: 1e-7,
        out: fracbp_cli::config::OutArgs { out_dir: std::env::temp_dir() },
    };
    let records = star_records(&insts, &args).unwrap();
    let s = spreads(&insts, &records);
    let sds: Vec<f64> = s.iter().map(|x| x.std_dev.unwrap_or(f64::NAN)).collect();
    let all_found = s.iter().all(|x| x.found == x.instances);
    let pass = all_found && sds.windows(2).all(|w| w[1] <= w[0]);
    let detail = s
        .iter()
        .map(|x| {
            format!(
                "N={}x{}: mean {:.4} sd {:.4} sd*sqrt(nodes) {:.3}",
                x.size,
                x.size,
                x.mean.unwrap_or(f64::NAN),
                x.std_dev.unwrap_or(f64::NAN),
                x.std_dev.unwrap_or(f64::NAN) * (x.nodes as f64).sqrt()
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Verdict { id: 9, name: "lambda* spread non-increasing over grid sizes 6, 8, 10", pass, detail }
}

fn mixed() -> Verdict {
    let results: Vec<std::result::Result<&'static str, String>> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(SEED, 10, i);
            let spec = EnsembleSpec { topology: Topology::Grid(4), couplings: CouplingDist::Mixed, fields: FieldDist::Symmetric, seed };
            let model = sample_instance(&spec).unwrap();
            let rho = edge_uniform_rho(model.graph()).unwrap();
            let z = brute_force(&model).map_err(|e| e.to_string())?.log_z;
            let opts = SearchOptions::default();
            let at = |l: f64| run_fbp(&model, &rho_lambda(&rho, l).unwrap(), &FbpOptions::default()).unwrap();
            let (z0, z1) = (at(0.0), at(1.0));
            match find_lambda_star(&model, &rho, z, &opts) {
                Ok(LambdaStar::Found { lambda, .. }) => {
                    let r = at(lambda);
                    if r.converged && (r.log_z - z).abs() <= 1e-6 && z1.log_z - z <= opts.tol_log_z {
                        Ok("crossing")
                    } else {
                        Err(format!("#{i}: crossing at {lambda} fails identity ({:e})", r.log_z - z))
                    }
                }
                Ok(LambdaStar::NoCrossing { gap_at_zero, gap_at_one }) => {
                    let consistent = (z1.log_z - z > opts.tol_log_z && gap_at_one > 0.0)
                        || (z0.log_z - z < -opts.tol_log_z && gap_at_zero < 0.0);
                    if consistent {
                        Ok("no-crossing")
                    } else {
                        Err(format!("#{i}: no-crossing with gaps {gap_at_zero:e}, {gap_at_one:e}"))
                    }
                }
                Err(e) => Err(format!("#{i}: {e}")),
            }
        })
        .collect();
    let crossings = results.iter().filter(|r| matches!(r, Ok("crossing"))).count();
    let none = results.iter().filter(|r| matches!(r, Ok("no-crossing"))).count();
    let errs: Vec<String> = results.into_iter().filter_map(|r| r.err()).collect();
    Verdict {
        id: 10,
        name: "mixed 4x4: valid lambda* or sign-consistent no-crossing",
        pass: errs.is_empty(),
        detail: format!("{crossings} crossings, {none} no-crossing {}", errs.join("; ")),
    }
}

fn zero_field() -> Verdict {
    let mut worst_gap: f64 = 0.0;
    for i in 0..20u64 {
        let topology = if i % 2 == 0 { Topology::Grid(3) } else { Topology::Complete(6) };
        let couplings = if i % 4 < 2 { CouplingDist::Mixed } else { CouplingDist::Attractive };
        let spec = EnsembleSpec { topology, couplings, fields: FieldDist::Symmetric, seed: derive_seed(SEED, 11, i) };
        let model = sample_instance(&spec).unwrap();
        let (star, _) = to_zero_field(&model).unwrap();
        let gap = brute_force(&model).unwrap().log_z - (brute_force(&star).unwrap().log_z - 2f64.ln());
        worst_gap = worst_gap.max(gap.abs());
    }
    Verdict {
        id: 11,
        name: "zero-field transform ln Z = ln Z* - ln 2",
        pass: worst_gap <= 1e-12,
        detail: format!("20 instances, worst {worst_gap:e}"),
    }
}

fn dual_route(cases: &[Case]) -> Verdict {
    let all: Vec<&FbpResult> = cases.iter().flat_map(|c| c.sweep.points.iter().map(|p| &p.result)).filter(|r| r.converged).collect();
    let (w, _) = worst(all.iter().map(|r| ((r.log_z - r.log_z_product).abs(), String::new()))).unwrap();
    Verdict {
        id: 12,
        name: "free energy on beliefs agrees with the message-product ln Z",
        pass: w <= 1e-8,
        detail: format!("{} converged fixed points, worst {w:e}", all.len()),
    }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let cases = build_cases();
    let mut verdicts = vec![sandwich(&cases, started)];
    verdicts.push(monotonicity(&cases));
    verdicts.push(convexity(&cases));
    verdicts.push(exact_identity(&cases));
    verdicts.push(lambda_star(&cases));
    verdicts.push(derivative(&cases));
    verdicts.push(certificates());
    verdicts.push(mc_correction());
    verdicts.push(concentration());
    verdicts.push(mixed());
    verdicts.push(zero_field());
    verdicts.push(dual_route(&cases));
    for v in &verdicts {
        println!("criterion {:>2} {}: {} ({})", v.id, if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail.trim());
    }
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    if verdicts.iter().all(|v| v.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
