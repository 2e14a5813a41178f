use fracbp::fbp::{beliefs_from_messages, free_energy, log_z_from_messages, MessageSet};
use fracbp::model::{sample_instance, CouplingDist, EnsembleSpec, FieldDist, Topology};
use fracbp::oracle::brute_force;
use fracbp::{build_grid, edge_uniform_rho, rho_lambda, run_fbp, FbpOptions, Graph, IsingModel};
use proptest::prelude::*;

fn seeded(topology: Topology, seed: u64) -> IsingModel {
    sample_instance(&EnsembleSpec { topology, couplings: CouplingDist::Attractive, fields: FieldDist::Positive, seed }).unwrap()
}

fn path4() -> IsingModel {
    let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
    IsingModel::new(g, vec![0.7, -0.4, 1.1], vec![0.3, -0.5, 0.2, 0.6]).unwrap()
}

#[test]
fn seeded_grid_is_sandwiched() {
    let m = seeded(Topology::Grid(3), 42);
    let rho = edge_uniform_rho(m.graph()).unwrap();
    let z = brute_force(&m).unwrap().log_z;
    let bp = run_fbp(&m, &rho_lambda(&rho, 1.0).unwrap(), &FbpOptions::default()).unwrap();
    let trw = run_fbp(&m, &rho_lambda(&rho, 0.0).unwrap(), &FbpOptions::default()).unwrap();
    assert!(bp.converged && trw.converged);
    assert!(bp.log_z <= z + 1e-9, "{} > {z}", bp.log_z);
    assert!(trw.log_z >= z - 1e-9, "{} < {z}", trw.log_z);
}

#[test]
fn tree_beliefs_are_exact_marginals() {
    let m = path4();
    let ex = brute_force(&m).unwrap();
    let res = run_fbp(&m, &[1.0; 3], &FbpOptions::default()).unwrap();
    let b = beliefs_from_messages(&m, &[1.0; 3], &res.messages).unwrap();
    for a in 0..4 {
        for x in 0..2 {
            assert!((b.node[a][x] - ex.node_marginals[a][x]).abs() < 1e-8);
        }
    }
    for e in 0..3 {
        for xa in 0..2 {
            for xb in 0..2 {
                assert!((b.edge[e][xa][xb] - ex.edge_marginals[e][xa][xb]).abs() < 1e-8);
            }
        }
    }
    let z = log_z_from_messages(&m, &[1.0; 3], &res.messages).unwrap();
    assert!(z.at_fixed_point);
    assert!((z.log_z - ex.log_z).abs() < 1e-8);
}

#[test]
fn seeded_grid_beliefs_are_consistent_and_dual_routes_agree() {
    let m = seeded(Topology::Grid(3), 8);
    let rho = rho_lambda(&edge_uniform_rho(m.graph()).unwrap(), 0.5).unwrap();
    let res = run_fbp(&m, &rho, &FbpOptions::default()).unwrap();
    assert!(res.converged && res.final_residual <= 1e-10);
    assert!(res.beliefs.check(&m, 1e-7).is_ok());
    assert_eq!(res.log_z, -res.free_energy);
    let f = free_energy(&m, &rho, &res.beliefs).unwrap();
    let z = log_z_from_messages(&m, &rho, &res.messages).unwrap();
    assert!((z.log_z + f).abs() <= 1e-8 * (1.0 + f.abs()));
}

#[test]
fn perturbation_inside_local_polytope_raises_free_energy() {
    let m = seeded(Topology::Grid(3), 19);
    let rho = rho_lambda(&edge_uniform_rho(m.graph()).unwrap(), 0.0).unwrap();
    let res = run_fbp(&m, &rho, &FbpOptions::default()).unwrap();
    let f0 = free_energy(&m, &rho, &res.beliefs).unwrap();
    for (k, delta) in [1e-3, -1e-3, 5e-3].into_iter().enumerate() {
        let mut b = res.beliefs.clone();
        let t = &mut b.edge[k];
        // Keeps both marginals of the edge table.
        t[0][0] += delta;
        t[1][1] += delta;
        t[0][1] -= delta;
        t[1][0] -= delta;
        let f = free_energy(&m, &rho, &b).unwrap();
        assert!(f >= f0, "{f} < {f0}");
    }
}

#[test]
fn message_gauge_does_not_change_beliefs() {
    let m = seeded(Topology::Complete(5), 2);
    let rho = rho_lambda(&edge_uniform_rho(m.graph()).unwrap(), 0.3).unwrap();
    let res = run_fbp(&m, &rho, &FbpOptions::default()).unwrap();
    let shifted: Vec<[f64; 2]> =
        res.messages.as_slice().iter().enumerate().map(|(i, v)| [v[0] + i as f64 * 0.37 - 2.0, v[1] + i as f64 * 0.37 - 2.0]).collect();
    let again = MessageSet::from_log(shifted).unwrap();
    let b0 = beliefs_from_messages(&m, &rho, &res.messages).unwrap();
    let b1 = beliefs_from_messages(&m, &rho, &again).unwrap();
    for (x, y) in b0.node.iter().flatten().zip(b1.node.iter().flatten()) {
        assert!((x - y).abs() < 1e-13);
    }
    let z0 = log_z_from_messages(&m, &rho, &res.messages).unwrap().log_z;
    let z1 = log_z_from_messages(&m, &rho, &again).unwrap().log_z;
    assert!((z0 - z1).abs() < 1e-12);
}

#[test]
fn zero_field_fixed_point_is_symmetric() {
    let m = sample_instance(&EnsembleSpec { topology: Topology::Grid(4), couplings: CouplingDist::Attractive, fields: FieldDist::Zero, seed: 5 }).unwrap();
    let rho = edge_uniform_rho(m.graph()).unwrap();
    for lambda in [0.0, 0.5, 1.0] {
        let res = run_fbp(&m, &rho_lambda(&rho, lambda).unwrap(), &FbpOptions::default()).unwrap();
        assert!(res.beliefs.node.iter().all(|b| b[0] == 0.5 && b[1] == 0.5));
    }
}

#[test]
fn free_cycle_free_energy_is_constant() {
    let m = IsingModel::homogeneous(fracbp::build_complete(3).unwrap(), 0.0, 0.0).unwrap();
    let rho = edge_uniform_rho(m.graph()).unwrap();
    for lambda in [0.0, 0.2, 0.7, 1.0] {
        let r = rho_lambda(&rho, lambda).unwrap();
        let b = beliefs_from_messages(&m, &r, &MessageSet::uniform(3)).unwrap();
        assert!((free_energy(&m, &r, &b).unwrap() + 3.0 * 2f64.ln()).abs() < 1e-14);
        assert!((log_z_from_messages(&m, &r, &MessageSet::uniform(3)).unwrap().log_z - 3.0 * 2f64.ln()).abs() < 1e-14);
    }
}

fn tree_strategy() -> impl Strategy<Value = IsingModel> {
    (2usize..9)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(any::<prop::sample::Index>(), n - 1),
                prop::collection::vec(-1.5f64..1.5, n - 1),
                prop::collection::vec(-1.0f64..1.0, n),
            )
        })
        .prop_map(|(n, parents, js, hs)| {
            let edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, p)| (p.index(i + 1), i + 1)).collect();
            let (g, ids) = Graph::with_permutation(n, edges).unwrap();
            let mut couplings = vec![0.0; n - 1];
            for (i, &id) in ids.iter().enumerate() {
                couplings[id] = js[i];
            }
            IsingModel::new(g, couplings, hs).unwrap()
        })
}

fn attractive_grid_strategy() -> impl Strategy<Value = IsingModel> {
    (prop::collection::vec(0.0f64..1.0, 12), prop::collection::vec(0.0f64..1.0, 9))
        .prop_map(|(js, hs)| IsingModel::new(build_grid(3).unwrap(), js, hs).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bp_is_exact_on_trees(m in tree_strategy()) {
        let ones = vec![1.0; m.edge_count()];
        let res = run_fbp(&m, &ones, &FbpOptions::default()).unwrap();
        prop_assert!(res.converged);
        let ex = brute_force(&m).unwrap();
        prop_assert!((res.log_z - ex.log_z).abs() < 1e-8);
        prop_assert!((res.log_z_product - ex.log_z).abs() < 1e-8);
        for (b, e) in res.beliefs.node.iter().zip(&ex.node_marginals) {
            prop_assert!((b[1] - e[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn attractive_grids_are_sandwiched_with_agreeing_routes(m in attractive_grid_strategy(), lambda in 0.0f64..=1.0) {
        let rho = edge_uniform_rho(m.graph()).unwrap();
        let z = brute_force(&m).unwrap().log_z;
        let at = |l: f64| run_fbp(&m, &rho_lambda(&rho, l).unwrap(), &FbpOptions::default()).unwrap();
        let (lo, mid, hi) = (at(1.0), at(lambda), at(0.0));
        prop_assert!(lo.converged && mid.converged && hi.converged);
        prop_assert!(lo.log_z <= z + 1e-9);
        prop_assert!(hi.log_z >= z - 1e-9);
        prop_assert!(lo.log_z <= mid.log_z + 1e-9 && mid.log_z <= hi.log_z + 1e-9);
        prop_assert!((mid.log_z - mid.log_z_product).abs() <= 1e-8 * (1.0 + mid.log_z.abs()));
    }
}
