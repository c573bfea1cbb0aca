use odyn::analysis::{bifurcation_csv, bifurcation_sweep_with, diameter_metrics, opinion_diameter};
use odyn::attention::{build_communication_attention, build_option_attention, AttentionWeights};
use odyn::exec::Exec;
use odyn::fixtures::{self, rng, toy_graph, toy_initial_state};
use odyn::integrator::{euler_integrate, rk4_integrate};
use odyn::kernels::{Bimp, BimpParams, KernelState, Laplacian};
use odyn::spectral::KroneckerOperator;
use odyn::train::{finite_difference_grad, make_sbm_task, random_fixture, train_sgd, TrainConfig};
use odyn::verify::{toy_option_adjacency, toy_runs};
use odyn::{laplacian, Graph, Matrix};

#[test]
fn toy_runs_write_parseable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let runs = toy_runs(20).unwrap();
    for t in &runs {
        let path = dir.path().join(format!("{}.csv", t.kernel_tag));
        t.write_states_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,node,option,value"));
        let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect()).collect();
        assert_eq!(rows.len(), t.len() * 9);
        let last = rows.last().unwrap();
        assert!((last[0] - 20.0).abs() < 1e-9);
        assert_eq!(last[3], t.final_state.x[(2, 2)]);
    }
}

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let a = bifurcation_sweep_with(Exec::Sequential, 0.05, 0.6, 40, 1.0, 1.0, 0.0).unwrap();
    let b = bifurcation_sweep_with(Exec::Parallel, 0.05, 0.6, 40, 1.0, 1.0, 0.0).unwrap();
    assert_eq!(bifurcation_csv(&a), bifurcation_csv(&b));

    let (x_in, w, target, aa, ao) = random_fixture(6, 4, 3, &mut rng(3));
    let cfg = TrainConfig::new(1.0, 1.0);
    let g1 = finite_difference_grad(Exec::Sequential, &x_in, &w, &target, &aa, &ao, &cfg, 1e-5).unwrap();
    let g2 = finite_difference_grad(Exec::Parallel, &x_in, &w, &target, &aa, &ao, &cfg, 1e-5).unwrap();
    assert_eq!(g1, g2);

    let mut r = rng(4);
    let op = KroneckerOperator::new(
        &fixtures::random_row_stochastic(60, &mut r),
        &fixtures::random_row_stochastic(7, &mut r),
    )
    .unwrap();
    let x = Matrix::random_uniform(1, op.dim(), -1.0, 1.0, &mut r).into_values();
    assert_eq!(op.apply_with(Exec::Sequential, &x).unwrap(), op.apply_with(Exec::Parallel, &x).unwrap());
}

#[test]
fn attention_weights_survive_a_round_trip_and_build_stochastic_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let w = AttentionWeights::random(2, 3, 3, &mut rng(5)).unwrap();
    w.save(dir.path()).unwrap();
    let back = AttentionWeights::load(dir.path()).unwrap();
    let x = toy_initial_state();
    let aa = build_communication_attention(&x, &w, &toy_graph()).unwrap();
    let aa_back = build_communication_attention(&x, &back, &toy_graph()).unwrap();
    assert!(aa.sub(&aa_back).unwrap().max_abs() < 1e-12);
    assert!(aa.is_row_stochastic(1e-12));
    assert!(build_option_attention(&x, &w).unwrap().is_row_stochastic(1e-12));
}

#[test]
fn graph_json_round_trip() {
    let g = fixtures::random_weighted_symmetric_graph(12, 0.3, &mut rng(6));
    let back = Graph::from_json(&g.to_json().unwrap()).unwrap();
    assert_eq!(g.to_dense(), back.to_dense());
}

#[test]
fn euler_and_rk4_reach_the_same_consensus() {
    let l = laplacian(&toy_graph());
    let s0 = KernelState::first_order(toy_initial_state());
    let e = euler_integrate(&s0, &Laplacian { l: l.clone() }, 0.01, 2000, 100, &diameter_metrics).unwrap();
    let r = rk4_integrate(&s0, &Laplacian { l }, 0.01, 2000, 100, &diameter_metrics).unwrap();
    assert!(e.final_state.x.sub(&r.final_state.x).unwrap().max_abs() < 1e-6);
    assert!(opinion_diameter(&r.final_state.x) < 1e-8);
}

#[test]
fn bimp_with_input_keeps_options_apart() {
    let x0 = toy_initial_state();
    let dynamics = Bimp {
        aa: odyn::fixtures::toy_adjacency(),
        ao: toy_option_adjacency(),
        params: BimpParams::new(1.0, 1.0, x0.clone()).unwrap(),
    };
    let t = euler_integrate(&KernelState::first_order(x0), &dynamics, 0.05, 2000, 100, &diameter_metrics).unwrap();
    assert!(opinion_diameter(&t.final_state.x) > 0.05);
}

#[test]
fn training_is_reproducible_for_a_seed() {
    let task = make_sbm_task(10, 0.5, 0.05, 0.5, 1).unwrap();
    let cfg = TrainConfig { epochs: 20, ..TrainConfig::new(1.0, 1.0) };
    let (w1, h1) = train_sgd(&task, &cfg).unwrap();
    let (w2, h2) = train_sgd(&task, &cfg).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(h1.len(), 21);
    assert_eq!(h1.iter().map(|s| s.loss).collect::<Vec<_>>(), h2.iter().map(|s| s.loss).collect::<Vec<_>>());
    assert!(h1[20].loss < h1[0].loss);
}
