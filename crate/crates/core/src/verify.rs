//! The acceptance suite: twelve pinned, self-contained checks with
//! runtime limits, reported as structured results.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::analysis::{
    bifurcation_sweep_with, diameter_metrics, grandpp_closed_form, graph_metrics, least_squares_slope,
    min_pairwise_row_distance, scrambling_check,
};
use crate::error::Result;
use crate::exec::{self, Exec};
use crate::fixtures::{self, rng, toy_adjacency, toy_initial_state, TOY_DT, TOY_HORIZON};
use crate::graph::{laplacian, laplacian_of, row_normalize, Graph};
use crate::integrator::{euler_integrate, no_metrics, Trajectory};
use crate::kernels::{
    nod_validity, rhs_bimp, rhs_bimp_filter_form, rhs_bimp_vectorized, Bimp, BimpParams, GraphconTran, KernelState,
    Laplacian, LaplacianSource, SaturationKind,
};
use crate::matrix::Matrix;
use crate::spectral::{power_iteration, KroneckerOperator};
use crate::train::{
    accumulated_jacobian, forward_unroll, gradcheck, make_sbm_task, random_fixture, train_sgd, TrainConfig,
};

/// Seed used for the option adjacency of the toy fixture.
pub const TOY_OPTION_SEED: u64 = 1;
/// Synthetic training task of the smoke test.
pub const SBM_SEED: u64 = 1;
pub const SBM_NOISE: f64 = 0.5;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_ms: f64,
    pub runtime_limit_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CriterionResult> {
        self.criteria.iter().filter(|c| !c.passed)
    }
}

pub const CRITERIA: [(u32, &str, Option<f64>); 12] = [
    (1, "toy trajectories", Some(1000.0)),
    (2, "leading eigenvalue of the effective adjacency", Some(1000.0)),
    (3, "bifurcation structure", Some(1000.0)),
    (4, "consensus at the bifurcation point without input", None),
    (5, "dissensus with input", None),
    (6, "Dirichlet energy stability", Some(5000.0)),
    (7, "gradient suite", Some(10000.0)),
    (8, "closed-form Laplacian with source", None),
    (9, "scrambling contraction", None),
    (10, "saturation validity", None),
    (11, "right-hand-side form equivalence", None),
    (12, "training smoke test", Some(30000.0)),
];

/// Outcome of one check before timing is attached.
struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

pub fn run_criterion(id: u32, exec: Exec) -> CriterionResult {
    let (_, name, limit) = CRITERIA.iter().copied().find(|c| c.0 == id).expect("criterion id in 1..=12");
    let start = Instant::now();
    let result = match id {
        1 => toy_trajectories(),
        2 => leading_eigenvalue(),
        3 => bifurcation_structure(exec),
        4 => consensus_at_bifurcation(exec),
        5 => dissensus_with_input(),
        6 => energy_stability(),
        7 => gradient_suite(exec),
        8 => closed_form(),
        9 => scrambling(),
        10 => validity(),
        11 => form_equivalence(),
        12 => training_smoke(),
        _ => unreachable!(),
    };
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let (mut passed, mut detail) = match result {
        Ok(o) => (o.passed, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(lim) = limit {
        if elapsed_ms >= lim {
            passed = false;
            detail.push_str(&format!("; runtime {elapsed_ms:.0} ms exceeds {lim:.0} ms"));
        }
    }
    CriterionResult { id, name, passed, detail, elapsed_ms, runtime_limit_ms: limit }
}

/// Runs every criterion in order.
pub fn run_all(exec: Exec) -> VerifyReport {
    let criteria: Vec<CriterionResult> = CRITERIA.iter().map(|c| run_criterion(c.0, exec)).collect();
    VerifyReport { passed: criteria.iter().all(|c| c.passed), criteria }
}

/// Option adjacency paired with the toy communication graph.
pub fn toy_option_adjacency() -> Matrix {
    fixtures::random_hollow_row_stochastic(3, &mut rng(TOY_OPTION_SEED))
}

/// The four toy systems integrated with the default step and horizon:
/// `(grand-l, grand++-l, graphcon-tran, bimp)`.
pub fn toy_runs(record_every: usize) -> Result<[Trajectory; 4]> {
    let a = toy_adjacency();
    let x0 = toy_initial_state();
    let l = laplacian_of(&a);
    let steps = (TOY_HORIZON / TOY_DT).round() as usize;
    let s0 = KernelState::first_order(x0.clone());
    let g = graph_metrics_owned(Graph::complete(3));
    let grand = euler_integrate(&s0, &Laplacian { l: l.clone() }, TOY_DT, steps, record_every, &g)?;
    let grandpp = euler_integrate(&s0, &LaplacianSource { l, b: x0.clone() }, TOY_DT, steps, record_every, &g)?;
    let gc0 = KernelState::second_order(x0.clone(), Matrix::zeros(3, 3));
    let graphcon = euler_integrate(&gc0, &GraphconTran { aa: a.clone() }, TOY_DT, steps, record_every, &g)?;
    let bimp = Bimp { aa: a, ao: toy_option_adjacency(), params: BimpParams::new(1.0, 1.0, x0)? };
    let bimp = euler_integrate(&s0, &bimp, TOY_DT, steps, record_every, &g)?;
    Ok([grand, grandpp, graphcon, bimp])
}

fn graph_metrics_owned(g: Graph) -> impl Fn(&Matrix) -> (f64, f64) {
    move |x| graph_metrics(&g)(x)
}

fn diameter_at(t: &Trajectory, time: f64) -> f64 {
    t.diameter[t.index_at(time).expect("time within the run")]
}

fn toy_trajectories() -> Result<Outcome> {
    let [grand, grandpp, graphcon, bimp] = toy_runs(1)?;
    let end = TOY_HORIZON;
    let d_grand_end = *grand.diameter.last().unwrap();
    let d_grand_5 = diameter_at(&grand, 5.0);
    let d_gc_5 = diameter_at(&graphcon, 5.0);
    let d_gc_end = *graphcon.diameter.last().unwrap();
    let ratio: Vec<f64> = grandpp
        .states
        .iter()
        .map(|x| {
            let mean = x.values().iter().map(|v| v.abs()).sum::<f64>() / x.values().len() as f64;
            crate::analysis::opinion_diameter(x) / mean
        })
        .collect();
    // sampled once per time unit
    let per_unit = (1.0 / TOY_DT).round() as usize;
    let sampled: Vec<f64> = ratio.iter().step_by(per_unit).copied().collect();
    let ratio_decreasing = sampled.windows(2).all(|w| w[1] < w[0]);
    let d_bimp_end = *bimp.diameter.last().unwrap();
    let checks = [d_grand_end < 1e-2, d_gc_end < d_grand_5, d_gc_end < 1e-2, ratio_decreasing, d_bimp_end > 0.05];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "grand-l D({end})={d_grand_end:.3e}; graphcon-tran D({end})={d_gc_end:.3e} vs grand-l D(5)={d_grand_5:.3e} \
             (graphcon-tran D(5)={d_gc_5:.3e}); grand++-l diameter/mean ratio {:.4} -> {:.4}, decreasing={ratio_decreasing}; \
             bimp D({end})={d_bimp_end:.4}",
            sampled[0],
            sampled[sampled.len() - 1]
        ),
    )
}

fn leading_eigenvalue() -> Result<Outcome> {
    let mut r = rng(2);
    let aa = toy_adjacency();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let ao = fixtures::random_row_stochastic(r.gen_range(1..=5), &mut r);
        let op = KroneckerOperator::new(&aa, &ao)?;
        let res = power_iteration(|x| op.apply(x), op.dim(), 1e-10, 10_000)?;
        worst = worst.max((res.eigenvalue - 4.0).abs());
    }
    outcome(worst <= 1e-8, format!("max |lambda - 4| over 10 option matrices = {worst:.3e}"))
}

fn bifurcation_structure(exec: Exec) -> Result<Outcome> {
    let pts = bifurcation_sweep_with(exec, 0.05, 0.6, 112, 1.0, 1.0, 0.0)?;
    let mut bad = Vec::new();
    for p in &pts {
        let n = p.equilibria.len();
        if p.u < 0.24 && n != 1 {
            bad.push(format!("u={:.4} has {n} equilibria", p.u));
        }
        if p.u > 0.26 {
            let zero = p.equilibria.iter().find(|e| e.y.abs() < 1e-9);
            if n != 3 || zero.is_none_or(|z| z.stable) {
                bad.push(format!("u={:.4} has {n} equilibria", p.u));
            }
        }
    }
    let half = crate::analysis::equilibria_at(0.5, 1.0, 1.0, 0.0);
    let stable: Vec<f64> = half.iter().filter(|e| e.stable).map(|e| e.y).collect();
    let branches_ok = stable.len() == 2 && (stable[0] + 0.9575).abs() <= 1e-3 && (stable[1] - 0.9575).abs() <= 1e-3;
    outcome(
        bad.is_empty() && branches_ok,
        format!("{} sweep points checked, violations: {:?}; stable branches at u=0.5: {stable:?}", pts.len(), bad),
    )
}

fn consensus_at_bifurcation(exec: Exec) -> Result<Outcome> {
    let aa = toy_adjacency();
    let ao = toy_option_adjacency();
    let steps = (200.0 / TOY_DT).round() as usize;
    let finals = exec::map_range(exec, 20, |k| -> Result<(f64, f64)> {
        let mut r = rng(400 + k as u64);
        let x0 = Matrix::random_uniform(3, 3, -0.5, 0.5, &mut r);
        let kernel = Bimp { aa: aa.clone(), ao: ao.clone(), params: BimpParams::new(1.0, 1.0, Matrix::zeros(3, 3))? };
        let t = euler_integrate(&KernelState::first_order(x0), &kernel, TOY_DT, steps, steps, &diameter_metrics)?;
        Ok((t.last().max_abs(), *t.diameter.last().unwrap()))
    });
    let finals: Vec<(f64, f64)> = finals.into_iter().collect::<Result<_>>()?;
    let worst = finals.iter().map(|f| f.0).fold(0.0, f64::max);
    let worst_diam = finals.iter().map(|f| f.1).fold(0.0, f64::max);
    outcome(
        worst < 1e-3,
        format!("max ||X(200)||_inf over 20 starts = {worst:.4e} (threshold 1e-3); max diameter = {worst_diam:.3e}"),
    )
}

fn dissensus_with_input() -> Result<Outcome> {
    let x0 = toy_initial_state();
    let kernel =
        Bimp { aa: toy_adjacency(), ao: toy_option_adjacency(), params: BimpParams::new(1.0, 1.0, x0.clone())? };
    let half = (100.0 / TOY_DT).round() as usize;
    let t = euler_integrate(&KernelState::first_order(x0), &kernel, TOY_DT, 2 * half, half, &no_metrics)?;
    let g100 = min_pairwise_row_distance(&t.states[1]);
    let g200 = min_pairwise_row_distance(&t.states[2]);
    let change = (g200 - g100).abs() / g100;
    outcome(
        change < 0.01 && g200 >= 0.01,
        format!("min row gap {g100:.6} at t=100, {g200:.6} at t=200, relative change {change:.3e}"),
    )
}

fn energy_stability() -> Result<Outcome> {
    let mut r = rng(6);
    let g = fixtures::random_connected_graph(10, 0.3, &mut r);
    let a = row_normalize(&g.to_dense())?;
    let x0 = Matrix::random_uniform(10, 2, -1.0, 1.0, &mut r);
    let ao = fixtures::random_row_stochastic(2, &mut r);
    let metrics = graph_metrics(&g);
    let s0 = KernelState::first_order(x0.clone());
    let lap = euler_integrate(&s0, &Laplacian { l: laplacian_of(&a) }, 0.05, 1000, 1, &metrics)?;
    let kernel = Bimp { aa: a, ao, params: BimpParams::new(1.0, 1.0, x0)? };
    let bimp = euler_integrate(&s0, &kernel, 0.05, 1000, 1, &metrics)?;
    let e_lap = *lap.energy.last().unwrap();
    let e100 = bimp.energy[100];
    let (lo, hi) = bimp.energy[100..].iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
    let stable = lo >= e100 / 2.0 && hi <= 2.0 * e100;
    outcome(
        e_lap < 1e-6 && stable,
        format!(
            "laplacian energy after 1000 steps {e_lap:.3e}; bimp energy at step 100 {e100:.4}, range over steps 100..1000 [{lo:.4}, {hi:.4}]"
        ),
    )
}

fn gradient_suite(exec: Exec) -> Result<Outcome> {
    let reports = exec::map_range(exec, 20, |k| {
        let mut r = rng(700 + k as u64);
        let na = r.gen_range(2..=16);
        let no = r.gen_range(1..=4);
        let f = r.gen_range(1..=4);
        let (x_in, w, target, aa, ao) = random_fixture(na, f, no, &mut r);
        let d = r.gen_range(0.2..2.0);
        let dt = r.gen_range(0.01..0.1f64).min(0.99 / d);
        let cfg = TrainConfig {
            steps: r.gen_range(1..=16),
            dt,
            d,
            alpha: r.gen_range(0.0..3.0),
            u: r.gen_range(0.05..1.0),
            ..TrainConfig::default()
        };
        gradcheck(Exec::Sequential, &x_in, &w, &target, &aa, &ao, &cfg)
    });
    let reports: Vec<_> = reports.into_iter().collect::<Result<_>>()?;
    let worst_rel = reports.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    let bound_ok = reports.iter().all(|r| r.inf_norm <= r.bound);
    let tightest = reports.iter().map(|r| r.inf_norm / r.bound).fold(0.0, f64::max);

    let mut r = rng(777);
    let (x_in, w, _, aa, ao) = random_fixture(6, 3, 2, &mut r);
    let cfg = TrainConfig { steps: 128, dt: 0.05, d: 1.0, alpha: 1.0, u: 0.25, ..TrainConfig::default() };
    let (_, tape) = forward_unroll(&x_in, &w, &aa, &ao, &cfg)?;
    let jac = accumulated_jacobian(&tape, &cfg)?.inf_norm();
    outcome(
        worst_rel < 1e-5 && bound_ok && jac >= 1e-6,
        format!(
            "worst relative error {worst_rel:.3e}; all within bound: {bound_ok} (largest norm/bound {tightest:.3}); \
             accumulated Jacobian norm at M=128: {jac:.4e}"
        ),
    )
}

fn closed_form() -> Result<Outcome> {
    let mut r = rng(8);
    let g = fixtures::random_weighted_symmetric_graph(5, 0.3, &mut r);
    let l = laplacian(&g);
    let x0 = Matrix::random_uniform(5, 2, -1.0, 1.0, &mut r);
    let b = Matrix::random_uniform(5, 2, -0.5, 0.5, &mut r);
    let sol = grandpp_closed_form(&l, &x0, &b)?;
    let dt = 1e-3;
    let steps = 5000;
    let t = euler_integrate(&KernelState::first_order(x0), &LaplacianSource { l, b }, dt, steps, 100, &no_metrics)?;
    let err = t
        .times
        .iter()
        .zip(&t.states)
        .map(|(&tm, x)| x.sub(&sol.evaluate(tm)).map(|d| d.max_abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let mut slope_gap: f64 = 0.0;
    for j in 0..2 {
        let pts: Vec<(f64, f64)> =
            t.times.iter().zip(&t.states).map(|(&tm, x)| (tm, sol.project_zero_mode(x)[j])).collect();
        let slope = least_squares_slope(&pts).unwrap_or(f64::NAN);
        slope_gap = slope_gap.max((slope - sol.b_coef[(sol.zero_index, j)]).abs());
    }
    outcome(
        err <= 5e-3 && slope_gap <= 1e-6,
        format!("max |numeric - closed form| over [0, 5] = {err:.3e}; zero-mode slope error {slope_gap:.3e}"),
    )
}

/// Strongly connected 5-node support: a directed cycle, self-loops, and
/// random chords. Weights are normalized draws from `[1, 2)`, so every
/// positive entry is at least `0.1`.
fn random_supported_stochastic<R: Rng + ?Sized>(n: usize, r: &mut R) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = r.gen_range(1.0..2.0);
        m[(i, (i + 1) % n)] = r.gen_range(1.0..2.0);
        for j in 0..n {
            if m[(i, j)] == 0.0 && r.gen_bool(0.2) {
                m[(i, j)] = r.gen_range(1.0..2.0);
            }
        }
    }
    row_normalize(&m).expect("positive rows")
}

fn scrambling() -> Result<Outcome> {
    let mut r = rng(9);
    let n = 5;
    let mats: Vec<Matrix> = (0..50 * (n - 1)).map(|_| random_supported_stochastic(n, &mut r)).collect();
    let x0 = Matrix::random_uniform(n, 2, -1.0, 1.0, &mut r);
    let rep = scrambling_check(&mats, 0.05, &x0)?;
    // once the diameter reaches the rounding floor it may flicker by an ulp
    let floor = 8.0 * f64::EPSILON * x0.max_abs();
    let monotone = rep.diameters.windows(2).all(|w| w[1] <= w[0] + floor);
    let slope = rep.log_diameter_slope().unwrap_or(f64::NAN);
    outcome(
        rep.scrambling && monotone && slope < 0.0,
        format!(
            "{} windows of length {}, scrambling={}, delta={:.4}, non-increasing={monotone}, log-diameter slope {slope:.4}",
            rep.diameters.len() - 1,
            rep.window,
            rep.scrambling,
            rep.delta
        ),
    )
}

fn validity() -> Result<Outcome> {
    let mut accepted = Vec::new();
    for s in SaturationKind::ALL {
        if nod_validity(s).is_valid() {
            accepted.push(s.as_str());
        }
    }
    outcome(accepted == ["tanh", "softsign", "arctan"], format!("accepted: {accepted:?}"))
}

fn form_equivalence() -> Result<Outcome> {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let na = r.gen_range(1..=8);
        let no = r.gen_range(1..=5);
        let aa = fixtures::random_row_stochastic(na, &mut r);
        let ao = fixtures::random_row_stochastic(no, &mut r);
        let x = Matrix::random_uniform(na, no, -2.0, 2.0, &mut r);
        let b = Matrix::random_uniform(na, no, -1.0, 1.0, &mut r);
        let p = BimpParams::new(r.gen_range(0.0..2.0), r.gen_range(0.0..3.0), b)?.with_u(r.gen_range(0.05..1.0))?;
        let op = KroneckerOperator::new(&aa, &ao)?;
        let m = rhs_bimp(&x, &aa, &ao, &p)?.vec();
        let v = rhs_bimp_vectorized(&x.vec(), &op, &p)?;
        let f = rhs_bimp_filter_form(&x.vec(), &op, &p)?;
        for ((a, b), c) in m.iter().zip(&v).zip(&f) {
            worst = worst.max((a - b).abs()).max((b - c).abs()).max((a - c).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max disagreement over 100 fixtures {worst:.3e}"))
}

/// The smoke-test task and configuration.
pub fn smoke_task() -> Result<(crate::train::SbmTask, TrainConfig)> {
    let task = make_sbm_task(10, 0.8, 0.05, SBM_NOISE, SBM_SEED)?;
    let cfg = TrainConfig { lr: 0.1, epochs: 200, seed: SBM_SEED, ..TrainConfig::default() };
    Ok((task, cfg))
}

fn training_smoke() -> Result<Outcome> {
    let (task, cfg) = smoke_task()?;
    let (_, hist) = train_sgd(&task, &cfg)?;
    let first = hist[0];
    let last = *hist.last().unwrap();
    outcome(
        last.accuracy >= 0.9,
        format!(
            "seed {SBM_SEED}: loss {:.5} -> {:.5}, accuracy {:.2} -> {:.2} after {} epochs",
            first.loss, last.loss, first.accuracy, last.accuracy, cfg.epochs
        ),
    )
}
