use std::fs;
use std::io::Write;
use std::path::Path;

use odyn::analysis::{bifurcation_csv, bifurcation_sweep, graph_metrics};
use odyn::exec::Exec;
use odyn::fixtures::{self, rng, toy_graph, toy_initial_state};
use odyn::integrator::{euler_integrate, rk4_integrate, Trajectory};
use odyn::kernels::{
    bifurcation_point, Bimp, BimpParams, Dynamics, GraphconTran, Gread, GreadVariant, KernelKind, KernelState,
    Laplacian, LaplacianSource, LinearOpinion, Reduced, SaturationKind,
};
use odyn::train::{gradcheck, history_csv, make_sbm_task, random_fixture, train_sgd, TrainConfig};
use odyn::verify::{run_criterion, toy_runs, VerifyReport, CRITERIA};
use odyn::{laplacian, row_normalize, Graph, Matrix};

use crate::args::{
    BMode, BifurcationArgs, Command, GradcheckArgs, Method, PlotArgs, SimArgs, ToyArgs, TrainArgs, VerifyArgs,
};
use crate::{plot, CliError, Result};

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(&a),
        Command::Toy(a) => toy(&a),
        Command::Bifurcation(a) => bifurcation(&a),
        Command::Energy(a) => energy(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Train(a) => train(&a),
        Command::Verify(a) => verify(&a),
        Command::Plot(a) => plot_cmd(&a),
    }
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_kernel(s: &str) -> Result<KernelKind> {
    let canonical = match s {
        "grand-l" => "laplacian",
        "grand++-l" => "laplacian-source",
        other => other,
    };
    Ok(canonical.parse()?)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must be positive, got {v}")))
    }
}

struct Setup {
    graph: Graph,
    x0: Matrix,
    dynamics: Box<dyn Dynamics>,
    second_order: bool,
}

fn setup(a: &SimArgs) -> Result<Setup> {
    let kind = parse_kernel(&a.kernel)?;
    let saturation: SaturationKind = a.saturation.parse()?;
    check_positive("dt", a.dt)?;
    let graph = match &a.graph {
        Some(p) => Graph::read_json(p)?,
        None => toy_graph(),
    };
    let n = graph.node_count();
    let x0 = match (&a.init, &a.graph) {
        (Some(p), _) => Matrix::read_csv(p)?,
        (None, None) => toy_initial_state(),
        (None, Some(_)) => {
            if a.options == 0 {
                return Err(CliError::Usage("--options must be at least 1".into()));
            }
            Matrix::random_uniform(n, a.options, -0.5, 0.5, &mut rng(a.seed))
        }
    };
    if x0.rows() != n {
        return Err(CliError::Usage(format!("initial state has {} rows but the graph has {n} nodes", x0.rows())));
    }
    let b_mode = a.b_mode.unwrap_or(match kind {
        KernelKind::Bimp | KernelKind::LaplacianSource => BMode::Init,
        _ => BMode::Zero,
    });
    let b = match b_mode {
        BMode::Zero => Matrix::zeros(x0.rows(), x0.cols()),
        BMode::Init => x0.clone(),
        BMode::File => {
            let p = a.b_file.as_ref().ok_or_else(|| CliError::Usage("--b-mode file needs --b-file".into()))?;
            Matrix::read_csv(p)?
        }
    };
    if b.shape() != x0.shape() {
        return Err(CliError::Usage(format!("input has shape {:?}, state has {:?}", b.shape(), x0.shape())));
    }
    let u = a.u.unwrap_or_else(|| bifurcation_point(a.d, a.alpha));
    let adjacency = graph.to_dense();
    let dynamics: Box<dyn Dynamics> = match kind {
        KernelKind::Bimp => {
            let ao = fixtures::random_hollow_row_stochastic(x0.cols(), &mut rng(a.seed));
            let params = BimpParams::new(a.d, a.alpha, b)?.with_u(u)?.with_saturation(saturation);
            Box::new(Bimp { aa: row_normalize(&adjacency)?, ao, params })
        }
        KernelKind::LinearOd => Box::new(LinearOpinion::new(adjacency)),
        KernelKind::Laplacian => Box::new(Laplacian { l: laplacian(&graph) }),
        KernelKind::LaplacianSource => Box::new(LaplacianSource { l: laplacian(&graph), b }),
        KernelKind::GraphconTran => Box::new(GraphconTran { aa: row_normalize(&adjacency)? }),
        KernelKind::GreadF | KernelKind::GreadFb => {
            let variant = if kind == KernelKind::GreadF { GreadVariant::F } else { GreadVariant::FBstar };
            Box::new(Gread { l: laplacian(&graph), variant, alpha: a.alpha, beta: a.beta })
        }
        KernelKind::Reduced => {
            let scalar = b.values().first().copied().unwrap_or(0.0);
            Box::new(Reduced { u, d: a.d, alpha: a.alpha, b: scalar })
        }
    };
    Ok(Setup { graph, x0, dynamics, second_order: kind == KernelKind::GraphconTran })
}

fn run_sim(a: &SimArgs) -> Result<Trajectory> {
    let s = setup(a)?;
    let state0 = if s.second_order {
        KernelState::second_order(s.x0.clone(), Matrix::zeros(s.x0.rows(), s.x0.cols()))
    } else {
        KernelState::first_order(s.x0)
    };
    let metrics = graph_metrics(&s.graph);
    let t = match a.method {
        Method::Euler => euler_integrate(&state0, s.dynamics.as_ref(), a.dt, a.steps, a.record_every, &metrics)?,
        Method::Rk4 => rk4_integrate(&state0, s.dynamics.as_ref(), a.dt, a.steps, a.record_every, &metrics)?,
    };
    Ok(t)
}

fn simulate(a: &SimArgs) -> Result<()> {
    let t = run_sim(a)?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            t.write_states_csv(dir.join(format!("{}.csv", t.kernel_tag)))?;
            t.write_metrics_csv(dir.join(format!("{}-metrics.csv", t.kernel_tag)))?;
            Ok(())
        }
        None => emit(None, &t.states_csv()),
    }
}

fn energy(a: &SimArgs) -> Result<()> {
    let t = run_sim(a)?;
    emit(a.out.as_deref(), &t.metrics_csv())
}

/// File stems of the toy runs, in the order returned by `toy_runs`.
const TOY_NAMES: [&str; 4] = ["grand-l", "grand++-l", "graphcon-tran", "bimp"];

fn toy(a: &ToyArgs) -> Result<()> {
    let runs = toy_runs(a.record_every)?;
    fs::create_dir_all(&a.out)?;
    for (name, t) in TOY_NAMES.iter().zip(&runs) {
        t.write_states_csv(a.out.join(format!("{name}.csv")))?;
        t.write_metrics_csv(a.out.join(format!("{name}-metrics.csv")))?;
    }
    Ok(())
}

fn bifurcation(a: &BifurcationArgs) -> Result<()> {
    let points = bifurcation_sweep(a.u_min, a.u_max, a.points, a.d, a.alpha, a.b)?;
    emit(a.out.as_deref(), &bifurcation_csv(&points))
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<()> {
    if a.agents == 0 || a.features == 0 || a.options == 0 {
        return Err(CliError::Usage("--agents, --features and --options must be at least 1".into()));
    }
    let cfg = TrainConfig {
        steps: a.steps,
        dt: a.dt,
        d: a.d,
        alpha: a.alpha,
        u: a.u.unwrap_or_else(|| bifurcation_point(a.d, a.alpha)),
        seed: a.seed,
        ..TrainConfig::new(a.d, a.alpha)
    };
    cfg.validate()?;
    let (x_in, w, target, aa, ao) = random_fixture(a.agents, a.features, a.options, &mut rng(a.seed));
    let report = gradcheck(Exec::default(), &x_in, &w, &target, &aa, &ao, &cfg)?;
    let mut json = report.to_json()?;
    json.push('\n');
    emit(a.out.as_deref(), &json)
}

fn train(a: &TrainArgs) -> Result<()> {
    let task = make_sbm_task(a.block, a.p_in, a.p_out, a.noise, a.seed)?;
    let cfg = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        steps: a.steps,
        dt: a.dt,
        d: a.d,
        alpha: a.alpha,
        u: a.u.unwrap_or_else(|| bifurcation_point(a.d, a.alpha)),
        seed: a.seed,
    };
    let (_, history) = train_sgd(&task, &cfg)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        eprintln!(
            "loss {} -> {}, accuracy {} -> {} after {} epochs",
            first.loss, last.loss, first.accuracy, last.accuracy, a.epochs
        );
    }
    emit(a.out.as_deref(), &history_csv(&history))
}

fn verify(a: &VerifyArgs) -> Result<()> {
    let exec = if a.sequential { Exec::Sequential } else { Exec::default() };
    if let Some(bad) = a.only.iter().find(|id| !CRITERIA.iter().any(|c| c.0 == **id)) {
        return Err(CliError::Usage(format!("no criterion {bad}; ids run from 1 to {}", CRITERIA.len())));
    }
    let criteria: Vec<_> = CRITERIA
        .iter()
        .filter(|c| a.only.is_empty() || a.only.contains(&c.0))
        .map(|c| run_criterion(c.0, exec))
        .collect();
    let report = VerifyReport { passed: criteria.iter().all(|c| c.passed), criteria };
    let mut json = report.to_json()?;
    json.push('\n');
    emit(a.out.as_deref(), &json)?;
    if report.passed {
        return Ok(());
    }
    let failed: Vec<String> = report.failures().map(|c| format!("{} ({})", c.id, c.name)).collect();
    let failures: Vec<_> = report.failures().collect();
    eprintln!("{}", serde_json::to_string_pretty(&failures).map_err(odyn::Error::from)?);
    Err(CliError::Verify(format!("failing criteria: {}", failed.join(", "))))
}

fn plot_cmd(a: &PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)?;
    let default_title = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let svg = plot::render_csv(&text, a.title.as_deref().unwrap_or(&default_title), a.log_y)?;
    emit(a.out.as_deref(), &svg)
}
