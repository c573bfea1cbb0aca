//! Linear encoder followed by an unrolled Euler integration of the
//! nonlinear opinion kernel, with hand-written reverse-mode gradients.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{build_communication_attention, build_option_attention, AttentionWeights};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::fixtures;
use crate::graph::Graph;
use crate::integrator::check_step_size;
use crate::kernels::{bifurcation_point, bimp_terms, BimpParams, SaturationKind};
use crate::matrix::Matrix;
use crate::spectral::KroneckerOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Number of Euler steps `M`.
    pub steps: usize,
    pub dt: f64,
    pub d: f64,
    pub alpha: f64,
    pub u: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new(1.0, 1.0)
    }
}

impl TrainConfig {
    /// `u` at the bifurcation point, `M = 8`, `dt = 0.1`, `lr = 0.1`,
    /// 200 epochs, seed 1.
    pub fn new(d: f64, alpha: f64) -> Self {
        TrainConfig { lr: 0.1, epochs: 200, steps: 8, dt: 0.1, d, alpha, u: bifurcation_point(d, alpha), seed: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("training needs at least one Euler step".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        self.validate_dynamics()
    }

    fn validate_dynamics(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        check_step_size(self.dt, self.d)?;
        self.params(Matrix::zeros(1, 1)).map(|_| ())
    }

    fn params(&self, b: Matrix) -> Result<BimpParams> {
        BimpParams::new(self.d, self.alpha, b)?.with_u(self.u)
    }
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct Tape {
    pub x_in: Matrix,
    pub aa: Matrix,
    pub ao: Matrix,
    /// `X^0 .. X^M`.
    pub states: Vec<Matrix>,
    /// Pre-activations `Z^0 .. Z^{M-1}`.
    pub preacts: Vec<Matrix>,
    pub saturation: SaturationKind,
}

impl Tape {
    pub fn x0(&self) -> &Matrix {
        &self.states[0]
    }

    pub fn output(&self) -> &Matrix {
        self.states.last().expect("tape holds X^0")
    }
}

fn check_shapes(x_in: &Matrix, w: &Matrix, aa: &Matrix, ao: &Matrix) -> Result<()> {
    let ok = x_in.cols() == w.rows() && aa.shape() == (x_in.rows(), x_in.rows()) && ao.shape() == (w.cols(), w.cols());
    if !ok {
        return Err(Error::ShapeMismatch {
            op: "forward_unroll",
            detail: format!("X_in {:?}, W {:?}, Aa {:?}, Ao {:?}", x_in.shape(), w.shape(), aa.shape(), ao.shape()),
        });
    }
    Ok(())
}

/// `X^0 = X_in W`, then `M` Euler steps with source `B = X^0`.
pub fn forward_unroll(
    x_in: &Matrix,
    w: &Matrix,
    aa: &Matrix,
    ao: &Matrix,
    cfg: &TrainConfig,
) -> Result<(Matrix, Tape)> {
    check_shapes(x_in, w, aa, ao)?;
    cfg.validate_dynamics()?;
    let x0 = x_in.matmul(w)?;
    let p = cfg.params(x0.clone())?;
    let mut states = Vec::with_capacity(cfg.steps + 1);
    let mut preacts = Vec::with_capacity(cfg.steps);
    let mut x = x0;
    for _ in 0..cfg.steps {
        let (z, rhs) = bimp_terms(&x, aa, ao, &p)?;
        let next = x.zip_with(&rhs, "forward_unroll", |a, r| a + cfg.dt * r)?;
        states.push(x);
        preacts.push(z);
        x = next;
    }
    states.push(x.clone());
    let tape = Tape { x_in: x_in.clone(), aa: aa.clone(), ao: ao.clone(), states, preacts, saturation: p.saturation };
    Ok((x, tape))
}

/// `(1 / 2 N_a N_o) sum (x - target)^2`.
pub fn mse_loss(x: &Matrix, target: &Matrix) -> Result<f64> {
    let diff = x.sub(target)?;
    let n = (x.rows() * x.cols()) as f64;
    Ok(diff.values().iter().map(|v| v * v).sum::<f64>() / (2.0 * n))
}

/// Exact reverse pass through the unrolled map, including the source
/// term's dependence on `X^0`.
pub fn backward_grad(tape: &Tape, target: &Matrix, cfg: &TrainConfig) -> Result<Matrix> {
    let out = tape.output();
    if target.shape() != out.shape() {
        return Err(Error::ShapeMismatch {
            op: "backward_grad",
            detail: format!("target {:?}, output {:?}", target.shape(), out.shape()),
        });
    }
    if tape.preacts.len() + 1 != tape.states.len() {
        return Err(Error::InvalidParameter("tape is inconsistent".into()));
    }
    let n = (out.rows() * out.cols()) as f64;
    let mut g = out.sub(target)?.scale(1.0 / n);
    let mut g_src = Matrix::zeros(out.rows(), out.cols());
    let aat = tape.aa.transpose();
    let keep = 1.0 - cfg.d * cfg.dt;
    for z in tape.preacts.iter().rev() {
        g_src.axpy(cfg.dt, &g)?;
        let s = g.zip_with(z, "backward_grad", |gv, zv| gv * tape.saturation.derivative(zv) * cfg.dt * cfg.u)?;
        let ats = aat.matmul(&s)?;
        let mut next = g.scale(keep);
        next.axpy(cfg.alpha, &s)?;
        next.axpy(1.0, &ats)?;
        next.axpy(1.0, &s.matmul(&tape.ao)?)?;
        next.axpy(1.0, &ats.matmul(&tape.ao)?)?;
        g = next;
    }
    g.axpy(1.0, &g_src)?;
    tape.x_in.transpose().matmul(&g)
}

/// Loss of the unrolled model at `w`.
pub fn loss_at(x_in: &Matrix, w: &Matrix, target: &Matrix, aa: &Matrix, ao: &Matrix, cfg: &TrainConfig) -> Result<f64> {
    mse_loss(&forward_unroll(x_in, w, aa, ao, cfg)?.0, target)
}

/// Central differences, one entry of `W` at a time.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_grad(
    exec: Exec,
    x_in: &Matrix,
    w: &Matrix,
    target: &Matrix,
    aa: &Matrix,
    ao: &Matrix,
    cfg: &TrainConfig,
    h: f64,
) -> Result<Matrix> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h must be positive, got {h}")));
    }
    let entries = exec::map_range(exec, w.rows() * w.cols(), |k| {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp.values_mut()[k] += h;
        wm.values_mut()[k] -= h;
        Ok((loss_at(x_in, &wp, target, aa, ao, cfg)? - loss_at(x_in, &wm, target, aa, ao, cfg)?) / (2.0 * h))
    });
    Matrix::new(w.rows(), w.cols(), entries.into_iter().collect::<Result<Vec<f64>>>()?)
}

/// Bound on `max |dL/dW|`:
/// `(1 / N_a N_o) (beta + (1 + beta) x0_norm + target_norm) gamma xin_norm`
/// with `beta = M dt` and `gamma = (1 + 4 M u dt)(1 + (4u + 1) dt)`.
pub fn gradient_upper_bound(
    cfg: &TrainConfig,
    n_agents: usize,
    n_options: usize,
    x0_norm: f64,
    target_norm: f64,
    xin_norm: f64,
) -> f64 {
    let m = cfg.steps as f64;
    let beta = m * cfg.dt;
    let gamma = (1.0 + 4.0 * m * cfg.u * cfg.dt) * (1.0 + (4.0 * cfg.u + 1.0) * cfg.dt);
    (beta + (1.0 + beta) * x0_norm + target_norm) * gamma * xin_norm / (n_agents * n_options) as f64
}

/// Per-step Jacobian `(1 - d dt) I + dt diag(S'(z)) u((a - 1) I + Ã)` of
/// the state update at `x` (the source term is held fixed).
pub fn step_jacobian(x: &Matrix, aa: &Matrix, ao: &Matrix, cfg: &TrainConfig) -> Result<Matrix> {
    let op = KroneckerOperator::new(aa, ao)?;
    let p = cfg.params(Matrix::zeros(x.rows(), x.cols()))?;
    let (z, _) = bimp_terms(x, aa, ao, &p)?;
    let a_tilde = op.materialize()?;
    let z = z.vec();
    let n = z.len();
    let mut j = Matrix::zeros(n, n);
    for r in 0..n {
        let scale = cfg.dt * cfg.u * p.saturation.derivative(z[r]);
        for c in 0..n {
            let diag = if r == c { cfg.alpha - 1.0 } else { 0.0 };
            j[(r, c)] = scale * (diag + a_tilde[(r, c)]);
        }
        j[(r, r)] += 1.0 - cfg.d * cfg.dt;
    }
    Ok(j)
}

/// `J_M ... J_1` along a recorded forward run.
pub fn accumulated_jacobian(tape: &Tape, cfg: &TrainConfig) -> Result<Matrix> {
    let n = tape.x0().rows() * tape.x0().cols();
    let mut prod = Matrix::identity(n);
    for x in &tape.states[..tape.states.len() - 1] {
        prod = step_jacobian(x, &tape.aa, &tape.ao, cfg)?.matmul(&prod)?;
    }
    Ok(prod)
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Matrix,
    pub finite_diff: Matrix,
    pub rel_error: f64,
    /// `max |dL/dW|`.
    pub inf_norm: f64,
    pub bound: f64,
}

#[derive(Serialize)]
struct GradReportJson<'a> {
    analytic: Vec<&'a [f64]>,
    finite_diff: Vec<&'a [f64]>,
    rel_error: f64,
    inf_norm: f64,
    bound: f64,
    within_bound: bool,
}

impl GradReport {
    pub fn to_json(&self) -> Result<String> {
        fn rows(m: &Matrix) -> Vec<&[f64]> {
            (0..m.rows()).map(|i| m.row(i)).collect()
        }
        Ok(serde_json::to_string_pretty(&GradReportJson {
            analytic: rows(&self.analytic),
            finite_diff: rows(&self.finite_diff),
            rel_error: self.rel_error,
            inf_norm: self.inf_norm,
            bound: self.bound,
            within_bound: self.inf_norm <= self.bound,
        })?)
    }
}

/// Analytic gradient, central-difference gradient (`h = 1e-5`) and the
/// analytic bound for one fixture.
pub fn gradcheck(
    exec: Exec,
    x_in: &Matrix,
    w: &Matrix,
    target: &Matrix,
    aa: &Matrix,
    ao: &Matrix,
    cfg: &TrainConfig,
) -> Result<GradReport> {
    let (_, tape) = forward_unroll(x_in, w, aa, ao, cfg)?;
    let analytic = backward_grad(&tape, target, cfg)?;
    let finite_diff = finite_difference_grad(exec, x_in, w, target, aa, ao, cfg, 1e-5)?;
    let rel_error = analytic.sub(&finite_diff)?.max_abs() / finite_diff.max_abs().max(1e-12);
    let (na, no) = tape.x0().shape();
    // column abs-sums of X_in bound |X_in^T G| entrywise
    let xin_norm = x_in.one_norm();
    let bound = gradient_upper_bound(cfg, na, no, tape.x0().max_abs(), target.max_abs(), xin_norm);
    Ok(GradReport { inf_norm: analytic.max_abs(), analytic, finite_diff, rel_error, bound })
}

/// Random gradient-check fixture: `(x_in, w, target, aa, ao)`.
pub fn random_fixture<R: Rng + ?Sized>(
    n_agents: usize,
    features: usize,
    n_options: usize,
    rng: &mut R,
) -> (Matrix, Matrix, Matrix, Matrix, Matrix) {
    let x_in = Matrix::random_uniform(n_agents, features, -1.0, 1.0, rng);
    let w = Matrix::random_uniform(features, n_options, -1.0, 1.0, rng);
    let target = Matrix::random_uniform(n_agents, n_options, -1.0, 1.0, rng);
    let aa = fixtures::random_row_stochastic(n_agents, rng);
    let ao = fixtures::random_row_stochastic(n_options, rng);
    (x_in, w, target, aa, ao)
}

/// Two-block node classification problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmTask {
    pub graph: Graph,
    pub x_in: Matrix,
    pub target: Matrix,
    pub labels: Vec<usize>,
}

/// Stochastic block model with two blocks of `n_per_block` nodes.
/// Features are one-hot block labels plus `N(0, noise^2)` noise; the
/// target is the one-hot label matrix.
pub fn make_sbm_task(n_per_block: usize, p_in: f64, p_out: f64, noise: f64, seed: u64) -> Result<SbmTask> {
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("{name} = {p} is not a probability")));
        }
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::InvalidParameter(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = fixtures::rng(seed);
    let n = 2 * n_per_block;
    let labels: Vec<usize> = (0..n).map(|i| i / n_per_block.max(1)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen_bool(p) {
                edges.push((i, j, 1.0));
                edges.push((j, i, 1.0));
            }
        }
    }
    let graph = Graph::from_edge_list(&edges, n)?;
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut target = Matrix::zeros(n, 2);
    for (i, &l) in labels.iter().enumerate() {
        target[(i, l)] = 1.0;
    }
    let mut x_in = target.clone();
    if noise > 0.0 {
        x_in.values_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok(SbmTask { graph, x_in, target, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// `epoch,loss,accuracy`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for h in history {
        s.push_str(&format!("{},{},{}\n", h.epoch, h.loss, h.accuracy));
    }
    s
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(x: &Matrix, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = x.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == l
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Attention adjacencies for a task: `Aa` from the features on the task
/// graph, `Ao` from the initial encoding `X_in W`.
pub fn task_attention(task: &SbmTask, w: &Matrix, seed: u64) -> Result<(Matrix, Matrix)> {
    let mut rng = fixtures::rng(seed ^ 0xa77e);
    let wa = AttentionWeights::random(1, task.x_in.cols(), task.x_in.cols(), &mut rng)?;
    let aa = build_communication_attention(&task.x_in, &wa, &task.graph)?;
    let x0 = task.x_in.matmul(w)?;
    let wo = AttentionWeights::random(1, x0.rows(), x0.rows(), &mut rng)?;
    let ao = build_option_attention(&x0, &wo)?;
    Ok((aa, ao))
}

/// Full-batch gradient descent on `W`. `history[e]` holds the loss and
/// accuracy before update `e + 1`; the last entry is after the final update.
pub fn train_sgd(task: &SbmTask, cfg: &TrainConfig) -> Result<(Matrix, Vec<EpochStats>)> {
    cfg.validate()?;
    let f = task.x_in.cols();
    let no = task.target.cols();
    let mut rng = fixtures::rng(cfg.seed);
    let a = 1.0 / (f as f64).sqrt();
    let mut w = Matrix::random_uniform(f, no, -a, a, &mut rng);
    let (aa, ao) = task_attention(task, &w, cfg.seed)?;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (out, tape) = forward_unroll(&task.x_in, &w, &aa, &ao, cfg)?;
        let loss = mse_loss(&out, &task.target)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(epoch));
        }
        history.push(EpochStats { epoch, loss, accuracy: accuracy(&out, &task.labels) });
        if epoch == cfg.epochs {
            break;
        }
        let grad = backward_grad(&tape, &task.target, cfg)?;
        w.axpy(-cfg.lr, &grad)?;
        if !w.is_finite() {
            return Err(Error::Divergence(epoch + 1));
        }
    }
    Ok((w, history))
}
