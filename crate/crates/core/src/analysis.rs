//! Oversmoothing diagnostics, equilibrium sweeps of the reduced equation,
//! the closed-form Laplacian-with-source solution, and the scrambling
//! check for products of stochastic matrices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::graph::Graph;
use crate::integrator::Trajectory;
use crate::kernels::{reduced_1d_slope, rhs_reduced_1d};
use crate::matrix::Matrix;
use crate::spectral::symmetric_eigendecomposition;

/// `(1/n) sum_i sum_{j in N(i)} ||x_i - x_j||^2` over the directed edges
/// of `g` (edge weights are not used).
pub fn dirichlet_energy(x: &Matrix, g: &Graph) -> Result<f64> {
    let n = g.node_count();
    if x.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "dirichlet_energy",
            detail: format!("state has {} rows, graph has {n} nodes", x.rows()),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for (j, _) in g.neighbors(i) {
            total += x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(total / n as f64)
}

/// Largest spread `max_i x_ij - min_i x_ij` over options `j`.
pub fn opinion_diameter(x: &Matrix) -> f64 {
    (0..x.cols())
        .map(|j| {
            let col = x.column(j);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Smallest Euclidean distance between two distinct agent rows.
pub fn min_pairwise_row_distance(x: &Matrix) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.rows() {
        for k in i + 1..x.rows() {
            let d: f64 = x.row(i).iter().zip(x.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

/// Energy and diameter for the integrator's metric hook. Panics if the
/// state height differs from the node count.
pub fn graph_metrics(g: &Graph) -> impl Fn(&Matrix) -> (f64, f64) + '_ {
    move |x| (dirichlet_energy(x, g).expect("state matches graph"), opinion_diameter(x))
}

/// Diameter only; energy is reported as 0.
pub fn diameter_metrics(x: &Matrix) -> (f64, f64) {
    (0.0, opinion_diameter(x))
}

/// First recorded time whose diameter is below `tol`.
pub fn consensus_time(traj: &Trajectory, tol: f64) -> Option<f64> {
    traj.states.iter().zip(&traj.times).find(|(x, _)| opinion_diameter(x) < tol).map(|(_, &t)| t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub y: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationPoint {
    pub u: f64,
    /// Ascending in `y`.
    pub equilibria: Vec<Equilibrium>,
}

impl BifurcationPoint {
    pub fn stable(&self) -> impl Iterator<Item = f64> + '_ {
        self.equilibria.iter().filter(|e| e.stable).map(|e| e.y)
    }
}

const NEWTON_MAX_ITER: usize = 50;
const DEDUP_TOL: f64 = 1e-8;
const SEEDS: usize = 81;

/// All equilibria of the reduced equation at one `u`, found by Newton
/// from an even seed grid. The grid spans `[-2, 2]`, widened when `|b|`
/// pushes roots beyond it.
pub fn equilibria_at(u: f64, d: f64, alpha: f64, b: f64) -> Vec<Equilibrium> {
    let reach = (1.0 + b.abs()) / d * 1.1;
    let r = reach.max(2.0);
    let mut roots: Vec<f64> =
        (0..SEEDS).filter_map(|i| newton(-r + 2.0 * r * i as f64 / (SEEDS - 1) as f64, u, d, alpha, b)).collect();
    roots.sort_by(f64::total_cmp);
    // within a cluster keep the smallest residual, then the smallest |y|
    let key = |y: f64| (rhs_reduced_1d(y, u, d, alpha, b).abs(), y.abs());
    let mut kept: Vec<f64> = Vec::new();
    for y in roots {
        match kept.last_mut() {
            Some(last) if (y - *last).abs() <= DEDUP_TOL => {
                if key(y) < key(*last) {
                    *last = y;
                }
            }
            _ => kept.push(y),
        }
    }
    kept.into_iter().map(|y| Equilibrium { y, stable: reduced_1d_slope(y, u, d, alpha) < 0.0 }).collect()
}

fn newton(mut y: f64, u: f64, d: f64, alpha: f64, b: f64) -> Option<f64> {
    for _ in 0..NEWTON_MAX_ITER {
        let f = rhs_reduced_1d(y, u, d, alpha, b);
        let fp = reduced_1d_slope(y, u, d, alpha);
        if f == 0.0 {
            return Some(y);
        }
        if fp == 0.0 || !fp.is_finite() {
            return None;
        }
        let step = f / fp;
        y -= step;
        if !y.is_finite() {
            return None;
        }
        if step.abs() <= 1e-14 * (1.0 + y.abs()) && rhs_reduced_1d(y, u, d, alpha, b).abs() <= 1e-12 {
            return Some(y);
        }
    }
    None
}

/// Equilibria at `points` evenly spaced values of `u` in `[lo, hi]`.
pub fn bifurcation_sweep(lo: f64, hi: f64, points: usize, d: f64, alpha: f64, b: f64) -> Result<Vec<BifurcationPoint>> {
    bifurcation_sweep_with(Exec::default(), lo, hi, points, d, alpha, b)
}

pub fn bifurcation_sweep_with(
    exec: Exec,
    lo: f64,
    hi: f64,
    points: usize,
    d: f64,
    alpha: f64,
    b: f64,
) -> Result<Vec<BifurcationPoint>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("need u_min < u_max, got [{lo}, {hi}]")));
    }
    if points < 2 {
        return Err(Error::InvalidParameter("a sweep needs at least 2 points".into()));
    }
    if !(d > 0.0) || !b.is_finite() || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("need d > 0 and finite alpha, b (d={d}, alpha={alpha}, b={b})")));
    }
    Ok(exec::map_range(exec, points, |i| {
        let u = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        BifurcationPoint { u, equilibria: equilibria_at(u, d, alpha, b) }
    }))
}

/// `u,y,stable`, one line per equilibrium.
pub fn bifurcation_csv(points: &[BifurcationPoint]) -> String {
    let mut s = String::from("u,y,stable\n");
    for p in points {
        for e in &p.equilibria {
            let _ = writeln!(s, "{},{},{}", p.u, e.y, e.stable as u8);
        }
    }
    s
}

/// Equilibria of `dy/dt = (k - d)y - c3 y^3` with `k = u(alpha + 3)`.
///
/// `c3 = k` is the form obtained by replacing tanh with a bare cubic;
/// `c3 = k^3 / 3` is the cubic from the Taylor series of tanh.
pub fn cubic_normal_form_equilibria(u: f64, d: f64, alpha: f64, c3: f64) -> Vec<Equilibrium> {
    let k = u * (alpha + 3.0);
    let mu = k - d;
    if mu > 0.0 && c3 > 0.0 {
        let y = (mu / c3).sqrt();
        vec![
            Equilibrium { y: -y, stable: true },
            Equilibrium { y: 0.0, stable: false },
            Equilibrium { y, stable: true },
        ]
    } else {
        vec![Equilibrium { y: 0.0, stable: mu < 0.0 }]
    }
}

/// Solution of `dX/dt = -L X + B` for symmetric `L` with a simple zero
/// eigenvalue, expanded in the eigenvectors of `L`.
#[derive(Debug, Clone)]
pub struct ClosedFormSolution {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors.
    pub eigenvectors: Matrix,
    /// Row `i` is `v_i^T B`.
    pub b_coef: Matrix,
    /// Row `i` is `v_i^T X0 - b_i / lambda_i` (and `v_0^T X0` for the zero mode).
    pub c_coef: Matrix,
    pub zero_index: usize,
}

impl ClosedFormSolution {
    pub fn evaluate(&self, t: f64) -> Matrix {
        let n = self.eigenvalues.len();
        let no = self.b_coef.cols();
        let mut x = Matrix::zeros(n, no);
        for (i, &lam) in self.eigenvalues.iter().enumerate() {
            let coeff: Vec<f64> = if i == self.zero_index {
                self.zero_mode(t)
            } else {
                let decay = (-lam * t).exp();
                (0..no).map(|j| self.b_coef[(i, j)] / lam + self.c_coef[(i, j)] * decay).collect()
            };
            for r in 0..n {
                let v = self.eigenvectors[(r, i)];
                for (j, c) in coeff.iter().enumerate() {
                    x[(r, j)] += v * c;
                }
            }
        }
        x
    }

    /// `b_0 t + c_0`, the coefficient of the zero mode at time `t`.
    pub fn zero_mode(&self, t: f64) -> Vec<f64> {
        let z = self.zero_index;
        (0..self.b_coef.cols()).map(|j| self.b_coef[(z, j)] * t + self.c_coef[(z, j)]).collect()
    }

    /// Projection of a state onto the zero-mode eigenvector.
    pub fn project_zero_mode(&self, x: &Matrix) -> Vec<f64> {
        let v = self.eigenvectors.column(self.zero_index);
        (0..x.cols()).map(|j| (0..x.rows()).map(|r| v[r] * x[(r, j)]).sum()).collect()
    }
}

pub fn grandpp_closed_form(l: &Matrix, x0: &Matrix, b: &Matrix) -> Result<ClosedFormSolution> {
    if x0.shape() != b.shape() || x0.rows() != l.rows() {
        return Err(Error::ShapeMismatch {
            op: "grandpp_closed_form",
            detail: format!("L {:?}, X0 {:?}, B {:?}", l.shape(), x0.shape(), b.shape()),
        });
    }
    let (eigenvalues, v) = symmetric_eigendecomposition(l)?;
    let tol = 1e-9 * l.max_abs().max(1.0);
    if let Some(neg) = eigenvalues.iter().find(|&&e| e < -tol) {
        return Err(Error::InvalidParameter(format!("Laplacian has negative eigenvalue {neg}")));
    }
    let zeros = eigenvalues.iter().filter(|e| e.abs() <= tol).count();
    if zeros != 1 {
        return Err(Error::RepeatedZeroEigenvalue(zeros));
    }
    let vt = v.transpose();
    let b_coef = vt.matmul(b)?;
    let mut c_coef = vt.matmul(x0)?;
    for (i, &lam) in eigenvalues.iter().enumerate().skip(1) {
        for j in 0..b.cols() {
            c_coef[(i, j)] -= b_coef[(i, j)] / lam;
        }
    }
    Ok(ClosedFormSolution { eigenvalues, eigenvectors: v, b_coef, c_coef, zero_index: 0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScramblingReport {
    pub window: usize,
    /// Smallest common-column mass over all row pairs and windows; 0 when
    /// some window is not scrambling.
    pub delta: f64,
    pub scrambling: bool,
    /// Diameter of the product dynamics at each window boundary, starting
    /// with the initial state.
    pub diameters: Vec<f64>,
}

impl ScramblingReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Least-squares slope of `ln(diameter)` against the window index.
    /// `None` if fewer than two positive diameters.
    pub fn log_diameter_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> =
            self.diameters.iter().enumerate().filter(|(_, &d)| d > 0.0).map(|(i, d)| (i as f64, d.ln())).collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs `x(t + 1) = A(t) x(t)` and checks each window product
/// `Phi = A(t + T - 1) ... A(t)`, `T = n - 1`, for the scrambling
/// property. A trailing partial window is ignored.
pub fn scrambling_check(matrices: &[Matrix], zeta: f64, x0: &Matrix) -> Result<ScramblingReport> {
    let n = x0.rows();
    for (index, m) in matrices.iter().enumerate() {
        if m.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                op: "scrambling_check",
                detail: format!("matrix {index} is {:?}, state has {n} rows", m.shape()),
            });
        }
        for row in 0..n {
            for (col, &value) in m.row(row).iter().enumerate() {
                if value < 0.0 {
                    return Err(Error::NegativeEntry { row, col, value });
                }
                if value > 0.0 && value < zeta {
                    return Err(Error::ZetaViolated { index, row, col, value, zeta });
                }
            }
            let sum: f64 = m.row(row).iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::NotStochastic { index, row, sum });
            }
        }
    }
    let window = n.saturating_sub(1).max(1);
    let mut x = x0.clone();
    let mut diameters = vec![opinion_diameter(&x)];
    let mut delta = f64::INFINITY;
    let mut scrambling = true;
    for chunk in matrices.chunks_exact(window) {
        let mut phi = Matrix::identity(n);
        for a in chunk {
            phi = a.matmul(&phi)?;
            x = a.matmul(&x)?;
        }
        diameters.push(opinion_diameter(&x));
        match scrambling_delta(&phi) {
            Some(d) => delta = delta.min(d),
            None => scrambling = false,
        }
    }
    if !scrambling || !delta.is_finite() {
        delta = 0.0;
        scrambling = false;
    }
    Ok(ScramblingReport { window, delta, scrambling, diameters })
}

/// `min_{i<k} max_j min(Phi_ij, Phi_kj)`, or `None` if some pair of rows
/// shares no positive column.
pub fn scrambling_delta(phi: &Matrix) -> Option<f64> {
    let n = phi.rows();
    let mut delta = f64::INFINITY;
    for i in 0..n {
        for k in i + 1..n {
            let common = phi.row(i).iter().zip(phi.row(k)).map(|(a, b)| a.min(*b)).fold(0.0, f64::max);
            if common <= 0.0 {
                return None;
            }
            delta = delta.min(common);
        }
    }
    Some(if n < 2 { 1.0 } else { delta })
}
