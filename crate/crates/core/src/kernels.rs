//! Right-hand sides of the linear and nonlinear opinion dynamics, the
//! diffusion baselines, and the saturation validity check.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::spectral::KroneckerOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaturationKind {
    Tanh,
    Softsign,
    Arctan,
    Sigmoid,
    Relu,
    Gelu,
    Identity,
}

impl SaturationKind {
    pub const ALL: [SaturationKind; 7] = [
        SaturationKind::Tanh,
        SaturationKind::Softsign,
        SaturationKind::Arctan,
        SaturationKind::Sigmoid,
        SaturationKind::Relu,
        SaturationKind::Gelu,
        SaturationKind::Identity,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            SaturationKind::Tanh => x.tanh(),
            SaturationKind::Softsign => x / (1.0 + x.abs()),
            SaturationKind::Arctan => x.atan(),
            SaturationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            SaturationKind::Relu => x.max(0.0),
            SaturationKind::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            SaturationKind::Identity => x,
        }
    }

    /// Analytic derivative; `relu` uses 0 at the kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            SaturationKind::Tanh => {
                let c = x.cosh();
                1.0 / (c * c)
            }
            SaturationKind::Softsign => 1.0 / (1.0 + x.abs()).powi(2),
            SaturationKind::Arctan => 1.0 / (1.0 + x * x),
            SaturationKind::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
            SaturationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SaturationKind::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            SaturationKind::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SaturationKind::Tanh => "tanh",
            SaturationKind::Softsign => "softsign",
            SaturationKind::Arctan => "arctan",
            SaturationKind::Sigmoid => "sigmoid",
            SaturationKind::Relu => "relu",
            SaturationKind::Gelu => "gelu",
            SaturationKind::Identity => "identity",
        }
    }
}

impl fmt::Display for SaturationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SaturationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SaturationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown saturation '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validity {
    Valid,
    Invalid(String),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Numerical check that `S(0) = 0`, `S` is differentiable at 0 with
/// `S'(0) = 1`, and `S'''(0) != 0`.
pub fn nod_validity(s: SaturationKind) -> Validity {
    let f = |x: f64| s.apply(x);
    let s0 = f(0.0);
    if s0.abs() > 1e-12 {
        return Validity::Invalid(format!("S(0) = {s0}: does not pass through the origin"));
    }
    let h = 1e-6;
    let left = (f(0.0) - f(-h)) / h;
    let right = (f(h) - f(0.0)) / h;
    if (left - right).abs() > 1e-3 {
        return Validity::Invalid(format!("not differentiable at 0 (left slope {left}, right slope {right})"));
    }
    // softsign has O(h) error in this quotient, so h must stay well below the tolerance
    let h = 1e-7;
    let d1 = (f(h) - f(-h)) / (2.0 * h);
    if (d1 - 1.0).abs() > 1e-6 {
        return Validity::Invalid(format!("S'(0) = {d1}, expected 1"));
    }
    let h = 1e-2;
    let d3 = (f(2.0 * h) - 2.0 * f(h) + 2.0 * f(-h) - f(-2.0 * h)) / (2.0 * h * h * h);
    if d3.abs() <= 1e-6 {
        return Validity::Invalid(format!("S'''(0) = {d3}: no cubic term, the dynamics stay linear"));
    }
    Validity::Valid
}

/// Parameters of the nonlinear opinion kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct BimpParams {
    pub d: f64,
    pub alpha: f64,
    pub u: f64,
    pub saturation: SaturationKind,
    pub b: Matrix,
}

impl BimpParams {
    /// `tanh` saturation and `u = d / (alpha + 3)`.
    pub fn new(d: f64, alpha: f64, b: Matrix) -> Result<Self> {
        let p = BimpParams { d, alpha, u: bifurcation_point(d, alpha), saturation: SaturationKind::Tanh, b };
        p.validate()?;
        Ok(p)
    }

    pub fn with_u(mut self, u: f64) -> Result<Self> {
        self.u = u;
        self.validate()?;
        Ok(self)
    }

    pub fn with_saturation(mut self, s: SaturationKind) -> Self {
        self.saturation = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0) || !self.d.is_finite() {
            return Err(Error::InvalidParameter(format!("damping d must be >= 0, got {}", self.d)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.u > 0.0) || !self.u.is_finite() {
            return Err(Error::InvalidParameter(format!("attention u must be > 0, got {}", self.u)));
        }
        if !self.b.is_finite() {
            return Err(Error::NonFinite("BimpParams::b"));
        }
        Ok(())
    }
}

/// `u* = d / (alpha + 3)`, where the neutral equilibrium loses stability.
pub fn bifurcation_point(d: f64, alpha: f64) -> f64 {
    d / (alpha + 3.0)
}

/// State of a kernel; `y` is the velocity of second-order kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelState {
    pub x: Matrix,
    pub y: Option<Matrix>,
}

impl KernelState {
    pub fn first_order(x: Matrix) -> Self {
        KernelState { x, y: None }
    }

    pub fn second_order(x: Matrix, y: Matrix) -> Self {
        KernelState { x, y: Some(y) }
    }

    /// `self + s * other`, entrywise as `a + s * b`.
    pub fn add_scaled(&self, s: f64, other: &KernelState) -> Result<KernelState> {
        let x = self.x.zip_with(&other.x, "KernelState::add_scaled", |a, b| a + s * b)?;
        let y = match (&self.y, &other.y) {
            (None, None) => None,
            (Some(a), Some(b)) => Some(a.zip_with(b, "KernelState::add_scaled", |a, b| a + s * b)?),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "KernelState::add_scaled",
                    detail: "velocity present in only one operand".into(),
                })
            }
        };
        Ok(KernelState { x, y })
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.as_ref().is_none_or(Matrix::is_finite)
    }
}

fn check_square(op: &'static str, m: &Matrix, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::ShapeMismatch { op, detail: format!("{what} is {:?}, expected {n}x{n}", m.shape()) });
    }
    Ok(())
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { op, detail: format!("{:?} vs {:?}", a.shape(), b.shape()) });
    }
    Ok(())
}

/// Pre-activation `Z = u(aX + Aa X + X Ao^T + Aa X Ao^T)` and the full
/// right-hand side `-dX + S(Z) + B`.
pub fn bimp_terms(x: &Matrix, aa: &Matrix, ao: &Matrix, p: &BimpParams) -> Result<(Matrix, Matrix)> {
    const OP: &str = "rhs_bimp";
    let (na, no) = x.shape();
    check_square(OP, aa, na, "Aa")?;
    check_square(OP, ao, no, "Ao")?;
    check_same(OP, x, &p.b)?;
    if !x.is_finite() {
        return Err(Error::NonFinite(OP));
    }
    let ax = aa.matmul(x)?;
    let xo = x.matmul_transposed(ao)?;
    let axo = ax.matmul_transposed(ao)?;
    let mut z = x.scale(p.alpha);
    for m in [&ax, &xo, &axo] {
        z.axpy(1.0, m)?;
    }
    let z = z.scale(p.u);
    let s = p.saturation;
    let mut rhs = x.scale(-p.d);
    for ((r, zv), bv) in rhs.values_mut().iter_mut().zip(z.values()).zip(p.b.values()) {
        *r += s.apply(*zv) + bv;
    }
    Ok((z, rhs))
}

/// `dX/dt = -dX + S(u(aX + Aa X + X Ao^T + Aa X Ao^T)) + B`.
pub fn rhs_bimp(x: &Matrix, aa: &Matrix, ao: &Matrix, p: &BimpParams) -> Result<Matrix> {
    Ok(bimp_terms(x, aa, ao, p)?.1)
}

fn check_vec(op: &'static str, x: &[f64], kop: &KroneckerOperator, p: &BimpParams) -> Result<Vec<f64>> {
    if p.b.shape() != (kop.n_agents(), kop.n_options()) {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("B is {:?}, operator is {}x{}", p.b.shape(), kop.n_agents(), kop.n_options()),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(op));
    }
    kop.apply(x)
}

/// `-dx + S(u((a - 1)x + Ã x)) + b` on `x = vec(X)`.
pub fn rhs_bimp_vectorized(x: &[f64], kop: &KroneckerOperator, p: &BimpParams) -> Result<Vec<f64>> {
    let ax = check_vec("rhs_bimp_vectorized", x, kop, p)?;
    let b = p.b.vec();
    Ok(x.iter()
        .zip(&ax)
        .zip(&b)
        .map(|((&xi, &ai), &bi)| -p.d * xi + p.saturation.apply(p.u * ((p.alpha - 1.0) * xi + ai)) + bi)
        .collect())
}

/// Same field split into a sharpening term `(a - 1)(x - Ãx)` and a
/// smoothing term `a Ã x`.
pub fn rhs_bimp_filter_form(x: &[f64], kop: &KroneckerOperator, p: &BimpParams) -> Result<Vec<f64>> {
    let ax = check_vec("rhs_bimp_filter_form", x, kop, p)?;
    let b = p.b.vec();
    Ok(x.iter()
        .zip(&ax)
        .zip(&b)
        .map(|((&xi, &ai), &bi)| {
            let z = (p.alpha - 1.0) * (xi - ai) + p.alpha * ai;
            -p.d * xi + p.saturation.apply(p.u * z) + bi
        })
        .collect())
}

/// `dx_i/dt = -d_i x_i + sum_k a_ik x_k`, requiring `d_i = sum_k a_ik`.
pub fn rhs_linear_opinion(x: &Matrix, a: &Matrix, d_vec: &[f64]) -> Result<Matrix> {
    const OP: &str = "rhs_linear_opinion";
    check_square(OP, a, x.rows(), "A")?;
    if d_vec.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: OP,
            detail: format!("{} damping values for {} agents", d_vec.len(), x.rows()),
        });
    }
    for (i, (s, d)) in a.row_sums().iter().zip(d_vec).enumerate() {
        if (s - d).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("d[{i}] = {d} but row {i} of A sums to {s}")));
        }
    }
    let mut out = a.matmul(x)?;
    for (i, &d) in d_vec.iter().enumerate() {
        for (o, &xv) in out.row_mut(i).iter_mut().zip(x.row(i)) {
            *o -= d * xv;
        }
    }
    Ok(out)
}

/// `-L X`.
pub fn rhs_laplacian(x: &Matrix, l: &Matrix) -> Result<Matrix> {
    check_square("rhs_laplacian", l, x.rows(), "L")?;
    Ok(l.matmul(x)?.scale(-1.0))
}

/// `-L X + B`.
pub fn rhs_laplacian_source(x: &Matrix, l: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_same("rhs_laplacian_source", x, b)?;
    rhs_laplacian(x, l)?.add(b)
}

/// Damped oscillator: `dY/dt = (Aa - I)X - Y`, `dX/dt = Y`.
pub fn rhs_graphcon_tran(state: &KernelState, aa: &Matrix) -> Result<KernelState> {
    const OP: &str = "rhs_graphcon_tran";
    let y = state.y.as_ref().ok_or_else(|| Error::InvalidParameter("graphcon-tran needs a velocity state".into()))?;
    check_same(OP, &state.x, y)?;
    check_square(OP, aa, state.x.rows(), "Aa")?;
    let dy = aa.matmul(&state.x)?.sub(&state.x)?.sub(y)?;
    Ok(KernelState { x: y.clone(), y: Some(dy) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GreadVariant {
    /// `-LX + X(1 - X)`
    F,
    /// `-aLX + b(LX + X)`
    FBstar,
}

pub fn rhs_gread(x: &Matrix, l: &Matrix, variant: GreadVariant, alpha: f64, beta: f64) -> Result<Matrix> {
    check_square("rhs_gread", l, x.rows(), "L")?;
    let lx = l.matmul(x)?;
    Ok(match variant {
        GreadVariant::F => lx.zip_with(x, "rhs_gread", |lv, xv| -lv + xv * (1.0 - xv))?,
        GreadVariant::FBstar => lx.zip_with(x, "rhs_gread", |lv, xv| -alpha * lv + beta * (lv + xv))?,
    })
}

/// `C = max_i sum_j |L_ij|`, so `|[LX]_i| <= C max_j |X_j|`.
pub fn gread_f_constant(l: &Matrix) -> f64 {
    l.inf_norm()
}

/// `dy/dt = -dy + tanh(u(a + 3)y) + b`.
pub fn rhs_reduced_1d(y: f64, u: f64, d: f64, alpha: f64, b: f64) -> f64 {
    -d * y + (u * (alpha + 3.0) * y).tanh() + b
}

/// `d/dy` of [`rhs_reduced_1d`].
pub fn reduced_1d_slope(y: f64, u: f64, d: f64, alpha: f64) -> f64 {
    let k = u * (alpha + 3.0);
    let c = (k * y).cosh();
    -d + k / (c * c)
}

/// Kernel selector used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Bimp,
    LinearOd,
    Laplacian,
    LaplacianSource,
    GraphconTran,
    GreadF,
    GreadFb,
    Reduced,
}

impl KernelKind {
    pub const ALL: [KernelKind; 8] = [
        KernelKind::Bimp,
        KernelKind::LinearOd,
        KernelKind::Laplacian,
        KernelKind::LaplacianSource,
        KernelKind::GraphconTran,
        KernelKind::GreadF,
        KernelKind::GreadFb,
        KernelKind::Reduced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Bimp => "bimp",
            KernelKind::LinearOd => "linear-od",
            KernelKind::Laplacian => "laplacian",
            KernelKind::LaplacianSource => "laplacian-source",
            KernelKind::GraphconTran => "graphcon-tran",
            KernelKind::GreadF => "gread-f",
            KernelKind::GreadFb => "gread-fb",
            KernelKind::Reduced => "reduced",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown kernel '{s}'")))
    }
}

/// A vector field over [`KernelState`].
pub trait Dynamics {
    fn rhs(&self, state: &KernelState) -> Result<KernelState>;

    /// Linear damping coefficient, if the kernel has one; the Euler
    /// integrator refuses `dt * d >= 1`.
    fn damping(&self) -> Option<f64> {
        None
    }

    fn tag(&self) -> &str;
}

#[derive(Debug, Clone)]
pub struct Bimp {
    pub aa: Matrix,
    pub ao: Matrix,
    pub params: BimpParams,
}

impl Dynamics for Bimp {
    fn rhs(&self, s: &KernelState) -> Result<KernelState> {
        Ok(KernelState::first_order(rhs_bimp(&s.x, &self.aa, &self.ao, &self.params)?))
    }
    fn damping(&self) -> Option<f64> {
        Some(self.params.d)
    }
    fn tag(&self) -> &str {
        "bimp"
    }
}

#[derive(Debug, Clone)]
pub struct LinearOpinion {
    pub a: Matrix,
    pub d_vec: Vec<f64>,
}

impl LinearOpinion {
    /// Damping taken from the row sums of `a`.
    pub fn new(a: Matrix) -> Self {
        let d_vec = a.row_sums();
        LinearOpinion { a, d_vec }
    }
}

impl Dynamics for LinearOpinion {
    fn rhs(&self, s: &KernelState) -> Result<KernelState> {
        Ok(KernelState::first_order(rhs_linear_opinion(&s.x, &self.a, &self.d_vec)?))
    }
    fn damping(&self) -> Option<f64> {
        self.d_vec.iter().copied().reduce(f64::max)
    }
    fn tag(&self) -> &str {
        "linear-od"
    }
}

#[derive(Debug, Clone)]
pub struct Laplacian {
    pub l: Matrix,
}

impl Dynamics for Laplacian {
    fn rhs(&self, s: &KernelState) -> Result<KernelState> {
        Ok(KernelState::first_order(rhs_laplacian(&s.x, &self.l)?))
    }
    fn tag(&self) -> &str {
        "laplacian"
    }
}

#[derive(Debug, Clone)]
pub struct LaplacianSource {
    pub l: Matrix,
    pub b: Matrix,
}

impl Dynamics for LaplacianSource {
    fn rhs(&self, s: &KernelState) -> Result<KernelState> {
        Ok(KernelState::first_order(rhs_laplacian_source(&s.x, &self.l, &self.b)?))
    }
    fn tag(&self) -> &str {
        "laplacian-source"
    }
}

#[derive(Debug, Clone)]
pub struct GraphconTran {
    pub aa: Matrix,
}

impl Dynamics for GraphconTran {
    fn rhs(&self, s: &KernelState) -> Result<KernelState> {
        rhs_graphcon_tran(s, &self.aa)
    }
    fn tag(&self) -> &str {
        "graphcon-tran"
    }
}

#[derive(Debug, Clone)]
pub struct Gread {
    pub l: Matrix,
    pub variant: GreadVariant,
    pub alpha: f64,
    pub beta: f64,
}

impl Dynamics for Gread {
    fn rhs(&self, s: &KernelState) -> Result<KernelState> {
        Ok(KernelState::first_order(rhs_gread(&s.x, &self.l, self.variant, self.alpha, self.beta)?))
    }
    fn tag(&self) -> &str {
        match self.variant {
            GreadVariant::F => "gread-f",
            GreadVariant::FBstar => "gread-fb",
        }
    }
}

/// The reduced scalar equation applied entrywise.
#[derive(Debug, Clone, Copy)]
pub struct Reduced {
    pub u: f64,
    pub d: f64,
    pub alpha: f64,
    pub b: f64,
}

impl Dynamics for Reduced {
    fn rhs(&self, s: &KernelState) -> Result<KernelState> {
        Ok(KernelState::first_order(s.x.map(|y| rhs_reduced_1d(y, self.u, self.d, self.alpha, self.b))))
    }
    fn damping(&self) -> Option<f64> {
        Some(self.d)
    }
    fn tag(&self) -> &str {
        "reduced"
    }
}

/// Wraps a closure as [`Dynamics`].
pub struct FnDynamics<F> {
    pub f: F,
    pub tag: String,
    pub damping: Option<f64>,
}

impl<F> FnDynamics<F>
where
    F: Fn(&KernelState) -> Result<KernelState>,
{
    pub fn new(tag: impl Into<String>, f: F) -> Self {
        FnDynamics { f, tag: tag.into(), damping: None }
    }
}

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(&KernelState) -> Result<KernelState>,
{
    fn rhs(&self, s: &KernelState) -> Result<KernelState> {
        (self.f)(s)
    }
    fn damping(&self) -> Option<f64> {
        self.damping
    }
    fn tag(&self) -> &str {
        &self.tag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_row_stochastic, rng, toy_adjacency, toy_initial_state};
    use crate::graph::{laplacian, laplacian_of, Graph};
    use proptest::prelude::*;
    use rand::Rng;

    fn max_gap(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_is_an_equilibrium() {
        let mut r = rng(1);
        let p = BimpParams::new(1.0, 1.0, Matrix::zeros(3, 2)).unwrap();
        let out = rhs_bimp(&Matrix::zeros(3, 2), &toy_adjacency(), &random_row_stochastic(2, &mut r), &p).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn toy_matrix_and_vector_forms_agree() {
        let mut r = rng(7);
        let x0 = toy_initial_state();
        let ao = random_row_stochastic(3, &mut r);
        let p = BimpParams::new(1.0, 1.0, x0.clone()).unwrap();
        assert_eq!(p.u, 0.25);
        let m = rhs_bimp(&x0, &toy_adjacency(), &ao, &p).unwrap();
        let op = KroneckerOperator::new(&toy_adjacency(), &ao).unwrap();
        let v = rhs_bimp_vectorized(&x0.vec(), &op, &p).unwrap();
        assert!(max_gap(&m.vec(), &v) <= 1e-12);
    }

    #[test]
    fn single_option_reduces_to_agent_coupling() {
        let mut r = rng(9);
        let x = Matrix::random_uniform(3, 1, -1.0, 1.0, &mut r);
        let b = Matrix::random_uniform(3, 1, -1.0, 1.0, &mut r);
        let p = BimpParams::new(0.7, 1.5, b.clone()).unwrap();
        let got = rhs_bimp(&x, &toy_adjacency(), &Matrix::zeros(1, 1), &p).unwrap();
        let a_tilde = toy_adjacency().plus_identity().unwrap();
        let ax = a_tilde.matmul(&x).unwrap();
        for i in 0..3 {
            let z = p.u * ((p.alpha - 1.0) * x[(i, 0)] + ax[(i, 0)]);
            let want = -p.d * x[(i, 0)] + z.tanh() + b[(i, 0)];
            assert!((got[(i, 0)] - want).abs() <= 1e-14);
        }
    }

    #[test]
    fn constant_state_uses_row_sum_four() {
        let mut r = rng(12);
        let op = KroneckerOperator::new(&random_row_stochastic(4, &mut r), &random_row_stochastic(3, &mut r)).unwrap();
        let p = BimpParams::new(1.0, 1.0, Matrix::zeros(4, 3)).unwrap().with_u(0.3).unwrap();
        let c = 0.37;
        let out = rhs_bimp_vectorized(&[c; 12], &op, &p).unwrap();
        let want = -c + (4.0 * 0.3 * c).tanh();
        assert!(out.iter().all(|v| (v - want).abs() <= 1e-14));
        assert!(rhs_bimp_vectorized(&[0.0; 12], &op, &p).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filter_form_alpha_one_is_pure_smoothing() {
        let mut r = rng(13);
        let op = KroneckerOperator::new(&random_row_stochastic(3, &mut r), &random_row_stochastic(2, &mut r)).unwrap();
        let p = BimpParams::new(1.0, 1.0, Matrix::zeros(3, 2)).unwrap();
        let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
        let ax = op.apply(&x).unwrap();
        let got = rhs_bimp_filter_form(&x, &op, &p).unwrap();
        for i in 0..6 {
            assert_eq!(got[i], -x[i] + (p.u * ax[i]).tanh());
        }
    }

    #[test]
    fn bimp_shape_and_finiteness_errors() {
        let p = BimpParams::new(1.0, 1.0, Matrix::zeros(3, 2)).unwrap();
        let x = Matrix::zeros(3, 2);
        assert!(rhs_bimp(&x, &Matrix::identity(2), &Matrix::identity(2), &p).is_err());
        assert!(rhs_bimp(&Matrix::zeros(2, 2), &Matrix::identity(2), &Matrix::identity(2), &p).is_err());
        let op = KroneckerOperator::new(&Matrix::identity(3), &Matrix::identity(2)).unwrap();
        assert!(rhs_bimp_vectorized(&[0.0; 5], &op, &p).is_err());
        assert!(matches!(rhs_bimp_vectorized(&[f64::NAN; 6], &op, &p), Err(Error::NonFinite(_))));
        assert!(BimpParams::new(-1.0, 1.0, Matrix::zeros(1, 1)).is_err());
        assert!(BimpParams::new(1.0, 1.0, Matrix::zeros(1, 1)).unwrap().with_u(0.0).is_err());
    }

    #[test]
    fn linear_opinion_toy_value() {
        let a = toy_adjacency();
        let out = rhs_linear_opinion(&toy_initial_state(), &a, &a.row_sums()).unwrap();
        assert!((out[(0, 0)] - (-0.1076)).abs() < 1e-12);
        let consensus = Matrix::from_rows(&[[0.3, -1.0], [0.3, -1.0], [0.3, -1.0]]).unwrap();
        assert!(rhs_linear_opinion(&consensus, &a, &[1.0; 3]).unwrap().max_abs() <= 1e-15);
        assert!(rhs_linear_opinion(&Matrix::filled(3, 1, 1.0), &a, &[1.0; 3]).unwrap().max_abs() <= 1e-15);
        assert!(rhs_linear_opinion(&consensus, &a, &[1.0, 1.0, 0.9]).is_err());
    }

    #[test]
    fn laplacian_kernels() {
        let x0 = toy_initial_state();
        let l = laplacian(&crate::fixtures::toy_graph());
        let lin = rhs_linear_opinion(&x0, &toy_adjacency(), &toy_adjacency().row_sums()).unwrap();
        assert!(rhs_laplacian(&x0, &l).unwrap().sub(&lin).unwrap().max_abs() <= 1e-15);
        assert!(rhs_laplacian(&Matrix::filled(3, 2, 0.4), &l).unwrap().max_abs() <= 1e-15);
        let two = laplacian(&Graph::from_edge_list(&[(0, 1, 1.0), (1, 0, 1.0)], 2).unwrap());
        let out = rhs_laplacian(&Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(), &two).unwrap();
        assert_eq!(out.values(), &[-2.0, 2.0]);

        assert_eq!(rhs_laplacian_source(&x0, &l, &Matrix::zeros(3, 3)).unwrap(), rhs_laplacian(&x0, &l).unwrap());
        let cons = Matrix::filled(3, 3, 0.5);
        assert!(rhs_laplacian_source(&cons, &l, &x0).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn graphcon_tran_evaluation() {
        let a = toy_adjacency();
        let x0 = toy_initial_state();
        let s = KernelState::second_order(x0.clone(), Matrix::zeros(3, 3));
        let d = rhs_graphcon_tran(&s, &a).unwrap();
        assert_eq!(d.x, Matrix::zeros(3, 3));
        let want = a.sub(&Matrix::identity(3)).unwrap().matmul(&x0).unwrap();
        assert!(d.y.unwrap().sub(&want).unwrap().max_abs() <= 1e-15);
        let eq =
            rhs_graphcon_tran(&KernelState::second_order(Matrix::filled(3, 2, 0.2), Matrix::zeros(3, 2)), &a).unwrap();
        assert!(eq.x.max_abs() == 0.0 && eq.y.unwrap().max_abs() <= 1e-15);
        assert!(rhs_graphcon_tran(&KernelState::first_order(x0), &a).is_err());
    }

    #[test]
    fn gread_f_fixed_points_and_negative_region() {
        let mut r = rng(21);
        let g = crate::fixtures::random_weighted_symmetric_graph(5, 0.4, &mut r);
        let l = laplacian(&g);
        assert_eq!(rhs_gread(&Matrix::zeros(5, 2), &l, GreadVariant::F, 0.0, 0.0).unwrap().max_abs(), 0.0);
        assert!(rhs_gread(&Matrix::filled(5, 2, 1.0), &l, GreadVariant::F, 0.0, 0.0).unwrap().max_abs() <= 1e-14);
        let c = gread_f_constant(&l);
        // below -C the reaction term -|x|(1 + |x|) outweighs the diffusion term
        let x = Matrix::random_uniform(5, 2, -3.0 * c - 2.0, -c - 1.0, &mut r);
        let out = rhs_gread(&x, &l, GreadVariant::F, 0.0, 0.0).unwrap();
        assert!(out.values().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn gread_fb_formula() {
        let l = laplacian_of(&toy_adjacency());
        let x = toy_initial_state();
        let out = rhs_gread(&x, &l, GreadVariant::FBstar, 2.0, 0.5).unwrap();
        let lx = l.matmul(&x).unwrap();
        let want = lx.scale(-1.5).add(&x.scale(0.5)).unwrap();
        assert!(out.sub(&want).unwrap().max_abs() <= 1e-15);
    }

    #[test]
    fn reduced_equilibria() {
        assert_eq!(rhs_reduced_1d(0.0, 0.5, 1.0, 1.0, 0.0), 0.0);
        // fixed-point oracle for y = tanh(2y)
        let mut y: f64 = 1.0;
        for _ in 0..200 {
            y = (2.0 * y).tanh();
        }
        assert!((y - 0.9575).abs() < 1e-4);
        assert!(rhs_reduced_1d(y, 0.5, 1.0, 1.0, 0.0).abs() < 1e-12);
        assert!(rhs_reduced_1d(-y, 0.5, 1.0, 1.0, 0.0).abs() < 1e-12);
        let h = 1e-6;
        let fd =
            (rhs_reduced_1d(0.3 + h, 0.4, 1.0, 1.0, 0.1) - rhs_reduced_1d(0.3 - h, 0.4, 1.0, 1.0, 0.1)) / (2.0 * h);
        assert!((fd - reduced_1d_slope(0.3, 0.4, 1.0, 1.0)).abs() < 1e-8);
    }

    #[test]
    fn validity_grouping() {
        for s in SaturationKind::ALL {
            let valid = nod_validity(s).is_valid();
            let expected = matches!(s, SaturationKind::Tanh | SaturationKind::Softsign | SaturationKind::Arctan);
            assert_eq!(valid, expected, "{s}: {:?}", nod_validity(s));
        }
        match nod_validity(SaturationKind::Sigmoid) {
            Validity::Invalid(reason) => assert!(reason.contains("does not pass through the origin")),
            Validity::Valid => unreachable!(),
        }
    }

    #[test]
    fn saturation_derivatives_match_differences() {
        for s in SaturationKind::ALL {
            for &x in &[-1.3, -0.2, 0.4, 2.1] {
                let h = 1e-6;
                let fd = (s.apply(x + h) - s.apply(x - h)) / (2.0 * h);
                assert!((fd - s.derivative(x)).abs() < 1e-7, "{s} at {x}");
            }
            assert_eq!(s.as_str().parse::<SaturationKind>().unwrap(), s);
        }
        assert!("swish".parse::<SaturationKind>().is_err());
    }

    #[test]
    fn kernel_tags_round_trip() {
        for k in KernelKind::ALL {
            assert_eq!(k.as_str().parse::<KernelKind>().unwrap(), k);
        }
        assert!("grand".parse::<KernelKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn three_forms_agree(na in 1usize..9, no in 1usize..6, alpha in 0.0f64..3.0, d in 0.0f64..2.0, seed in any::<u64>()) {
            let mut r = rng(seed);
            let aa = random_row_stochastic(na, &mut r);
            let ao = random_row_stochastic(no, &mut r);
            let x = Matrix::random_uniform(na, no, -2.0, 2.0, &mut r);
            let b = Matrix::random_uniform(na, no, -1.0, 1.0, &mut r);
            let p = BimpParams::new(d, alpha, b).unwrap().with_u(r.gen_range(0.05..1.0)).unwrap();
            let op = KroneckerOperator::new(&aa, &ao).unwrap();
            let m = rhs_bimp(&x, &aa, &ao, &p).unwrap().vec();
            let v = rhs_bimp_vectorized(&x.vec(), &op, &p).unwrap();
            let f = rhs_bimp_filter_form(&x.vec(), &op, &p).unwrap();
            prop_assert!(max_gap(&m, &v) <= 1e-12);
            prop_assert!(max_gap(&v, &f) <= 1e-12);
        }

        #[test]
        fn linear_opinion_consensus_is_equilibrium(n in 1usize..8, no in 1usize..4, seed in any::<u64>()) {
            let mut r = rng(seed);
            let a = Matrix::random_uniform(n, n, 0.0, 2.0, &mut r);
            let row: Vec<f64> = (0..no).map(|_| r.gen_range(-5.0..5.0)).collect();
            let x = Matrix::from_rows(&vec![row; n]).unwrap();
            let out = rhs_linear_opinion(&x, &a, &a.row_sums()).unwrap();
            prop_assert!(out.max_abs() <= 1e-12);
        }
    }
}
