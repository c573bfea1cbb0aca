//! The effective adjacency `(Ao + I) kron (Aa + I)` as a matrix-free
//! operator, power iteration, and a Jacobi eigensolver for small symmetric
//! matrices.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::fixtures;
use crate::matrix::{dot, vec_max_abs, Matrix};

/// Largest `N_a * N_o` for which [`KroneckerOperator::materialize`] is allowed.
pub const MAX_MATERIALIZED_DIM: usize = 4096;

/// Matrix-free `(Ao + I) kron (Aa + I)`, acting on column-stacked `vec(X)`
/// with `X` of shape `N_a x N_o`.
#[derive(Debug, Clone)]
pub struct KroneckerOperator {
    ao_plus_i: Matrix,
    aa_plus_i: Matrix,
}

impl KroneckerOperator {
    /// From the communication and option adjacencies (identity is added here).
    pub fn new(aa: &Matrix, ao: &Matrix) -> Result<Self> {
        Ok(KroneckerOperator { aa_plus_i: aa.plus_identity()?, ao_plus_i: ao.plus_identity()? })
    }

    /// From factors that already include the identity.
    pub fn from_factors(aa_plus_i: Matrix, ao_plus_i: Matrix) -> Result<Self> {
        if !aa_plus_i.is_square() || !ao_plus_i.is_square() {
            return Err(Error::ShapeMismatch {
                op: "KroneckerOperator",
                detail: format!("factors {:?} and {:?} must be square", aa_plus_i.shape(), ao_plus_i.shape()),
            });
        }
        Ok(KroneckerOperator { ao_plus_i, aa_plus_i })
    }

    pub fn n_agents(&self) -> usize {
        self.aa_plus_i.rows()
    }

    pub fn n_options(&self) -> usize {
        self.ao_plus_i.rows()
    }

    pub fn dim(&self) -> usize {
        self.n_agents() * self.n_options()
    }

    pub fn aa_plus_i(&self) -> &Matrix {
        &self.aa_plus_i
    }

    pub fn ao_plus_i(&self) -> &Matrix {
        &self.ao_plus_i
    }

    /// `vec((Aa + I) unvec(x) (Ao + I)^T)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_with(Exec::Sequential, x)
    }

    /// As [`apply`](Self::apply), computing output rows under `exec`.
    pub fn apply_with(&self, exec: Exec, x: &[f64]) -> Result<Vec<f64>> {
        let (na, no) = (self.n_agents(), self.n_options());
        if x.len() != na * no {
            return Err(Error::ShapeMismatch {
                op: "kron_matvec",
                detail: format!("vector of length {} for a {na}x{no} state", x.len()),
            });
        }
        let xm = Matrix::unvec(x, na, no)?;
        // XB = X (Ao + I)^T, then rows of (Aa + I) XB
        let xb = xm.matmul_transposed(&self.ao_plus_i)?;
        let mut y = vec![0.0; na * no];
        exec::fill_chunks(exec, &mut y, no, |i, out| {
            for (k, &a) in self.aa_plus_i.row(i).iter().enumerate() {
                if a != 0.0 {
                    for (o, &v) in out.iter_mut().zip(xb.row(k)) {
                        *o += a * v;
                    }
                }
            }
        });
        Ok(Matrix::from_raw(na, no, y).vec())
    }

    /// Dense `N_a N_o` square matrix; test paths only.
    pub fn materialize(&self) -> Result<Matrix> {
        if self.dim() > MAX_MATERIALIZED_DIM {
            return Err(Error::InvalidParameter(format!(
                "refusing to materialize a {0}x{0} effective adjacency",
                self.dim()
            )));
        }
        Ok(self.ao_plus_i.kron(&self.aa_plus_i))
    }
}

/// Leading eigenpair estimate.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub eigenvalue: f64,
    /// Unit 2-norm.
    pub eigenvector: Vec<f64>,
    pub iterations: usize,
    /// `||A v - lambda v||_inf`
    pub residual: f64,
}

/// Power iteration with a Rayleigh-quotient eigenvalue estimate.
///
/// Starts from `1/sqrt(dim)`; if that run does not reach `tol` within
/// `max_iter`, restarts once from a seeded random vector.
pub fn power_iteration<F>(apply: F, dim: usize, tol: f64, max_iter: usize) -> Result<SpectralResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Err(Error::InvalidParameter("power iteration needs dim >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let start = vec![1.0 / (dim as f64).sqrt(); dim];
    let first = run_power(&apply, start, tol, max_iter)?;
    if first.residual <= tol {
        return Ok(first);
    }
    let mut rng = fixtures::rng(0x5eed);
    let restart: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect();
    let second = run_power(&apply, restart, tol, max_iter)?;
    if second.residual <= tol {
        return Ok(SpectralResult { iterations: first.iterations + second.iterations, ..second });
    }
    Err(Error::NonConvergence { iterations: first.iterations + second.iterations, residual: second.residual })
}

fn run_power<F>(apply: &F, mut v: Vec<f64>, tol: f64, max_iter: usize) -> Result<SpectralResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    normalize(&mut v);
    let mut best = SpectralResult { eigenvalue: 0.0, eigenvector: v.clone(), iterations: 0, residual: f64::INFINITY };
    for it in 1..=max_iter {
        let av = apply(&v)?;
        if av.len() != v.len() {
            return Err(Error::ShapeMismatch {
                op: "power_iteration",
                detail: format!("operator returned {} entries for dim {}", av.len(), v.len()),
            });
        }
        let lambda = dot(&v, &av);
        let residual = vec_max_abs(&av.iter().zip(&v).map(|(a, x)| a - lambda * x).collect::<Vec<_>>());
        if !lambda.is_finite() {
            return Err(Error::NonFinite("power_iteration"));
        }
        best = SpectralResult { eigenvalue: lambda, eigenvector: v.clone(), iterations: it, residual };
        if residual <= tol {
            break;
        }
        v = av;
        if normalize(&mut v) == 0.0 {
            // v is in the kernel; nothing more to learn from this start
            break;
        }
    }
    Ok(best)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns ascending eigenvalues and the matching orthonormal eigenvectors
/// as columns. Each eigenvector is signed so its entries sum to a
/// nonnegative value.
pub fn symmetric_eigendecomposition(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch { op: "symmetric_eigendecomposition", detail: format!("{:?}", m.shape()) });
    }
    let n = m.rows();
    let scale = m.max_abs().max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > 1e-10 * scale {
                return Err(Error::NotSymmetric { row: i, col: j, gap });
            }
        }
    }

    let mut a = m.clone();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let sum: f64 = col.iter().sum();
        let first = col.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
        let sign = if sum.abs() > 1e-12 { sum.signum() } else { first.signum() };
        for k in 0..n {
            vectors[(k, dst)] = sign * col[k];
        }
    }
    Ok((values, vectors))
}
