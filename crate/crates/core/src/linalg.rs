//! Small dense linear algebra: vectors, symmetric matrices, a cyclic Jacobi
//! eigensolver, minimum-norm least squares and the Householder rotation that
//! maps a vector onto the first coordinate axis.
//!
//! Dimensions in this crate are small (d <= 64), so everything is dense and
//! allocation-light. No sparse path exists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue cut-off below which directions are treated as null
/// by [`solve_least_squares`].
pub const NULL_SPACE_TOL: f64 = 1e-10;

const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// A dense real vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("vector must have positive dimension"));
        }
        if let Some(i) = entries.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("vector entry {i} is not finite")));
        }
        Ok(RealVector(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        RealVector(vec![0.0; dim])
    }

    /// Unit vector along axis `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        RealVector(v)
    }

    /// Builds a vector without the finiteness check. Callers guarantee it.
    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        RealVector(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &RealVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn add(&self, other: &RealVector) -> RealVector {
        RealVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &RealVector) -> RealVector {
        RealVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scaled(&self, c: f64) -> RealVector {
        RealVector(self.0.iter().map(|a| a * c).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl std::ops::Index<usize> for RealVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric d x d matrix stored in full, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from row-major entries, replacing each
    /// off-diagonal pair by its mean.
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let mut m = SymMatrix { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &x) in diag.iter().enumerate() {
            data[i * dim + i] = x;
        }
        Self::from_rows(dim, data)
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = m;
                self.data[j * n + i] = m;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += weight * x x^T`.
    pub fn add_outer(&mut self, x: &[f64], weight: f64) {
        let n = self.dim;
        for i in 0..n {
            let wi = weight * x[i];
            for j in 0..n {
                self.data[i * n + j] += wi * x[j];
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n).map(|i| dot(&self.data[i * n..(i + 1) * n], v)).collect()
    }

    /// `w^T M w`.
    pub fn quad_form(&self, w: &[f64]) -> f64 {
        dot(w, &self.matvec(w))
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().any(|x| !x.is_finite()) {
            Err(Error::invalid("matrix has non-finite entries"))
        } else {
            Ok(())
        }
    }
}

/// Eigen-decomposition of a symmetric matrix. `values` ascend; column `k` of
/// `vectors` (row-major d x d) is the unit eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    vectors: Vec<f64>,
    dim: usize,
}

impl SymEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.dim).map(|r| self.vectors[r * self.dim + k]).collect()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.dim - 1]
    }
}

/// Cyclic Jacobi eigen-decomposition. Sweeps until the off-diagonal
/// Frobenius norm drops below `1e-12 * ||m||_F`.
pub fn sym_eigen(m: &SymMatrix) -> Result<SymEigen> {
    m.check_finite()?;
    let n = m.dim;
    let mut a = m.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let target = JACOBI_REL_TOL * m.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J, touching only rows/columns p and q.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + new_col] = v[r * n + old_col];
        }
    }
    Ok(SymEigen {
        values,
        vectors,
        dim: n,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eigen(m)?.min())
}

/// Minimum-norm solution of `gram * beta = moment`, together with the
/// eigen-decomposition it was computed from.
pub fn solve_least_squares_with_eigen(gram: &SymMatrix, moment: &RealVector) -> Result<(RealVector, SymEigen)> {
    if gram.dim() != moment.dim() {
        return Err(Error::invalid(format!(
            "gram is {}x{} but moment has dimension {}",
            gram.dim(),
            gram.dim(),
            moment.dim()
        )));
    }
    let eig = sym_eigen(gram)?;
    if eig.min() < -1e-9 * (1.0 + gram.max_abs()) {
        return Err(Error::invalid(format!(
            "gram is not positive semidefinite (min eigenvalue {})",
            eig.min()
        )));
    }
    let n = gram.dim();
    let mut beta = vec![0.0; n];
    let lmax = eig.max();
    if lmax > 0.0 {
        let cutoff = NULL_SPACE_TOL * lmax;
        for k in 0..n {
            let lambda = eig.values[k];
            if lambda <= cutoff {
                continue;
            }
            let vk = eig.vector(k);
            let coef = dot(&vk, moment.as_slice()) / lambda;
            for (b, x) in beta.iter_mut().zip(&vk) {
                *b += coef * x;
            }
        }
    }
    Ok((RealVector(beta), eig))
}

/// Minimum-norm least-squares solve: directions with eigenvalue at most
/// `1e-10 * lambda_max` are projected out.
pub fn solve_least_squares(gram: &SymMatrix, moment: &RealVector) -> Result<RealVector> {
    solve_least_squares_with_eigen(gram, moment).map(|(b, _)| b)
}

/// Orthonormal d x d matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl OrthonormalMatrix {
    pub fn identity(dim: usize) -> Self {
        OrthonormalMatrix {
            dim,
            data: SymMatrix::identity(dim).data,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// `Q v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n).map(|i| dot(&self.data[i * n..(i + 1) * n], v)).collect()
    }

    /// `Q^T v = Q^{-1} v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for (i, &vi) in v.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.data[i * n + j] * vi;
            }
        }
        out
    }

    /// Max-abs deviation of `Q^T Q` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| self.get(k, i) * self.get(k, j)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

/// Orthonormal `Q` with `Q v = (||v||, 0, ..., 0)`, built from one
/// Householder reflection. Vectors with `||v|| < 1e-12` map to the identity.
pub fn rotation_to_first_axis(v: &RealVector) -> Result<OrthonormalMatrix> {
    let x = v.as_slice();
    if x.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("rotation input is not finite"));
    }
    let n = x.len();
    let norm = v.norm();
    if norm < 1e-12 {
        return Ok(OrthonormalMatrix::identity(n));
    }
    // For x_1 > 0 use u = x + |x| e1 and Q = 2uu^T/|u|^2 - I, which avoids
    // cancellation; otherwise u = x - |x| e1 and Q = I - 2uu^T/|u|^2.
    let flip = x[0] > 0.0;
    let mut u = x.to_vec();
    u[0] += if flip { norm } else { -norm };
    let uu = dot(&u, &u);
    let sign = if flip { -1.0 } else { 1.0 };
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            data[i * n + j] = sign * (id - 2.0 * u[i] * u[j] / uu);
        }
    }
    Ok(OrthonormalMatrix { dim: n, data })
}
