//! Small dense linear algebra for two-qubit work.
//!
//! Everything here is fixed-size and tiny (at most 16×16), so plain arrays
//! and textbook algorithms are enough: cyclic Jacobi for Hermitian
//! eigenproblems and partially pivoted Gaussian elimination for the
//! tomography normal equations.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Off-diagonal Frobenius norm at which Jacobi sweeps stop.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Square complex matrix of fixed dimension, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat<const N: usize>(pub [[C64; N]; N]);

pub type Mat2 = Mat<2>;
pub type Mat4 = Mat<4>;

impl<const N: usize> Default for Mat<N> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<const N: usize> Mat<N> {
    pub fn zeros() -> Self {
        Mat([[ZERO; N]; N])
    }

    pub fn identity() -> Self {
        Self::from_fn(|i, j| if i == j { ONE } else { ZERO })
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn from_real(rows: [[f64; N]; N]) -> Self {
        Self::from_fn(|i, j| C64::new(rows[i][j], 0.0))
    }

    /// |v⟩⟨v|
    pub fn outer(v: &[C64; N]) -> Self {
        Self::from_fn(|i, j| v[i] * v[j].conj())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i].conj())
    }

    pub fn conj(&self) -> Self {
        Self::from_fn(|i, j| self.0[i][j].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i])
    }

    pub fn trace(&self) -> C64 {
        (0..N).map(|i| self.0[i][i]).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn scale_c(&self, s: C64) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    /// Tr[self · other] without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let mut acc = ZERO;
        for i in 0..N {
            for k in 0..N {
                acc += self.0[i][k] * other.0[k][i];
            }
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest deviation from Hermiticity, max |A_ij − conj(A_ji)|.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..N {
            for j in 0..N {
                worst = worst.max((self.0[i][j] - self.0[j][i].conj()).norm());
            }
        }
        worst
    }

    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()).scale(0.5)
    }

    pub fn mul_vec(&self, v: &[C64; N]) -> [C64; N] {
        let mut out = [ZERO; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..N).map(|k| self.0[i][k] * v[k]).sum();
        }
        out
    }

    pub fn column(&self, j: usize) -> [C64; N] {
        let mut out = [ZERO; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i][j];
        }
        out
    }

    /// Eigen-decomposition of a Hermitian matrix.
    ///
    /// Only the lower triangle's Hermitian completion is trusted; the input
    /// is symmetrised first. Eigenvalues are sorted in descending order and
    /// the eigenvectors are the matching columns of the returned matrix.
    pub fn eigh(&self) -> Result<(Eigenvalues<N>, Self)> {
        jacobi_eigh(&self.hermitian_part())
    }

    /// Applies `f` to the eigenvalues of a Hermitian matrix.
    pub fn hermitian_map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let (vals, vecs) = self.eigh()?;
        let mut out = Self::zeros();
        for k in 0..N {
            let fk = f(vals[k]);
            for i in 0..N {
                for j in 0..N {
                    out.0[i][j] += vecs.0[i][k] * vecs.0[j][k].conj() * fk;
                }
            }
        }
        Ok(out)
    }
}

pub type Eigenvalues<const N: usize> = [f64; N];

impl<const N: usize> Index<(usize, usize)> for Mat<N> {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.0[i][j]
    }
}

impl<const N: usize> IndexMut<(usize, usize)> for Mat<N> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.0[i][j]
    }
}

impl<const N: usize> Add for Mat<N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl<const N: usize> Sub for Mat<N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl<const N: usize> Mul for Mat<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| (0..N).map(|k| self.0[i][k] * rhs.0[k][j]).sum())
    }
}

/// Kronecker product of two single-qubit operators.
pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|i, j| a.0[i / 2][j / 2] * b.0[i % 2][j % 2])
}

pub fn pauli_x() -> Mat2 {
    Mat([[ZERO, ONE], [ONE, ZERO]])
}

pub fn pauli_y() -> Mat2 {
    Mat([[ZERO, -I], [I, ZERO]])
}

pub fn pauli_z() -> Mat2 {
    Mat([[ONE, ZERO], [ZERO, -ONE]])
}

/// σ₀..σ₃ = I, X, Y, Z.
pub fn paulis() -> [Mat2; 4] {
    [Mat2::identity(), pauli_x(), pauli_y(), pauli_z()]
}

fn jacobi_eigh<const N: usize>(m: &Mat<N>) -> Result<(Eigenvalues<N>, Mat<N>)> {
    let mut a = *m;
    let mut v = Mat::<N>::identity();
    let scale = m.frobenius_norm().max(1.0);

    let off_norm = |a: &Mat<N>| {
        let mut s = 0.0;
        for i in 0..N {
            for j in 0..N {
                if i != j {
                    s += a.0[i][j].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) > JACOBI_TOLERANCE * scale {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps (off-diagonal norm {:.3e}, matrix norm {:.3e})",
                off_norm(&a),
                scale
            )));
        }
        sweeps += 1;
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a.0[p][q];
                let r = apq.norm();
                if r <= f64::MIN_POSITIVE {
                    continue;
                }
                // Rotate the phase of index q so that a_pq becomes real.
                let phase = apq / r;
                for k in 0..N {
                    a.0[k][q] *= phase.conj();
                }
                for k in 0..N {
                    a.0[q][k] *= phase;
                }
                for k in 0..N {
                    v.0[k][q] *= phase.conj();
                }
                // Standard real Jacobi rotation on (p, q).
                let app = a.0[p][p].re;
                let aqq = a.0[q][q].re;
                let theta = (aqq - app) / (2.0 * r);
                // signum(0.0) is 1.0, which gives the 45° rotation.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a.0[k][p];
                    let akq = a.0[k][q];
                    a.0[k][p] = akp * c - akq * s;
                    a.0[k][q] = akp * s + akq * c;
                }
                for k in 0..N {
                    let apk = a.0[p][k];
                    let aqk = a.0[q][k];
                    a.0[p][k] = apk * c - aqk * s;
                    a.0[q][k] = apk * s + aqk * c;
                }
                a.0[p][q] = ZERO;
                a.0[q][p] = ZERO;
                for k in 0..N {
                    let vkp = v.0[k][p];
                    let vkq = v.0[k][q];
                    v.0[k][p] = vkp * c - vkq * s;
                    v.0[k][q] = vkp * s + vkq * c;
                }
            }
        }
    }

    let mut order: [usize; N] = std::array::from_fn(|i| i);
    order.sort_by(|&i, &j| a.0[j][j].re.total_cmp(&a.0[i][i].re));
    let vals = std::array::from_fn(|k| a.0[order[k]][order[k]].re);
    let vecs = Mat::from_fn(|i, k| v.0[i][order[k]]);
    Ok((vals, vecs))
}

/// Rank of a real dense matrix by Gaussian elimination with partial pivoting.
pub fn rank(rows: &[Vec<f64>], tol: f64) -> usize {
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let n_rows = a.len();
    let n_cols = a.first().map_or(0, |r| r.len());
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let mut rank = 0;
    for col in 0..n_cols {
        if rank == n_rows {
            break;
        }
        let pivot = (rank..n_rows)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= tol * scale {
            continue;
        }
        a.swap(rank, pivot);
        for r in (rank + 1)..n_rows {
            let f = a[r][col] / a[rank][col];
            if f != 0.0 {
                for c in col..n_cols {
                    a[r][c] -= f * a[rank][c];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Solves the square system `a x = b` with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Input(format!("solve: expected a {n}×{n} system")));
    }
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::Numerical(format!(
                "singular system: no pivot in column {col}"
            )));
        }
        m.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Ok((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Least-squares solution of an overdetermined system via the normal
/// equations. Fails if the design matrix is rank deficient.
pub fn least_squares(design: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n_cols = design.first().map_or(0, |r| r.len());
    let r = rank(design, 1e-10);
    if r < n_cols {
        return Err(Error::Numerical(format!(
            "rank-deficient design matrix: rank {r} < {n_cols}"
        )));
    }
    let mut ata = vec![vec![0.0; n_cols]; n_cols];
    let mut atb = vec![0.0; n_cols];
    for (row, &y) in design.iter().zip(rhs) {
        for i in 0..n_cols {
            atb[i] += row[i] * y;
            for j in 0..n_cols {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    solve(&ata, &atb)
}
