//! Dense complex matrices and vectors.
//!
//! Everything downstream (kernels, states, limits) runs on the two small
//! value types defined here. Matrices are stored row-major. The Hermitian
//! eigendecomposition is the only spectral primitive; matrix functions,
//! PSD certification and square roots are all routed through [`eigh`].

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default relative tolerance for positivity checks.
pub const DEFAULT_PSD_TOL: f64 = 1e-10;

/// Relative floor below which an eigenvalue is treated as zero for `log`.
pub const LOG_EIGEN_FLOOR: f64 = 1e-14;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct CVector {
    data: Vec<C64>,
}

impl CVector {
    pub fn new(data: Vec<C64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![ZERO; dim])
    }

    /// `k`-th standard basis vector of `C^dim`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[k] = ONE;
        v
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self::new(values.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    /// Inner product `<self, other>`, conjugate-linear in `self`.
    pub fn inner(&self, other: &CVector) -> C64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(&other.data)
            .fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: C64) -> CVector {
        CVector::new(self.data.iter().map(|z| z * s).collect())
    }

    pub fn add(&self, other: &CVector) -> CVector {
        CVector::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Rank-one operator `self * other^*`.
    pub fn outer(&self, other: &CVector) -> CMatrix {
        CMatrix::from_fn(self.dim(), other.dim(), |i, j| {
            self.data[i] * other.data[j].conj()
        })
    }

    /// Tensor (Kronecker) product, `self` index most significant.
    pub fn kron(&self, other: &CVector) -> CVector {
        let mut out = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.data {
            for b in &other.data {
                out.push(a * b);
            }
        }
        CVector::new(out)
    }
}

impl std::ops::Index<usize> for CVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

/// Dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must have the same length.
    pub fn from_rows(rows: Vec<Vec<C64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.into_iter().flatten().collect())
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
                .collect(),
        )
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| ZERO)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
    }

    /// All-ones matrix, the unit of the Schur product.
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| ONE)
    }

    pub fn diag(values: &[C64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { ZERO })
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                ZERO
            }
        })
    }

    /// Matrix unit `e_p e_q^*`.
    pub fn unit(n: usize, p: usize, q: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == p && j == q { ONE } else { ZERO })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> CVector {
        CVector::new(self.data[i * self.cols..(i + 1) * self.cols].to_vec())
    }

    pub fn column(&self, j: usize) -> CVector {
        CVector::new((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn conj(&self) -> CMatrix {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        self.map(|z| z * s)
    }

    fn zip_with(
        &self,
        other: &CMatrix,
        what: &str,
        f: impl Fn(C64, C64) -> C64,
    ) -> Result<CMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn apply(&self, v: &CVector) -> Result<CVector> {
        if self.cols != v.dim() {
            return Err(Error::Dimension(format!(
                "apply: {:?} on vector of dim {}",
                self.shape(),
                v.dim()
            )));
        }
        Ok(CVector::new(
            (0..self.rows)
                .map(|i| (0..self.cols).fold(ZERO, |acc, j| acc + self.get(i, j) * v[j]))
                .collect(),
        ))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).fold(ZERO, |acc, i| acc + self.get(i, i))
    }

    /// Sum of all entries, accumulated in row-major order.
    pub fn sum(&self) -> C64 {
        self.data.iter().fold(ZERO, |acc, z| acc + z)
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Kronecker product, `self` index most significant.
    pub fn kron(&self, other: &CMatrix) -> CMatrix {
        let (r, c) = (self.rows * other.rows, self.cols * other.cols);
        CMatrix::from_fn(r, c, |i, j| {
            self.get(i / other.rows, j / other.cols) * other.get(i % other.rows, j % other.cols)
        })
    }

    /// Entrywise deviation from Hermiticity, `max |A - A^*|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        dev
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> CMatrix {
        CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

/// Schur (Hadamard) product: entry `(i,j)` is `a(i,j) * b(i,j)`.
pub fn hadamard(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    a.zip_with(b, "hadamard", |x, y| x * y)
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_radius(&self) -> f64 {
        self.min().abs().max(self.max().abs())
    }

    /// `V diag(f(λ)) V^*`.
    pub fn reconstruct(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        CMatrix::from_fn(n, n, |i, j| {
            (0..n).fold(ZERO, |acc, k| {
                acc + v.get(i, k) * fv[k] * v.get(j, k).conj()
            })
        })
    }
}

fn hermitian_allowance(a: &CMatrix, tol: f64) -> f64 {
    tol * a.max_abs().max(1.0)
}

/// Eigendecomposition of a matrix that is Hermitian within `tol` (relative
/// to `max(1, max|A_ij|)`). The Hermitian part is decomposed.
pub fn eigh(a: &CMatrix, tol: f64) -> Result<HermitianEigen> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "eigh needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let deviation = a.hermitian_deviation();
    let allowed = hermitian_allowance(a, tol);
    if deviation > allowed {
        return Err(Error::NotHermitian { deviation, allowed });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(HermitianEigen {
            values: vec![],
            vectors: CMatrix::zeros(0, 0),
        });
    }
    let sym = CMatrix::from_fn(n, n, |i, j| (a.get(i, j) + a.get(j, i).conj()) * 0.5);
    let eig = SymmetricEigen::new(sym.to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEigen { values, vectors })
}

/// Outcome of a positive-semidefiniteness check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PsdReport {
    pub psd: bool,
    pub hermitian: bool,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Certifies `A >= 0`: Hermitian within `tol * max(1, max|A_ij|)` and
/// smallest eigenvalue at least `-tol * max(1, max|λ|)`.
pub fn is_psd(a: &CMatrix, tol: f64) -> Result<PsdReport> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "is_psd needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let hermitian = a.hermitian_deviation() <= hermitian_allowance(a, tol);
    // Eigenvalues of the Hermitian part are still reported for non-Hermitian input.
    let eig = eigh(a, f64::INFINITY)?;
    let floor = -tol * eig.spectral_radius().max(1.0);
    Ok(PsdReport {
        psd: hermitian && eig.min() >= floor,
        hermitian,
        min_eigenvalue: eig.min(),
        max_eigenvalue: eig.max(),
    })
}

/// `f(A)` for Hermitian `A` through its eigendecomposition.
pub fn hermitian_function(a: &CMatrix, f: impl Fn(f64) -> f64) -> Result<CMatrix> {
    let eig = eigh(a, DEFAULT_PSD_TOL)?;
    Ok(eig.reconstruct(f))
}

/// Principal logarithm of a Hermitian positive definite matrix.
pub fn hermitian_log(a: &CMatrix) -> Result<CMatrix> {
    let eig = eigh(a, DEFAULT_PSD_TOL)?;
    let floor = LOG_EIGEN_FLOOR * eig.max().max(0.0);
    if eig.min() <= floor || eig.max() <= 0.0 {
        return Err(Error::Domain(format!(
            "log needs positive eigenvalues, smallest is {:.3e} (floor {floor:.3e})",
            eig.min()
        )));
    }
    Ok(eig.reconstruct(f64::ln))
}

pub fn hermitian_exp(a: &CMatrix) -> Result<CMatrix> {
    hermitian_function(a, f64::exp)
}

/// Projects onto the Hermitian part, `(A + A^*)/2`.
pub fn hermitian_part(a: &CMatrix) -> Result<CMatrix> {
    Ok(a.add(&a.adjoint())?.scale(C64::new(0.5, 0.0)))
}

/// Max entrywise deviation `|M^* M - I|`; zero for an isometry.
pub fn isometry_defect(m: &CMatrix) -> f64 {
    let g = m.adjoint().matmul(m).expect("shapes agree");
    g.sub(&CMatrix::identity(m.cols()))
        .expect("square")
        .max_abs()
}

/// Relative error `|a - b| / max(1, |b|)`.
pub fn rel_err(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

// Serialization: complex numbers are `[re, im]`, matrices nested row arrays.

#[derive(Serialize, Deserialize)]
struct Pair(f64, f64);

pub fn c64_to_pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// `serialize_with` helper writing a complex number as `[re, im]`.
pub fn serialize_c64<S: Serializer>(z: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    c64_to_pair(*z).serialize(s)
}

impl Serialize for CVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.data.iter().map(|z| Pair(z.re, z.im)))
    }
}

impl<'de> Deserialize<'de> for CVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<Pair> = Vec::deserialize(d)?;
        Ok(CVector::new(
            v.into_iter().map(|Pair(re, im)| C64::new(re, im)).collect(),
        ))
    }
}

impl Serialize for CMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq((0..self.rows).map(|i| {
            self.data[i * self.cols..(i + 1) * self.cols]
                .iter()
                .map(|z| Pair(z.re, z.im))
                .collect::<Vec<_>>()
        }))
    }
}

impl<'de> Deserialize<'de> for CMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<Pair>> = Vec::deserialize(d)?;
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(|Pair(re, im)| C64::new(re, im)).collect())
            .collect();
        CMatrix::from_rows(rows).map_err(D::Error::custom)
    }
}
