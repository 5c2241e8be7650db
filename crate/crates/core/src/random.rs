//! Seeded random matrices, vectors and fiber families.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. Complex Gaussian entries draw the real part
//! first, then the imaginary part, each from `rand_distr::StandardNormal`
//! scaled by `1/sqrt(2)`. Matrices are filled row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::algebra::{CMatrix, CVector, C64, ZERO};
use crate::kernel::FiberFamily;
use crate::site::Site;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CVector {
    CVector::new((0..dim).map(|_| complex_gaussian(rng)).collect())
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let m = random_matrix(rng, n, n);
    CMatrix::from_fn(n, n, |i, j| (m.get(i, j) + m.get(j, i).conj()) * 0.5)
}

/// `M^* M` with `M` a `rank x n` Gaussian matrix.
pub fn random_gram<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> CMatrix {
    let m = random_matrix(rng, rank, n);
    m.adjoint().matmul(&m).expect("shapes agree")
}

/// Hermitian positive definite matrix with eigenvalues spread over
/// `[0.1, 10]` (log-uniform).
pub fn random_positive_definite<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let u = random_unitary(rng, n);
    let vals: Vec<f64> = (0..n)
        .map(|_| 10f64.powf(rng.random_range(-1.0..1.0)))
        .collect();
    u.adjoint()
        .matmul(&CMatrix::diag_real(&vals))
        .and_then(|m| m.matmul(&u))
        .expect("shapes agree")
}

/// Haar-like unitary: modified Gram-Schmidt on the columns of a Gaussian
/// matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    loop {
        let g = random_matrix(rng, n, n);
        if let Some(q) = orthonormalize_columns(&g) {
            return q;
        }
    }
}

/// Modified Gram-Schmidt; `None` if the columns are (numerically) dependent.
pub fn orthonormalize_columns(m: &CMatrix) -> Option<CMatrix> {
    let mut cols: Vec<CVector> = (0..m.cols()).map(|j| m.column(j)).collect();
    for j in 0..cols.len() {
        for k in 0..j {
            let proj = cols[k].inner(&cols[j]);
            let sub = cols[k].scale(-proj);
            cols[j] = cols[j].add(&sub);
        }
        let norm = cols[j].norm();
        if norm < 1e-10 {
            return None;
        }
        cols[j] = cols[j].scale(C64::new(1.0 / norm, 0.0));
    }
    Some(CMatrix::from_fn(m.rows(), m.cols(), |i, j| cols[j][i]))
}

/// Random observable factor: a Gaussian matrix, not necessarily Hermitian.
pub fn random_observable<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMatrix {
    random_matrix(rng, d, d)
}

/// Random positive observable `c^* c`.
pub fn random_positive_observable<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMatrix {
    let c = random_matrix(rng, d, d);
    c.adjoint().matmul(&c).expect("square")
}

/// Family on the given sites with independent complex Gaussian fiber vectors.
pub fn random_family<R: Rng + ?Sized>(
    rng: &mut R,
    sites: &[Site],
    fiber_dim: usize,
    index_size: usize,
) -> FiberFamily {
    let vectors = sites
        .iter()
        .map(|_| {
            (0..index_size)
                .map(|_| loop {
                    let v = random_vector(rng, fiber_dim);
                    if v.norm() > 1e-6 {
                        break v;
                    }
                })
                .collect()
        })
        .collect();
    FiberFamily::new(sites.to_vec(), fiber_dim, index_size, vectors)
        .expect("random vectors are valid")
}

/// Family whose fibers at every site carry an orthonormal set, rotated by a
/// random unitary per site.
pub fn random_orthonormal_family<R: Rng + ?Sized>(
    rng: &mut R,
    sites: &[Site],
    fiber_dim: usize,
    index_size: usize,
) -> FiberFamily {
    assert!(index_size <= fiber_dim);
    let vectors = sites
        .iter()
        .map(|_| {
            let u = random_unitary(rng, fiber_dim);
            (0..index_size).map(|i| u.column(i)).collect()
        })
        .collect();
    FiberFamily::new(sites.to_vec(), fiber_dim, index_size, vectors)
        .expect("orthonormal vectors are valid")
}

/// Zero-padded complex vector helper for tests and examples.
pub fn padded(values: &[C64], dim: usize) -> CVector {
    let mut v = vec![ZERO; dim];
    v[..values.len()].copy_from_slice(values);
    CVector::new(v)
}
