//! Schur kernels built from fiber vectors.
//!
//! For a site `x` with fiber vectors `h_{x,i}`, the kernel functionals are
//! `E_{x;j,i}(b) = Tr(h_{x,i} h_{x,j}^* b) = <h_{x,j}, b h_{x,i}>`.
//! [`kernel_eval`] returns that value for the argument order `(i, j)`.
//!
//! The matrix-valued map `Ê_x(b)` has entry `(i,j)` equal to `E_{x;i,j}(b) =
//! <h_{x,i}, b h_{x,j}>`, i.e. `Ê_x(b) = H^* b H` with the fiber vectors as
//! the columns of `H`. This orientation is the completely positive one;
//! its transpose generally is not.

use std::collections::{BTreeSet, HashMap};

use crate::algebra::{hadamard, is_psd, CMatrix, CVector, PsdReport, C64, ZERO};
use crate::error::{Error, Result, Violation};
use crate::site::Site;

/// Norm below which a fiber vector counts as zero.
pub const ZERO_VECTOR_NORM: f64 = 1e-14;

/// Anything that can hand out the fiber vectors `(h_{x,i})_{i∈I}` of a site.
pub trait FiberSource {
    fn fiber_dim(&self) -> usize;
    fn index_size(&self) -> usize;
    /// The `index_size()` vectors of `site`, each of dimension `fiber_dim()`.
    fn fiber_vectors(&self, site: &Site) -> Result<Vec<CVector>>;
}

impl<T: FiberSource + ?Sized> FiberSource for &T {
    fn fiber_dim(&self) -> usize {
        (**self).fiber_dim()
    }
    fn index_size(&self) -> usize {
        (**self).index_size()
    }
    fn fiber_vectors(&self, site: &Site) -> Result<Vec<CVector>> {
        (**self).fiber_vectors(site)
    }
}

/// Explicit family of fiber vectors on a finite ordered set of sites.
#[derive(Clone, Debug)]
pub struct FiberFamily {
    sites: Vec<Site>,
    fiber_dim: usize,
    index_size: usize,
    vectors: Vec<Vec<CVector>>,
    lookup: HashMap<Site, usize>,
}

impl FiberFamily {
    /// Validates and builds a family. Every problem found is reported, not
    /// just the first.
    pub fn new(
        sites: Vec<Site>,
        fiber_dim: usize,
        index_size: usize,
        vectors: Vec<Vec<CVector>>,
    ) -> Result<Self> {
        let mut violations = Vec::new();
        if fiber_dim == 0 {
            violations.push(Violation::new("fiber_dim", "must be positive"));
        }
        if index_size == 0 {
            violations.push(Violation::new("index_size", "must be positive"));
        }
        if sites.len() != vectors.len() {
            violations.push(Violation::new(
                "vectors",
                format!("{} sites but {} vector lists", sites.len(), vectors.len()),
            ));
        }
        let mut seen = BTreeSet::new();
        for s in &sites {
            if !seen.insert(s) {
                violations.push(Violation::new(format!("site {s}"), "duplicate site"));
            }
        }
        for (site, list) in sites.iter().zip(&vectors) {
            if list.len() != index_size {
                violations.push(Violation::new(
                    format!("site {site}"),
                    format!("expected {index_size} vectors, got {}", list.len()),
                ));
            }
            for (i, v) in list.iter().enumerate() {
                let loc = format!("site {site}, vector {i}");
                if v.dim() != fiber_dim {
                    violations.push(Violation::new(
                        loc,
                        format!("dimension {} instead of {fiber_dim}", v.dim()),
                    ));
                } else if !v.is_finite() {
                    violations.push(Violation::new(loc, "non-finite entry"));
                } else if v.norm() <= ZERO_VECTOR_NORM {
                    violations.push(Violation::new(loc, "zero vector"));
                }
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let lookup = sites
            .iter()
            .cloned()
            .enumerate()
            .map(|(k, s)| (s, k))
            .collect();
        Ok(Self {
            sites,
            fiber_dim,
            index_size,
            vectors,
            lookup,
        })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn contains(&self, site: &Site) -> bool {
        self.lookup.contains_key(site)
    }

    pub fn vectors_at(&self, site: &Site) -> Result<&[CVector]> {
        self.lookup
            .get(site)
            .map(|&k| self.vectors[k].as_slice())
            .ok_or_else(|| Error::Precondition(format!("site {site} is not in the family")))
    }
}

impl FiberSource for FiberFamily {
    fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }
    fn index_size(&self) -> usize {
        self.index_size
    }
    fn fiber_vectors(&self, site: &Site) -> Result<Vec<CVector>> {
        self.vectors_at(site).map(<[CVector]>::to_vec)
    }
}

fn check_index<F: FiberSource + ?Sized>(family: &F, i: usize) -> Result<()> {
    if i >= family.index_size() {
        return Err(Error::Index {
            index: i,
            size: family.index_size(),
        });
    }
    Ok(())
}

fn check_operator<F: FiberSource + ?Sized>(family: &F, b: &CMatrix) -> Result<()> {
    let d = family.fiber_dim();
    if b.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "observable is {:?}, fiber dimension is {d}",
            b.shape()
        )));
    }
    Ok(())
}

/// `Tr(h_{x,i} h_{x,j}^* b) = <h_{x,j}, b h_{x,i}>`.
pub fn kernel_eval<F: FiberSource + ?Sized>(
    family: &F,
    x: &Site,
    i: usize,
    j: usize,
    b: &CMatrix,
) -> Result<C64> {
    check_index(family, i)?;
    check_index(family, j)?;
    check_operator(family, b)?;
    let h = family.fiber_vectors(x)?;
    Ok(h[j].inner(&b.apply(&h[i])?))
}

/// Matrix with entry `(i,j) = Tr(h_{x,i} h_{x,j}^* b)`; the transpose of
/// [`e_hat`]. Its value at `b = 1` is the overlap matrix `<h_{x,j}, h_{x,i}>`.
pub fn trace_matrix<F: FiberSource + ?Sized>(family: &F, x: &Site, b: &CMatrix) -> Result<CMatrix> {
    check_operator(family, b)?;
    let h = family.fiber_vectors(x)?;
    trace_matrix_of(&h, b)
}

pub(crate) fn trace_matrix_of(h: &[CVector], b: &CMatrix) -> Result<CMatrix> {
    let bh = h.iter().map(|v| b.apply(v)).collect::<Result<Vec<_>>>()?;
    let n = h.len();
    Ok(CMatrix::from_fn(n, n, |i, j| h[j].inner(&bh[i])))
}

/// Overlaps `G(i,j) = Tr(h_{x,i} h_{x,j}^*) = <h_{x,j}, h_{x,i}>`.
pub(crate) fn overlap_of(h: &[CVector]) -> CMatrix {
    let n = h.len();
    CMatrix::from_fn(n, n, |i, j| h[j].inner(&h[i]))
}

pub fn overlaps_at<F: FiberSource + ?Sized>(family: &F, x: &Site) -> Result<CMatrix> {
    Ok(overlap_of(&family.fiber_vectors(x)?))
}

/// `Ê_x(b)`, entry `(i,j) = <h_{x,i}, b h_{x,j}>`.
pub fn e_hat<F: FiberSource + ?Sized>(family: &F, x: &Site, b: &CMatrix) -> Result<CMatrix> {
    Ok(trace_matrix(family, x, b)?.transpose())
}

/// The kernel at one site as its `d_I^2` rank-one operators `h_{x,i} h_{x,j}^*`.
#[derive(Clone, Debug)]
pub struct SchurKernelMap {
    pub site: Site,
    index_size: usize,
    operators: Vec<CMatrix>,
}

impl SchurKernelMap {
    pub fn new<F: FiberSource + ?Sized>(family: &F, site: &Site) -> Result<Self> {
        let h = family.fiber_vectors(site)?;
        let n = h.len();
        let mut operators = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                operators.push(h[i].outer(&h[j]));
            }
        }
        Ok(Self {
            site: site.clone(),
            index_size: n,
            operators,
        })
    }

    /// `h_{x,i} h_{x,j}^*`.
    pub fn operator(&self, i: usize, j: usize) -> &CMatrix {
        &self.operators[i * self.index_size + j]
    }

    /// `Tr(h_{x,i} h_{x,j}^* b)`, same value as [`kernel_eval`].
    pub fn eval(&self, i: usize, j: usize, b: &CMatrix) -> Result<C64> {
        Ok(self.operator(i, j).matmul(b)?.trace())
    }

    /// Same value as [`e_hat`].
    pub fn e_hat(&self, b: &CMatrix) -> Result<CMatrix> {
        let n = self.index_size;
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, self.eval(j, i, b)?);
            }
        }
        Ok(out)
    }
}

/// Choi matrix of `Ê_x`: block `(p,q)` is `Ê_x(e_p e_q^*)`. Row index
/// `p * d_I + i`, column index `q * d_I + j`.
pub fn choi_matrix<F: FiberSource + ?Sized>(family: &F, x: &Site) -> Result<CMatrix> {
    let d = family.fiber_dim();
    let n = family.index_size();
    let mut choi = CMatrix::zeros(d * n, d * n);
    for p in 0..d {
        for q in 0..d {
            let block = e_hat(family, x, &CMatrix::unit(d, p, q))?;
            for i in 0..n {
                for j in 0..n {
                    choi.set(p * n + i, q * n + j, block.get(i, j));
                }
            }
        }
    }
    Ok(choi)
}

/// Certifies complete positivity of `Ê_x` through its Choi matrix.
pub fn certify_cp<F: FiberSource + ?Sized>(family: &F, x: &Site, tol: f64) -> Result<PsdReport> {
    is_psd(&choi_matrix(family, x)?, tol)
}

/// Property-(S) kernel `K((j,h),(i,k)) = E_{x;j,i}(b_h^* b_k)` for the
/// operators `bs`. Composite index `(i,k)` maps to `i * n + k`.
pub fn property_s_matrix<F: FiberSource + ?Sized>(
    family: &F,
    x: &Site,
    bs: &[CMatrix],
) -> Result<CMatrix> {
    if bs.is_empty() {
        return Err(Error::Precondition(
            "property (S) needs at least one operator".into(),
        ));
    }
    for b in bs {
        check_operator(family, b)?;
    }
    let n = bs.len();
    let di = family.index_size();
    let h = family.fiber_vectors(x)?;
    let mut k_mat = CMatrix::zeros(di * n, di * n);
    for hh in 0..n {
        for kk in 0..n {
            let prod = bs[hh].adjoint().matmul(&bs[kk])?;
            // t(i,j) = E_{x;j,i}(b_h^* b_k)
            let t = trace_matrix_of(&h, &prod)?;
            for j in 0..di {
                for i in 0..di {
                    k_mat.set(j * n + hh, i * n + kk, t.get(i, j));
                }
            }
        }
    }
    Ok(k_mat)
}

fn check_sites_and_ops<F: FiberSource + ?Sized>(
    family: &F,
    xs: &[Site],
    bs: &[CMatrix],
) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Precondition(
            "tensor kernel needs at least one site".into(),
        ));
    }
    if xs.len() != bs.len() {
        return Err(Error::Dimension(format!(
            "{} sites but {} operators",
            xs.len(),
            bs.len()
        )));
    }
    crate::site::ensure_distinct(xs)?;
    for b in bs {
        check_operator(family, b)?;
    }
    Ok(())
}

/// `⋄_{x∈xs} Ê_x(b_x)`, the matrix map of the tensor-product kernel on an
/// elementary tensor.
pub fn tensor_kernel<F: FiberSource + ?Sized>(
    family: &F,
    xs: &[Site],
    bs: &[CMatrix],
) -> Result<CMatrix> {
    check_sites_and_ops(family, xs, bs)?;
    let n = family.index_size();
    xs.iter()
        .zip(bs)
        .try_fold(CMatrix::ones(n, n), |acc, (x, b)| {
            hadamard(&acc, &e_hat(family, x, b)?)
        })
}

/// Property-(S) kernel of the tensor-product kernel over `xs`, for `n`
/// elementary tensors `b_tuples[h] = ⊗_x b_tuples[h][x]`.
pub fn tensor_property_s_matrix<F: FiberSource + ?Sized>(
    family: &F,
    xs: &[Site],
    b_tuples: &[Vec<CMatrix>],
) -> Result<CMatrix> {
    if b_tuples.is_empty() {
        return Err(Error::Precondition(
            "property (S) needs at least one operator".into(),
        ));
    }
    for t in b_tuples {
        check_sites_and_ops(family, xs, t)?;
    }
    let n = b_tuples.len();
    let di = family.index_size();
    let mut k_mat = CMatrix::zeros(di * n, di * n);
    for hh in 0..n {
        for kk in 0..n {
            let prods = b_tuples[hh]
                .iter()
                .zip(&b_tuples[kk])
                .map(|(bh, bk)| bh.adjoint().matmul(bk))
                .collect::<Result<Vec<_>>>()?;
            let t = tensor_kernel(family, xs, &prods)?;
            // K((j,h),(i,k)) = E_{j,i} = t(j,i)
            for j in 0..di {
                for i in 0..di {
                    k_mat.set(j * n + hh, i * n + kk, t.get(j, i));
                }
            }
        }
    }
    Ok(k_mat)
}

/// Gram matrix `<w_r, w_c>` of a list of vectors.
pub fn gram_of(vectors: &[CVector]) -> CMatrix {
    let n = vectors.len();
    CMatrix::from_fn(n, n, |r, c| vectors[r].inner(&vectors[c]))
}

/// Sum of all entries `⟨ê, M ê⟩` with `ê` the all-ones vector.
pub fn all_ones_form(m: &CMatrix) -> C64 {
    m.as_slice().iter().fold(ZERO, |acc, z| acc + z)
}
