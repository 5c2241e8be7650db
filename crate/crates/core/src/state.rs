//! Finite-volume superposition states.
//!
//! `Ψ_Λ = Σ_{i∈I} ⊗_{x∈Λ} h_{x,i}` and `ψ_Λ(b) = <Ψ_Λ, b Ψ_Λ>`, kept
//! unnormalized. Two evaluation routes are provided: an explicit dense
//! contraction, exponential in `|Λ|`, and the Schur-product route, linear in
//! `|Λ|`. The dense route is the reference for the fast ones.
//!
//! Dense amplitudes are site-major: the first site of the region is the most
//! significant index, the fiber index of the last site runs fastest.

use crate::algebra::{hadamard, CMatrix, CVector, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::kernel::{all_ones_form, e_hat, trace_matrix, FiberSource};
use crate::site::{difference, ensure_distinct, is_subset, Site};

/// Largest region handled by the dense routines unless overridden.
pub const DEFAULT_DENSE_CAP: usize = 8;

/// Values of `ψ(1)` at or below this are treated as a vanishing norm.
pub const NORMALIZATION_FLOOR: f64 = 1e-14;

/// Elementary tensor `b_Λ = ⊗_{x∈Λ} b_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalObservable {
    region: Vec<Site>,
    factors: Vec<CMatrix>,
}

impl LocalObservable {
    pub fn new(region: Vec<Site>, factors: Vec<CMatrix>) -> Result<Self> {
        if region.len() != factors.len() {
            return Err(Error::Dimension(format!(
                "{} sites but {} factors",
                region.len(),
                factors.len()
            )));
        }
        ensure_distinct(&region)?;
        if let Some(first) = factors.first() {
            let (r, c) = first.shape();
            if r != c || factors.iter().any(|f| f.shape() != (r, c)) {
                return Err(Error::Dimension(
                    "factors must be square and of equal size".into(),
                ));
            }
        }
        Ok(Self { region, factors })
    }

    /// `1_Λ` on fibers of dimension `d`.
    pub fn identity(region: Vec<Site>, d: usize) -> Result<Self> {
        let n = region.len();
        Self::new(region, vec![CMatrix::identity(d); n])
    }

    pub fn single(site: Site, factor: CMatrix) -> Result<Self> {
        Self::new(vec![site], vec![factor])
    }

    pub fn region(&self) -> &[Site] {
        &self.region
    }

    pub fn factors(&self) -> &[CMatrix] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }

    pub fn factor_at(&self, site: &Site) -> Option<&CMatrix> {
        self.region
            .iter()
            .position(|s| s == site)
            .map(|k| &self.factors[k])
    }

    /// Elementary tensor on the disjoint union of both regions.
    pub fn concat(&self, other: &LocalObservable) -> Result<LocalObservable> {
        let mut region = self.region.clone();
        region.extend(other.region.iter().cloned());
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        LocalObservable::new(region, factors)
    }

    /// Same factors moved to new sites, matched by position.
    pub fn relocated(&self, sites: Vec<Site>) -> Result<LocalObservable> {
        LocalObservable::new(sites, self.factors.clone())
    }

    pub(crate) fn check_fiber(&self, d: usize) -> Result<()> {
        match self.factors.first() {
            Some(f) if f.rows() != d => Err(Error::Dimension(format!(
                "observable factors are {}x{}, fiber dimension is {d}",
                f.rows(),
                f.cols()
            ))),
            _ => Ok(()),
        }
    }
}

/// Dense vector `Ψ_Λ`.
#[derive(Clone, Debug)]
pub struct DenseState {
    pub region: Vec<Site>,
    pub fiber_dim: usize,
    pub amplitudes: CVector,
}

impl DenseState {
    /// `ΨΨ^*`.
    pub fn density_operator(&self) -> CMatrix {
        self.amplitudes.outer(&self.amplitudes)
    }
}

fn check_cap(d: usize, sites: usize, cap: usize) -> Result<()> {
    if sites > cap {
        return Err(Error::Resource {
            fiber_dim: d,
            sites,
            dimension: (d as u128).saturating_pow(sites as u32),
            cap,
        });
    }
    Ok(())
}

/// Amplitudes of `Σ_i ⊗_{x∈Λ} h_{x,i}`.
pub fn build_psi<F: FiberSource + ?Sized>(
    family: &F,
    region: &[Site],
    cap: usize,
) -> Result<DenseState> {
    ensure_distinct(region)?;
    let d = family.fiber_dim();
    check_cap(d, region.len(), cap)?;
    let per_site = region
        .iter()
        .map(|x| family.fiber_vectors(x))
        .collect::<Result<Vec<_>>>()?;
    let dim = d.pow(region.len() as u32);
    let mut amps = vec![ZERO; dim];
    for i in 0..family.index_size() {
        let term = per_site
            .iter()
            .fold(CVector::new(vec![ONE]), |acc, h| acc.kron(&h[i]));
        for (a, t) in amps.iter_mut().zip(term.as_slice()) {
            *a += t;
        }
    }
    Ok(DenseState {
        region: region.to_vec(),
        fiber_dim: d,
        amplitudes: CVector::new(amps),
    })
}

/// Applies `op` to tensor slot `axis` of a site-major vector.
fn apply_on_axis(v: &[C64], d: usize, n_sites: usize, axis: usize, op: &CMatrix) -> Vec<C64> {
    let stride = d.pow((n_sites - 1 - axis) as u32);
    let block = stride * d;
    let mut out = vec![ZERO; v.len()];
    for base in (0..v.len()).step_by(block) {
        for off in 0..stride {
            for r in 0..d {
                let mut acc = ZERO;
                for c in 0..d {
                    acc += op.get(r, c) * v[base + c * stride + off];
                }
                out[base + r * stride + off] = acc;
            }
        }
    }
    out
}

/// `<Ψ_{Λ1}, (b_Λ ⊗ 1_{Λ1∖Λ}) Ψ_{Λ1}>` by explicit dense contraction.
pub fn eval_dense<F: FiberSource + ?Sized>(
    family: &F,
    lambda1: &[Site],
    obs: &LocalObservable,
    cap: usize,
) -> Result<C64> {
    if !is_subset(obs.region(), lambda1) {
        return Err(Error::Precondition(
            "observable region is not inside the evaluation region".into(),
        ));
    }
    obs.check_fiber(family.fiber_dim())?;
    let psi = build_psi(family, lambda1, cap)?;
    let d = family.fiber_dim();
    let mut v = psi.amplitudes.as_slice().to_vec();
    for (axis, site) in lambda1.iter().enumerate() {
        if let Some(b) = obs.factor_at(site) {
            v = apply_on_axis(&v, d, lambda1.len(), axis, b);
        }
    }
    Ok(psi.amplitudes.inner(&CVector::new(v)))
}

/// `⋄_{x∈Λ} Ê_x(b_x)`.
pub fn schur_matrix<F: FiberSource + ?Sized>(family: &F, obs: &LocalObservable) -> Result<CMatrix> {
    obs.check_fiber(family.fiber_dim())?;
    let n = family.index_size();
    obs.region()
        .iter()
        .zip(obs.factors())
        .try_fold(CMatrix::ones(n, n), |acc, (x, b)| {
            hadamard(&acc, &e_hat(family, x, b)?)
        })
}

/// `<ê_I, (⋄_{x∈Λ} Ê_x(b_x)) ê_I>`, linear in `|Λ|`.
pub fn eval_schur<F: FiberSource + ?Sized>(family: &F, obs: &LocalObservable) -> Result<C64> {
    Ok(all_ones_form(&schur_matrix(family, obs)?))
}

/// `ψ_Λ(b) / ψ_Λ(1)` on the region of `obs`.
pub fn eval_schur_normalized<F: FiberSource + ?Sized>(
    family: &F,
    obs: &LocalObservable,
) -> Result<C64> {
    let unit = LocalObservable::identity(obs.region().to_vec(), family.fiber_dim())?;
    let z = eval_schur(family, &unit)?;
    if z.re <= NORMALIZATION_FLOOR {
        return Err(Error::Precondition(format!(
            "state has vanishing norm ψ(1) = {z}"
        )));
    }
    Ok(eval_schur(family, obs)? / z.re)
}

/// Matrix of summands `Π_{x∈Λ} Tr(h_{x,i}h_{x,j}^* b_x) · Π_{y∈Λ1∖Λ} Tr(h_{y,i}h_{y,j}^*)`.
pub fn extended_summands<F: FiberSource + ?Sized>(
    family: &F,
    lambda1: &[Site],
    obs: &LocalObservable,
) -> Result<CMatrix> {
    if !is_subset(obs.region(), lambda1) {
        return Err(Error::Precondition(
            "observable region is not inside the evaluation region".into(),
        ));
    }
    ensure_distinct(lambda1)?;
    obs.check_fiber(family.fiber_dim())?;
    let n = family.index_size();
    let id = CMatrix::identity(family.fiber_dim());
    let mut acc = CMatrix::ones(n, n);
    for (x, b) in obs.region().iter().zip(obs.factors()) {
        acc = hadamard(&acc, &trace_matrix(family, x, b)?)?;
    }
    for y in difference(lambda1, obs.region()) {
        acc = hadamard(&acc, &trace_matrix(family, &y, &id)?)?;
    }
    Ok(acc)
}

/// `ψ_{Λ1}(b_Λ ⊗ 1)` in product-of-traces form, linear in `|Λ1|`.
pub fn eval_extended<F: FiberSource + ?Sized>(
    family: &F,
    lambda1: &[Site],
    obs: &LocalObservable,
) -> Result<C64> {
    Ok(all_ones_form(&extended_summands(family, lambda1, obs)?))
}

/// `Σ_{i,j} ⊗_{x∈Λ} h_{x,i} h_{x,j}^*`, assembled term by term.
pub fn rank_one_expansion<F: FiberSource + ?Sized>(
    family: &F,
    region: &[Site],
    cap: usize,
) -> Result<CMatrix> {
    let d = family.fiber_dim();
    check_cap(d, region.len(), cap)?;
    let per_site = region
        .iter()
        .map(|x| family.fiber_vectors(x))
        .collect::<Result<Vec<_>>>()?;
    let dim = d.pow(region.len() as u32);
    let mut total = CMatrix::zeros(dim, dim);
    let n = family.index_size();
    for i in 0..n {
        for j in 0..n {
            let term = per_site
                .iter()
                .fold(CMatrix::ones(1, 1), |acc, h| acc.kron(&h[i].outer(&h[j])));
            total = total.add(&term)?;
        }
    }
    Ok(total)
}
