//! Homogeneous models: the same reference vectors `h_j` at every site.
//!
//! With `β_ij = <h_j, h_i>` the finite-volume states reduce to powers of
//! `β`, and their large-volume behaviour is governed by the entries of
//! largest modulus.

use serde::Serialize;

use crate::algebra::{eigh, CMatrix, CVector, C64, ONE, ZERO};
use crate::error::{Error, Result, Violation};
use crate::kernel::{overlap_of, trace_matrix_of, FiberSource, ZERO_VECTOR_NORM};
use crate::lattice::{Exhaustion, Lattice};
use crate::limit::{LimitModel, TailCertificate, TailClass};
use crate::site::{is_subset, Site};
use crate::state::LocalObservable;

/// Relative tolerance for membership in the maximizer set.
pub const ARGMAX_RELTOL: f64 = 1e-9;

/// Overlaps within this distance of 1 are treated as exactly 1 in tail products.
pub const UNIT_SNAP: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct HomogeneousModel {
    fiber_dim: usize,
    vectors: Vec<CVector>,
    lattice: Lattice,
}

impl HomogeneousModel {
    /// Reference vectors replicated over `Z^1`; see [`HomogeneousModel::on`].
    pub fn new(vectors: Vec<CVector>) -> Result<Self> {
        let mut violations = Vec::new();
        let d = vectors.first().map_or(0, CVector::dim);
        if vectors.is_empty() {
            violations.push(Violation::new(
                "vectors",
                "at least one reference vector is required",
            ));
        }
        for (j, v) in vectors.iter().enumerate() {
            if v.dim() != d {
                violations.push(Violation::new(
                    format!("vectors[{j}]"),
                    format!("dimension {} differs from {d}", v.dim()),
                ));
            } else if !v.is_finite() {
                violations.push(Violation::new(format!("vectors[{j}]"), "non-finite entry"));
            } else if v.norm() <= ZERO_VECTOR_NORM {
                violations.push(Violation::new(format!("vectors[{j}]"), "zero vector"));
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(Self {
            fiber_dim: d,
            vectors,
            lattice: Lattice::Zd { dim: 1 },
        })
    }

    pub fn on(mut self, lattice: Lattice) -> Self {
        self.lattice = lattice;
        self
    }

    pub fn vectors(&self) -> &[CVector] {
        &self.vectors
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// All vectors multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Ok(Self::new(
            self.vectors
                .iter()
                .map(|v| v.scale(C64::new(s, 0.0)))
                .collect(),
        )?
        .on(self.lattice.clone()))
    }

    /// `Π_{x∈Λ} Tr(h_i h_j^* b_x)`.
    fn local_traces(&self, obs: &LocalObservable) -> Result<CMatrix> {
        obs.check_fiber(self.fiber_dim)?;
        let n = self.vectors.len();
        let mut acc = CMatrix::ones(n, n);
        for b in obs.factors() {
            acc = crate::algebra::hadamard(&acc, &trace_matrix_of(&self.vectors, b)?)?;
        }
        Ok(acc)
    }

    fn snapped_overlaps(&self) -> CMatrix {
        overlap_of(&self.vectors).map(|z| {
            if (z - ONE).norm() <= UNIT_SNAP {
                ONE
            } else {
                z
            }
        })
    }
}

impl FiberSource for HomogeneousModel {
    fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }
    fn index_size(&self) -> usize {
        self.vectors.len()
    }
    fn fiber_vectors(&self, site: &Site) -> Result<Vec<CVector>> {
        if !self.lattice.contains(site) {
            return Err(Error::Precondition(format!(
                "site {site} is not in the lattice"
            )));
        }
        Ok(self.vectors.clone())
    }
}

impl LimitModel for HomogeneousModel {
    fn exhaustion(&self) -> Exhaustion {
        Exhaustion::for_lattice(&self.lattice)
    }

    fn tail_overlaps(&self, x: &Site) -> Result<CMatrix> {
        if !self.lattice.contains(x) {
            return Err(Error::Precondition(format!(
                "site {x} is not in the lattice"
            )));
        }
        Ok(self.snapped_overlaps())
    }

    fn tail_certificate(&self, _radius: u64) -> Result<Option<TailCertificate>> {
        // Constant factors: β_ij^n converges iff β_ij = 1 or |β_ij| < 1.
        let o = self.snapped_overlaps();
        let n = o.rows();
        let mut classes = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = o.get(i, j);
                if z == ONE {
                    classes.push(TailClass::Unit { deviation_sum: 0.0 });
                } else if z.norm() < 1.0 {
                    classes.push(TailClass::Vanishing { magnitude: 1.0 });
                } else {
                    return Err(Error::Convergence {
                        steps: 0,
                        detail: format!("overlap β_{i}{j} = {z} repeats at every site; its powers have no limit"),
                    });
                }
            }
        }
        Ok(Some(TailCertificate { size: n, classes }))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OverlapMatrix {
    pub beta: CMatrix,
    pub beta_max: f64,
    /// Indices `i` with `β_ii = β_max` within the relative tolerance.
    pub argmax: Vec<usize>,
    pub reltol: f64,
}

impl OverlapMatrix {
    pub fn from_beta(beta: CMatrix, reltol: f64) -> Self {
        let n = beta.rows();
        let beta_max = (0..n)
            .map(|i| beta.get(i, i).re)
            .fold(f64::NEG_INFINITY, f64::max);
        let argmax = (0..n)
            .filter(|&i| (beta.get(i, i).re - beta_max).abs() <= reltol * beta_max)
            .collect();
        Self {
            beta,
            beta_max,
            argmax,
            reltol,
        }
    }

    pub fn size(&self) -> usize {
        self.beta.rows()
    }

    /// Pairs `(i,j)` with `β_ij = β_max` within the relative tolerance.
    pub fn maximizer_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.size();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if (self.beta.get(i, j) - self.beta_max).norm() <= self.reltol * self.beta_max {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// `max |β_ij| / β_max` over all pairs except `(i,i)` with `i` in the argmax.
    pub fn subleading_ratio(&self) -> f64 {
        let n = self.size();
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j && self.argmax.contains(&i) {
                    continue;
                }
                best = best.max(self.beta.get(i, j).norm() / self.beta_max);
            }
        }
        best
    }
}

pub fn overlaps(model: &HomogeneousModel) -> OverlapMatrix {
    overlaps_with_tol(model, ARGMAX_RELTOL)
}

pub fn overlaps_with_tol(model: &HomogeneousModel, reltol: f64) -> OverlapMatrix {
    OverlapMatrix::from_beta(overlap_of(&model.vectors), reltol)
}

/// `|β_ij| < sqrt(β_ii β_jj) - 1e-12 β_max` for every `i ≠ j`.
pub fn check_generic(beta: &OverlapMatrix) -> bool {
    let n = beta.size();
    let margin = 1e-12 * beta.beta_max;
    (0..n).all(|i| {
        (0..n).all(|j| {
            i == j
                || beta.beta.get(i, j).norm()
                    < (beta.beta.get(i, i).re * beta.beta.get(j, j).re).sqrt() - margin
        })
    })
}

fn cpow(z: C64, mut n: u64) -> C64 {
    let mut base = z;
    let mut acc = ONE;
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

fn is_identity_observable(obs: &LocalObservable) -> bool {
    obs.factors()
        .iter()
        .all(|b| *b == CMatrix::identity(b.rows()))
}

/// `ψ_{Λ1}(b_Λ) / ψ_{Λ1}(1)` where `|Λ1∖Λ| = extra`.
pub fn finite_normalized_count(
    model: &HomogeneousModel,
    obs: &LocalObservable,
    extra: usize,
) -> Result<C64> {
    let traces = model.local_traces(obs)?;
    if is_identity_observable(obs) {
        return Ok(ONE);
    }
    let ov = overlaps(model);
    let bmax = ov.beta_max;
    let total = (obs.len() + extra) as u64;
    let n = ov.size();
    let mut num = ZERO;
    let mut den = ZERO;
    let mut scale = 0.0;
    for i in 0..n {
        for j in 0..n {
            let b = ov.beta.get(i, j) / bmax;
            num += traces.get(i, j) * cpow(b, extra as u64);
            let bn = cpow(b, total);
            den += bn;
            scale += bn.norm();
        }
    }
    if den.re <= 1e-14 * scale {
        return Err(Error::Precondition(format!("ψ(1) = {den} is degenerate")));
    }
    Ok(num / den / bmax.powi(obs.len() as i32))
}

/// `ψ_{Λ1}(b_Λ) / ψ_{Λ1}(1)`.
pub fn finite_normalized(
    model: &HomogeneousModel,
    lambda1: &[Site],
    obs: &LocalObservable,
) -> Result<C64> {
    if !is_subset(obs.region(), lambda1) {
        return Err(Error::Precondition(
            "observable region is not inside Λ1".into(),
        ));
    }
    crate::site::ensure_distinct(lambda1)?;
    finite_normalized_count(model, obs, lambda1.len() - obs.len())
}

/// Limit as a mixture of product states `ω_i(b) = Π_x <h_i, b_x h_i> / β_max`.
#[derive(Clone, Debug, Serialize)]
pub struct ProductMixture {
    #[serde(serialize_with = "crate::algebra::serialize_c64")]
    pub value: C64,
    /// Indices of the product components.
    pub components: Vec<usize>,
    /// Mixture weights, `1/|argmax|` each.
    pub weights: Vec<f64>,
}

/// Value of product component `i` on `obs`.
pub fn component_eval(model: &HomogeneousModel, i: usize, obs: &LocalObservable) -> Result<C64> {
    let ov = overlaps(model);
    let traces = model.local_traces(obs)?;
    if i >= ov.size() {
        return Err(Error::Index {
            index: i,
            size: ov.size(),
        });
    }
    Ok(traces.get(i, i) / ov.beta_max.powi(obs.len() as i32))
}

/// Limit of [`finite_normalized`] under the generic condition.
pub fn generic_limit(model: &HomogeneousModel, obs: &LocalObservable) -> Result<ProductMixture> {
    let ov = overlaps(model);
    if !check_generic(&ov) {
        return Err(Error::Precondition(
            "generic condition fails (some |β_ij| reaches sqrt(β_ii β_jj)); use real_beta_limit"
                .into(),
        ));
    }
    let traces = model.local_traces(obs)?;
    let k = ov.argmax.len() as f64;
    let norm = ov.beta_max.powi(obs.len() as i32) * k;
    let value = ov
        .argmax
        .iter()
        .fold(ZERO, |acc, &i| acc + traces.get(i, i))
        / norm;
    Ok(ProductMixture {
        value,
        components: ov.argmax.clone(),
        weights: vec![1.0 / k; ov.argmax.len()],
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RealBetaLimit {
    #[serde(serialize_with = "crate::algebra::serialize_c64")]
    pub value: C64,
    pub pairs: Vec<(usize, usize)>,
}

/// Limit of [`finite_normalized`] for real `β`, summing over the pairs with
/// `β_ij = β_max`.
pub fn real_beta_limit(model: &HomogeneousModel, obs: &LocalObservable) -> Result<RealBetaLimit> {
    let ov = overlaps(model);
    let n = ov.size();
    let im = (0..n * n)
        .map(|k| ov.beta.as_slice()[k].im.abs())
        .fold(0.0, f64::max);
    if im > 1e-12 * ov.beta_max {
        return Err(Error::Precondition(format!(
            "β has imaginary parts up to {im:.3e}; it must be real"
        )));
    }
    let pairs = ov.maximizer_pairs();
    for i in 0..n {
        for j in 0..n {
            let z = ov.beta.get(i, j);
            if (z.norm() - ov.beta_max).abs() <= ov.reltol * ov.beta_max && !pairs.contains(&(i, j))
            {
                return Err(Error::Precondition(format!(
                    "β_{i}{j} = {} has modulus β_max but is not β_max; the finite-volume sequence oscillates",
                    z.re
                )));
            }
        }
    }
    let traces = model.local_traces(obs)?;
    let norm = ov.beta_max.powi(obs.len() as i32) * pairs.len() as f64;
    let value = pairs
        .iter()
        .fold(ZERO, |acc, &(i, j)| acc + traces.get(i, j))
        / norm;
    Ok(RealBetaLimit { value, pairs })
}

/// `p` vectors in `C^dim` with pairwise inner products `c`:
/// `h_1 = e_1`, `h_j = α_1 e_1 + ... + α_{j-1} e_{j-1} + e_j`,
/// `α_1 = c`, `α_j = c - (α_1^2 + ... + α_{j-1}^2)`.
pub fn equal_offdiag_family(p: usize, c: f64, dim: usize) -> Result<Vec<CVector>> {
    if p < 2 {
        return Err(Error::Precondition(format!(
            "need at least two vectors, got {p}"
        )));
    }
    if p > dim {
        return Err(Error::Dimension(format!(
            "{p} vectors do not fit in dimension {dim}"
        )));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Domain(format!("c = {c} must lie in (0, 1]")));
    }
    let mut alpha: Vec<f64> = Vec::with_capacity(p);
    let mut sq = 0.0;
    for _ in 0..p {
        let a = c - sq;
        sq += a * a;
        alpha.push(a);
    }
    Ok((0..p)
        .map(|j| {
            let mut v = vec![0.0; dim];
            v[..j].copy_from_slice(&alpha[..j]);
            v[j] = 1.0;
            CVector::from_real(&v)
        })
        .collect())
}

/// `true` iff every `β_ij` equals one constant `c > 0` within `tol`.
pub fn detect_product(beta: &OverlapMatrix, tol: f64) -> bool {
    let c = beta.beta.get(0, 0);
    if c.re <= tol || c.im.abs() > tol {
        return false;
    }
    beta.beta
        .as_slice()
        .iter()
        .all(|z| (z - c).norm() <= tol * c.norm().max(1.0))
}

/// Rank of the reference vectors, for diagnostics.
pub fn reference_rank(model: &HomogeneousModel) -> Result<usize> {
    let eig = eigh(&overlap_of(&model.vectors), 1e-10)?;
    let cut = 1e-10 * eig.max();
    Ok(eig.values.iter().filter(|&&l| l > cut).count())
}

/// Geometric decay rate fitted to `gaps[k]` at sizes `ns[k]`: least squares
/// on the log of the running envelope `max_{m>=k} gap(m)`, restricted to
/// envelope values above `floor`.
pub fn fit_geometric_rate(ns: &[usize], gaps: &[f64], floor: f64) -> Option<f64> {
    let mut env = vec![0.0; gaps.len()];
    let mut run: f64 = 0.0;
    for k in (0..gaps.len()).rev() {
        run = run.max(gaps[k]);
        env[k] = run;
    }
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(&env)
        .filter(|(_, &g)| g > floor)
        .map(|(&n, &g)| (n as f64, g.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some((sxy / sxx).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::rel_err;
    use crate::kernel::FiberFamily;
    use crate::limit::{boundary_matrix, normalized_limit_eval};
    use crate::random::{random_observable, random_vector, rng_from_seed};
    use crate::state::{eval_dense, eval_schur};
    use proptest::prelude::*;

    fn line(n: i64) -> Vec<Site> {
        (0..n).map(Site::id).collect()
    }

    fn family_on(model: &HomogeneousModel, sites: &[Site]) -> FiberFamily {
        let d = model.fiber_dim();
        FiberFamily::new(
            sites.to_vec(),
            d,
            model.index_size(),
            vec![model.vectors().to_vec(); sites.len()],
        )
        .unwrap()
    }

    fn obs_on(rng: &mut crate::random::SeededRng, region: &[Site], d: usize) -> LocalObservable {
        LocalObservable::new(
            region.to_vec(),
            region.iter().map(|_| random_observable(rng, d)).collect(),
        )
        .unwrap()
    }

    fn ortho2() -> HomogeneousModel {
        HomogeneousModel::new(vec![CVector::basis(2, 0), CVector::basis(2, 1)]).unwrap()
    }

    fn tilted() -> HomogeneousModel {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        HomogeneousModel::new(vec![CVector::basis(2, 0), CVector::from_real(&[s, s])]).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let ov = overlaps(&ortho2());
        assert_eq!(ov.beta, CMatrix::identity(2));
        assert_eq!((ov.beta_max, ov.argmax.clone()), (1.0, vec![0, 1]));
        assert!(check_generic(&ov));

        let ov = overlaps(&tilted());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(
            ov.beta
                .max_abs_diff(&CMatrix::from_real_rows(&[&[1.0, s], &[s, 1.0]]).unwrap())
                .unwrap()
                < 1e-15
        );
        assert!((ov.beta_max - 1.0).abs() < 1e-15);
        assert!(check_generic(&ov));

        let h = CVector::basis(2, 0);
        let prop = HomogeneousModel::new(vec![h.clone(), h.scale(C64::new(2.0, 0.0))]).unwrap();
        let ov = overlaps(&prop);
        assert_eq!(
            ov.beta,
            CMatrix::from_real_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap()
        );
        assert_eq!((ov.beta_max, ov.argmax.clone()), (4.0, vec![1]));
        assert!(!check_generic(&ov));
    }

    #[test]
    fn finite_normalized_examples() {
        let mut rng = rng_from_seed(60);
        let h = random_vector(&mut rng, 2);
        let m = HomogeneousModel::new(vec![h.clone()]).unwrap();
        let obs = obs_on(&mut rng, &line(2), 2);
        let got = finite_normalized(&m, &line(5), &obs).unwrap();
        let want = obs
            .factors()
            .iter()
            .fold(ONE, |acc, b| acc * h.inner(&b.apply(&h).unwrap()))
            / h.norm_sqr().powi(2);
        assert!(rel_err(got, want) < 1e-12);

        let m =
            HomogeneousModel::new((0..3).map(|_| random_vector(&mut rng, 3)).collect()).unwrap();
        let obs = obs_on(&mut rng, &line(3), 3);
        let f = family_on(&m, &line(6));
        let unit = LocalObservable::identity(line(3), 3).unwrap();
        let want = eval_schur(&f, &obs).unwrap() / eval_schur(&f, &unit).unwrap();
        assert!(rel_err(finite_normalized(&m, &line(3), &obs).unwrap(), want) < 1e-11);
        for n in 3..=6 {
            let unit = LocalObservable::identity(line(n), 3).unwrap();
            let want = eval_dense(&f, &line(n), &obs, 8).unwrap()
                / eval_dense(&f, &line(n), &unit, 8).unwrap();
            assert!(rel_err(finite_normalized(&m, &line(n), &obs).unwrap(), want) < 1e-10);
        }
        let unit = LocalObservable::identity(line(2), 3).unwrap();
        assert_eq!(finite_normalized(&m, &line(6), &unit).unwrap(), ONE);
    }

    #[test]
    fn generic_limit_examples() {
        let mut rng = rng_from_seed(61);
        let obs = obs_on(&mut rng, &line(2), 2);
        let lim = generic_limit(&ortho2(), &obs).unwrap();
        let want = (0..2).fold(ZERO, |acc, i| {
            let e = CVector::basis(2, i);
            acc + obs
                .factors()
                .iter()
                .fold(ONE, |p, b| p * e.inner(&b.apply(&e).unwrap()))
        }) * 0.5;
        assert!(rel_err(lim.value, want) < 1e-14);
        assert_eq!(lim.weights, vec![0.5, 0.5]);

        let proj = CVector::basis(2, 0).outer(&CVector::basis(2, 0));
        let one = LocalObservable::single(Site::id(0), proj).unwrap();
        assert!(
            (generic_limit(&ortho2(), &one).unwrap().value - C64::new(0.5, 0.0)).norm() < 1e-15
        );

        let h = CVector::basis(2, 0);
        let prop = HomogeneousModel::new(vec![h.clone(), h.scale(C64::new(2.0, 0.0))]).unwrap();
        assert!(matches!(
            generic_limit(&prop, &one),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn generic_limit_is_reached() {
        let m = tilted();
        let mut rng = rng_from_seed(62);
        let obs = obs_on(&mut rng, &line(1), 2);
        let lim = generic_limit(&m, &obs).unwrap().value;
        let rho = overlaps(&m).subleading_ratio();
        let ns: Vec<usize> = (1..60).collect();
        let gaps: Vec<f64> = ns
            .iter()
            .map(|&e| (finite_normalized_count(&m, &obs, e).unwrap() - lim).norm())
            .collect();
        let rate = fit_geometric_rate(&ns, &gaps, 1e-13).unwrap();
        assert!(rate > rho / 2.0 && rate < rho * 2.0, "rate {rate} vs {rho}");
    }

    #[test]
    fn real_beta_examples() {
        let mut rng = rng_from_seed(63);
        let obs = obs_on(&mut rng, &line(2), 2);
        let a = real_beta_limit(&ortho2(), &obs).unwrap().value;
        let b = generic_limit(&ortho2(), &obs).unwrap().value;
        assert!(rel_err(a, b) < 1e-14);

        // Equal vectors: every pair is a maximizer.
        let h = CVector::from_real(&[0.6, 0.8, 0.0]);
        let m = HomogeneousModel::new(vec![h.clone(), h.clone(), h]).unwrap();
        let obs = obs_on(&mut rng, &line(2), 3);
        let r = real_beta_limit(&m, &obs).unwrap();
        assert_eq!(r.pairs.len(), 9);
        assert!(rel_err(finite_normalized_count(&m, &obs, 50).unwrap(), r.value) < 1e-10);

        // c = 1 gives h_j = e_1 + e_j for j > 1: β_jj = 2 while every other entry is 1.
        let m = HomogeneousModel::new(equal_offdiag_family(3, 1.0, 3).unwrap()).unwrap();
        let r = real_beta_limit(&m, &obs).unwrap();
        assert_eq!(r.pairs, vec![(1, 1), (2, 2)]);
        assert!(rel_err(finite_normalized_count(&m, &obs, 200).unwrap(), r.value) < 1e-10);

        let cplx = HomogeneousModel::new(vec![
            CVector::basis(2, 0),
            CVector::new(vec![C64::new(0.5, 0.0), C64::new(0.0, 0.5)]),
            CVector::new(vec![C64::new(0.0, 0.5), C64::new(0.5, 0.0)]),
        ])
        .unwrap();
        assert!(matches!(
            real_beta_limit(&cplx, &obs_on(&mut rng, &line(1), 2)),
            Err(Error::Precondition(_))
        ));

        let h = CVector::basis(2, 0);
        let flip = HomogeneousModel::new(vec![h.clone(), h.scale(C64::new(-1.0, 0.0))]).unwrap();
        assert!(matches!(
            real_beta_limit(&flip, &obs_on(&mut rng, &line(1), 2)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn equal_offdiag_examples() {
        let v = equal_offdiag_family(2, 0.5, 2).unwrap();
        assert_eq!(v[1], CVector::from_real(&[0.5, 1.0]));
        let v = equal_offdiag_family(3, 0.5, 3).unwrap();
        assert_eq!(v[2], CVector::from_real(&[0.5, 0.25, 1.0]));
        assert!((v[1].inner(&v[2]).re - 0.5).abs() < 1e-15);
        assert!(equal_offdiag_family(4, 0.5, 3).is_err());
        assert!(equal_offdiag_family(3, 0.0, 3).is_err());
        for p in 2..=6 {
            for k in 1..=9 {
                let c = k as f64 / 10.0;
                let v = equal_offdiag_family(p, c, p).unwrap();
                let g = overlap_of(&v);
                for i in 0..p {
                    for j in 0..p {
                        if i != j {
                            assert!((g.get(i, j) - C64::new(c, 0.0)).norm() < 1e-12);
                        }
                    }
                }
                let m = HomogeneousModel::new(v).unwrap();
                assert_eq!(reference_rank(&m).unwrap(), p);
            }
        }
    }

    #[test]
    fn detect_product_examples() {
        assert!(detect_product(
            &OverlapMatrix::from_beta(CMatrix::ones(3, 3), ARGMAX_RELTOL),
            1e-12
        ));
        assert!(!detect_product(
            &OverlapMatrix::from_beta(CMatrix::identity(3), ARGMAX_RELTOL),
            1e-12
        ));
    }

    #[test]
    fn product_regime_factorizes() {
        let mut rng = rng_from_seed(64);
        let h = random_vector(&mut rng, 3);
        let h = h.scale(C64::new(1.0 / h.norm(), 0.0));
        let m = HomogeneousModel::new(vec![h.clone(), h.clone()]).unwrap();
        assert!(detect_product(&overlaps(&m), 1e-12));
        let f = family_on(&m, &line(2));
        let a = random_observable(&mut rng, 3);
        let b = random_observable(&mut rng, 3);
        let id = CMatrix::identity(3);
        let ev = |x: &CMatrix, y: &CMatrix| {
            eval_schur(
                &f,
                &LocalObservable::new(line(2), vec![x.clone(), y.clone()]).unwrap(),
            )
            .unwrap()
        };
        let lhs = ev(&a, &b) * ev(&id, &id);
        let rhs = ev(&a, &id) * ev(&id, &b);
        assert!(rel_err(lhs, rhs) < 1e-10);
    }

    #[test]
    fn homogeneous_limit_state_matches_closed_form() {
        let m = ortho2().on(Lattice::Zd { dim: 2 });
        let mut rng = rng_from_seed(65);
        let region = vec![Site::new([0, 0]), Site::new([1, 0])];
        let obs = obs_on(&mut rng, &region, 2);
        let b = boundary_matrix(&m, &region, &m.exhaustion(), 1e-12).unwrap();
        assert_eq!(b.entries, CMatrix::identity(2));
        let v = normalized_limit_eval(&m, &obs, &m.exhaustion(), 1e-12).unwrap();
        assert!(rel_err(v, generic_limit(&m, &obs).unwrap().value) < 1e-13);
        // |β_12| = 1 with a phase: no limit.
        let bad = HomogeneousModel::new(vec![
            CVector::basis(1, 0),
            CVector::basis(1, 0).scale(C64::new(0.0, 1.0)),
        ])
        .unwrap()
        .on(Lattice::Zd { dim: 1 });
        assert!(matches!(
            boundary_matrix(&bad, &[], &bad.exhaustion(), 1e-12),
            Err(Error::Convergence { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn beta_max_on_diagonal(seed in any::<u64>(), n in 1usize..5, d in 1usize..4) {
            let mut rng = rng_from_seed(seed);
            let m = HomogeneousModel::new((0..n).map(|_| random_vector(&mut rng, d)).collect()).unwrap();
            let ov = overlaps(&m);
            let offmax = ov.beta.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assert!((offmax - ov.beta_max).abs() <= 1e-12 * ov.beta_max);
        }

        #[test]
        fn argmax_stable_under_scaling(seed in any::<u64>(), s in 0.1f64..10.0) {
            let mut rng = rng_from_seed(seed);
            let m = HomogeneousModel::new((0..3).map(|_| random_vector(&mut rng, 3)).collect()).unwrap();
            let ms = m.scaled(s).unwrap();
            let (a, b) = (overlaps(&m), overlaps(&ms));
            prop_assert_eq!(&a.argmax, &b.argmax);
            prop_assert!(b.beta.max_abs_diff(&a.beta.scale(C64::new(s * s, 0.0))).unwrap() <= 1e-12 * b.beta.max_abs());
            let obs = obs_on(&mut rng, &line(2), 3);
            if check_generic(&a) {
                let x = generic_limit(&m, &obs).unwrap().value;
                let y = generic_limit(&ms, &obs).unwrap().value;
                prop_assert!(rel_err(y, x) < 1e-10);
            }
        }

        #[test]
        fn generic_limit_is_convex_product_mixture(seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let m = HomogeneousModel::new((0..3).map(|_| random_vector(&mut rng, 3)).collect()).unwrap();
            prop_assume!(check_generic(&overlaps(&m)));
            let a = obs_on(&mut rng, &[Site::id(0)], 3);
            let b = obs_on(&mut rng, &[Site::id(1)], 3);
            let ab = a.concat(&b).unwrap();
            let mix = generic_limit(&m, &ab).unwrap();
            prop_assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let mut recomposed = ZERO;
            for (&i, &w) in mix.components.iter().zip(&mix.weights) {
                let joint = component_eval(&m, i, &ab).unwrap();
                let split = component_eval(&m, i, &a).unwrap() * component_eval(&m, i, &b).unwrap();
                prop_assert!(rel_err(joint, split) < 1e-10);
                recomposed += joint * w;
            }
            prop_assert!(rel_err(recomposed, mix.value) < 1e-12);
        }
    }
}
