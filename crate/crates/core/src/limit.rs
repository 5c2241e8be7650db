//! Infinite-volume limits.
//!
//! The boundary matrix of a finite region `Λ` is
//! `β_{Λ^c;i,j} = lim_n Π_{x∈Λ_n∖Λ} Tr(h_{x,i} h_{x,j}^*)` along an
//! exhaustion `Λ_n ↑ V`. It is computed from plain partial products. A model
//! supplies a [`TailCertificate`] bounding what the remaining sites can still
//! change, and the iteration stops once that bound is below the tolerance.
//!
//! The limit functional is
//! `ψ̂_Λ(b) = Σ_{i,j} Π_{x∈Λ} Tr(h_{x,i} h_{x,j}^* b_x) · β_{Λ^c;i,j}`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::Serialize;

use crate::algebra::{eigh, hadamard, hermitian_function, isometry_defect, CMatrix, CVector, C64};
use crate::error::{Error, Result, Violation};
use crate::kernel::{all_ones_form, gram_of, overlaps_at, trace_matrix, FiberFamily, FiberSource};
use crate::lattice::{sphere_size, Exhaustion, Lattice};
use crate::random::random_unitary;
use crate::site::{difference, ensure_distinct, is_subset, Site};
use crate::state::LocalObservable;

/// Hard limit on the number of sites multiplied into one boundary matrix.
pub const SITE_CAP: usize = 1_000_000;

/// Overlaps with `|o_ij| <= MASK_THRESHOLD * sqrt(o_ii o_jj)` count as zero.
pub const MASK_THRESHOLD: f64 = 1e-14;

/// Default stopping tolerance for boundary matrices.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Tolerance for unitarity and isometry checks.
pub const ISOMETRY_TOL: f64 = 1e-12;

/// Entrywise principal logarithms of the overlaps at one site.
#[derive(Clone, Debug)]
pub struct InteractionMatrix {
    pub site: Site,
    size: usize,
    entries: Vec<Option<C64>>,
}

impl InteractionMatrix {
    /// `None` for a masked (zero-overlap) entry.
    pub fn get(&self, i: usize, j: usize) -> Option<C64> {
        self.entries[i * self.size + j]
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_none()
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

pub fn interaction_matrix<F: FiberSource + ?Sized>(
    family: &F,
    x: &Site,
) -> Result<InteractionMatrix> {
    let o = overlaps_at(family, x)?;
    let n = o.rows();
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let scale = (o.get(i, i).re * o.get(j, j).re).sqrt();
            let z = o.get(i, j);
            entries.push((z.norm() > MASK_THRESHOLD * scale).then(|| z.ln()));
        }
    }
    Ok(InteractionMatrix {
        site: x.clone(),
        size: n,
        entries,
    })
}

/// Behaviour of `Π_{x∉Λ_n} o_x(i,j)` over the sites not yet visited.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TailClass {
    /// The remaining product lies within `e^S - 1` of 1.
    Unit { deviation_sum: f64 },
    /// The remaining product has modulus at most `magnitude`.
    Vanishing { magnitude: f64 },
}

impl TailClass {
    /// Bound on `|limit - p|` given the current partial product `p`.
    pub fn bound(&self, p: C64) -> f64 {
        let a = p.norm();
        if a == 0.0 {
            return 0.0;
        }
        match *self {
            TailClass::Unit { deviation_sum } => a * deviation_sum.exp_m1(),
            TailClass::Vanishing { magnitude } => a * (1.0 + magnitude),
        }
    }
}

/// Per-entry tail classes, row-major `d_I x d_I`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailCertificate {
    pub size: usize,
    pub classes: Vec<TailClass>,
}

impl TailCertificate {
    pub fn uniform(size: usize, class: TailClass) -> Self {
        Self {
            size,
            classes: vec![class; size * size],
        }
    }

    /// Diagonal entries `Unit`, off-diagonal entries `Vanishing`.
    pub fn diagonal_split(size: usize, deviation_sum: f64, magnitude: f64) -> Self {
        let classes = (0..size * size)
            .map(|k| {
                if k / size == k % size {
                    TailClass::Unit { deviation_sum }
                } else {
                    TailClass::Vanishing { magnitude }
                }
            })
            .collect();
        Self { size, classes }
    }

    pub fn class(&self, i: usize, j: usize) -> TailClass {
        self.classes[i * self.size + j]
    }

    /// Largest entrywise bound for the partial products `p`.
    pub fn bound(&self, p: &CMatrix) -> f64 {
        p.as_slice()
            .iter()
            .zip(&self.classes)
            .map(|(z, c)| c.bound(*z))
            .fold(0.0, f64::max)
    }
}

/// A family of fiber vectors with enough structure to take limits.
pub trait LimitModel: FiberSource {
    /// Default exhaustion of the site set.
    fn exhaustion(&self) -> Exhaustion;

    /// Overlaps used in boundary and transfer products.
    fn tail_overlaps(&self, x: &Site) -> Result<CMatrix> {
        overlaps_at(self, x)
    }

    /// Bound on the product over all sites with `|x| > radius`. `Ok(None)`
    /// means no bound is available yet; an error means the product provably
    /// does not converge.
    fn tail_certificate(&self, radius: u64) -> Result<Option<TailCertificate>>;
}

impl<T: LimitModel + ?Sized> LimitModel for &T {
    fn exhaustion(&self) -> Exhaustion {
        (**self).exhaustion()
    }
    fn tail_overlaps(&self, x: &Site) -> Result<CMatrix> {
        (**self).tail_overlaps(x)
    }
    fn tail_certificate(&self, radius: u64) -> Result<Option<TailCertificate>> {
        (**self).tail_certificate(radius)
    }
}

impl LimitModel for FiberFamily {
    fn exhaustion(&self) -> Exhaustion {
        Exhaustion::Enumerated(self.sites().to_vec())
    }

    fn tail_certificate(&self, _radius: u64) -> Result<Option<TailCertificate>> {
        Ok(None)
    }
}

/// `β_{Λ^c}` together with how it was obtained.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryMatrix {
    pub region: Vec<Site>,
    pub entries: CMatrix,
    /// Certified bound on the entrywise distance to the true limit.
    pub tail_bound: f64,
    /// Sites multiplied in.
    pub sites_used: usize,
    /// Last completed shell radius, for lattice exhaustions.
    pub radius: Option<u64>,
}

fn check_region_in_exhaustion(region: &[Site], exhaustion: &Exhaustion) -> Result<()> {
    ensure_distinct(region)?;
    match exhaustion {
        Exhaustion::Enumerated(sites) => {
            if !is_subset(region, sites) {
                return Err(Error::Precondition(
                    "region is not contained in the site set".into(),
                ));
            }
        }
        Exhaustion::Lattice { dim, .. } => {
            if let Some(x) = region.iter().find(|x| x.dim() != *dim) {
                return Err(Error::Precondition(format!(
                    "site {x} is not a point of Z^{dim}"
                )));
            }
        }
    }
    Ok(())
}

/// `β_{Λ^c;i,j}` by direct partial products along `exhaustion`.
pub fn boundary_matrix<M: LimitModel + ?Sized>(
    model: &M,
    region: &[Site],
    exhaustion: &Exhaustion,
    tail_tol: f64,
) -> Result<BoundaryMatrix> {
    check_region_in_exhaustion(region, exhaustion)?;
    let skip: BTreeSet<&Site> = region.iter().collect();
    let n = model.index_size();
    let mut p = CMatrix::ones(n, n);
    let mut used = 0usize;
    let mut last_bound = f64::INFINITY;
    let mut r = 0u64;
    while let Some(shell) = exhaustion.shell(r) {
        for x in shell.iter().filter(|x| !skip.contains(x)) {
            p = hadamard(&p, &model.tail_overlaps(x)?)?;
            used += 1;
            if used > SITE_CAP {
                return Err(Error::Convergence {
                    steps: used,
                    detail: format!(
                        "site cap reached; last partial products {:?}, last tail estimate {last_bound:.3e}",
                        p.as_slice()
                    ),
                });
            }
        }
        if exhaustion.is_finite() {
            // A finite exhaustion yields one shell holding every site.
            return Ok(BoundaryMatrix {
                region: region.to_vec(),
                entries: p,
                tail_bound: 0.0,
                sites_used: used,
                radius: None,
            });
        }
        if let Some(cert) = model.tail_certificate(r)? {
            last_bound = cert.bound(&p);
            if last_bound <= tail_tol {
                return Ok(BoundaryMatrix {
                    region: region.to_vec(),
                    entries: p,
                    tail_bound: last_bound,
                    sites_used: used,
                    radius: Some(r),
                });
            }
        }
        r += 1;
    }
    unreachable!("lattice exhaustions never run out of shells")
}

/// `β_{Λ,Λ0;i,j} = Π_{x∈Λ∖Λ0} Tr(h_{x,i} h_{x,j}^*)`.
pub fn transfer_matrix<M: LimitModel + ?Sized>(
    model: &M,
    region: &[Site],
    inner: &[Site],
) -> Result<CMatrix> {
    if !is_subset(inner, region) {
        return Err(Error::Precondition(
            "inner region is not contained in the outer region".into(),
        ));
    }
    ensure_distinct(region)?;
    let n = model.index_size();
    difference(region, inner)
        .iter()
        .try_fold(CMatrix::ones(n, n), |acc, x| {
            hadamard(&acc, &model.tail_overlaps(x)?)
        })
}

/// `ψ̂_Λ(b)` from an already computed boundary matrix for `Λ`.
pub fn limit_state_with<M: LimitModel + ?Sized>(
    model: &M,
    obs: &LocalObservable,
    beta: &BoundaryMatrix,
) -> Result<C64> {
    let region: BTreeSet<&Site> = obs.region().iter().collect();
    let bregion: BTreeSet<&Site> = beta.region.iter().collect();
    if region != bregion {
        return Err(Error::Precondition(
            "boundary matrix belongs to a different region".into(),
        ));
    }
    let mut acc = beta.entries.clone();
    for (x, b) in obs.region().iter().zip(obs.factors()) {
        acc = hadamard(&acc, &trace_matrix(model, x, b)?)?;
    }
    Ok(all_ones_form(&acc))
}

/// `ψ̂_Λ(b_Λ)`.
pub fn limit_state_eval<M: LimitModel + ?Sized>(
    model: &M,
    obs: &LocalObservable,
    exhaustion: &Exhaustion,
    tail_tol: f64,
) -> Result<C64> {
    obs.check_fiber(model.fiber_dim())?;
    let beta = boundary_matrix(model, obs.region(), exhaustion, tail_tol)?;
    limit_state_with(model, obs, &beta)
}

/// `Σ_{i,j} β_{V;i,j} = ψ̂(1)`.
pub fn normalization<M: LimitModel + ?Sized>(
    model: &M,
    exhaustion: &Exhaustion,
    tail_tol: f64,
) -> Result<f64> {
    let beta = boundary_matrix(model, &[], exhaustion, tail_tol)?;
    Ok(all_ones_form(&beta.entries).re)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectivityReport {
    /// `ψ̂_Λ(b_{Λ0} ⊗ 1_{Λ∖Λ0})`.
    #[serde(serialize_with = "crate::algebra::serialize_c64")]
    pub outer: C64,
    /// `ψ̂_{Λ0}(b_{Λ0})`.
    #[serde(serialize_with = "crate::algebra::serialize_c64")]
    pub inner: C64,
    pub gap: f64,
    pub scale: f64,
    pub pass: bool,
}

/// Compares `ψ̂_Λ(b ⊗ 1)` with `ψ̂_{Λ0}(b)`, `b` living on `Λ0`.
pub fn check_projectivity<M: LimitModel + ?Sized>(
    model: &M,
    outer_region: &[Site],
    obs: &LocalObservable,
    exhaustion: &Exhaustion,
    tol: f64,
    tail_tol: f64,
) -> Result<ProjectivityReport> {
    if !is_subset(obs.region(), outer_region) {
        return Err(Error::Precondition(
            "observable region is not inside the outer region".into(),
        ));
    }
    let extra =
        LocalObservable::identity(difference(outer_region, obs.region()), model.fiber_dim())?;
    let outer = limit_state_eval(model, &obs.concat(&extra)?, exhaustion, tail_tol)?;
    let inner = limit_state_eval(model, obs, exhaustion, tail_tol)?;
    let gap = (outer - inner).norm();
    let scale = inner.norm().max(outer.norm()).max(1.0);
    Ok(ProjectivityReport {
        outer,
        inner,
        gap,
        scale,
        pass: gap <= tol * scale,
    })
}

/// `h = exp(H/2) W^*` with `H = log T`.
#[derive(Clone, Debug)]
pub struct RightSqrt {
    /// Row `i` is the fiber vector `h_i`.
    pub h: CMatrix,
    /// `H = log T`.
    pub log: CMatrix,
    /// `Tr|D_H|`, the sum of absolute eigenvalues of `H`.
    pub trace_norm: f64,
}

impl RightSqrt {
    pub fn vectors(&self) -> Vec<CVector> {
        (0..self.h.rows()).map(|i| self.h.row(i)).collect()
    }
}

/// Right square root of a positive definite `T` along the isometry `w`
/// (`m x d_I`, `w^* w = 1`). The rows `h_i` of the result satisfy
/// `<h_j, h_i> = T_ij`.
pub fn right_sqrt(t: &CMatrix, w: &CMatrix) -> Result<RightSqrt> {
    let eig = eigh(t, 1e-12)?;
    if eig.max() <= 0.0 || eig.min() <= 1e-12 * eig.max() {
        return Err(Error::Domain(format!(
            "T must be positive definite, eigenvalues span [{:.3e}, {:.3e}]",
            eig.min(),
            eig.max()
        )));
    }
    if w.cols() != t.rows() || w.rows() < w.cols() {
        return Err(Error::Dimension(format!(
            "isometry must be m x {} with m >= {}, got {:?}",
            t.rows(),
            t.rows(),
            w.shape()
        )));
    }
    let defect = isometry_defect(w);
    if defect > ISOMETRY_TOL {
        return Err(Error::Domain(format!(
            "W is not an isometry (defect {defect:.3e})"
        )));
    }
    let log = eig.reconstruct(f64::ln);
    let half = eig.reconstruct(|l| l.sqrt());
    let trace_norm = eig.values.iter().map(|l| l.ln().abs()).sum();
    Ok(RightSqrt {
        h: half.matmul(&w.adjoint())?,
        log,
        trace_norm,
    })
}

/// One generator record: `T_x = U^* exp(D) U`, vectors from `right_sqrt(T_x, W)`.
#[derive(Clone, Debug)]
pub struct GeneratorRecord {
    pub site: Site,
    pub d_h: Vec<f64>,
    pub u: CMatrix,
    pub w: CMatrix,
}

#[derive(Clone, Debug)]
pub struct GeneratorSpec {
    pub lattice: Lattice,
    pub index_size: usize,
    pub records: Vec<GeneratorRecord>,
    /// Sites with `|x|` above this carry `D = 0`.
    pub beyond_radius: Option<u64>,
}

#[derive(Clone, Debug)]
struct GeneratedSite {
    vectors: Vec<CVector>,
    overlaps: CMatrix,
    trace_abs: f64,
}

/// Fiber family built from generators. Unlisted sites have `D = 0`,
/// `U = W = 1`, hence the standard basis as fiber vectors.
#[derive(Clone, Debug)]
pub struct GeneratedModel {
    lattice: Lattice,
    n: usize,
    sites: BTreeMap<Site, GeneratedSite>,
    summability: f64,
}

impl GeneratedModel {
    /// `Σ_x Tr|D_{H_x}|`.
    pub fn summability(&self) -> f64 {
        self.summability
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// `T_x`, the overlap matrix prescribed at `x`.
    pub fn target_overlaps(&self, x: &Site) -> CMatrix {
        self.sites
            .get(x)
            .map(|s| s.overlaps.clone())
            .unwrap_or_else(|| CMatrix::identity(self.n))
    }

    /// `Tr|D_{H_x}|` at `x`, zero when unlisted.
    pub fn trace_abs(&self, x: &Site) -> f64 {
        self.sites.get(x).map_or(0.0, |s| s.trace_abs)
    }
}

pub fn build_from_generators(spec: &GeneratorSpec) -> Result<GeneratedModel> {
    let n = spec.index_size;
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, rec) in spec.records.iter().enumerate() {
        let loc = |f: &str| format!("generators[{k}] (site {}).{f}", rec.site);
        if !spec.lattice.contains(&rec.site) {
            violations.push(Violation::new(loc("site"), "site is not in the lattice"));
        }
        if !seen.insert(rec.site.clone()) {
            violations.push(Violation::new(loc("site"), "site listed twice"));
        }
        if let Some(r) = spec.beyond_radius {
            if rec.site.norm1() > r {
                violations.push(Violation::new(
                    loc("site"),
                    format!("site lies beyond radius {r}"),
                ));
            }
        }
        if rec.d_h.len() != n {
            violations.push(Violation::new(
                loc("D_H"),
                format!("expected {n} entries, got {}", rec.d_h.len()),
            ));
        }
        if rec.d_h.iter().any(|v| !v.is_finite()) {
            violations.push(Violation::new(loc("D_H"), "non-finite entry"));
        }
        if rec.u.shape() != (n, n) {
            violations.push(Violation::new(
                loc("U"),
                format!("expected {n}x{n}, got {:?}", rec.u.shape()),
            ));
        } else if isometry_defect(&rec.u) > ISOMETRY_TOL {
            violations.push(Violation::new(
                loc("U"),
                format!("not unitary (defect {:.3e})", isometry_defect(&rec.u)),
            ));
        }
        if rec.w.shape() != (n, n) {
            violations.push(Violation::new(
                loc("W"),
                format!("expected {n}x{n}, got {:?}", rec.w.shape()),
            ));
        } else if isometry_defect(&rec.w) > ISOMETRY_TOL {
            violations.push(Violation::new(
                loc("W"),
                format!("not an isometry (defect {:.3e})", isometry_defect(&rec.w)),
            ));
        }
    }
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let mut sites = BTreeMap::new();
    let mut summability = 0.0;
    for rec in &spec.records {
        let e = CMatrix::diag_real(&rec.d_h.iter().map(|v| v.exp()).collect::<Vec<_>>());
        let t = rec.u.adjoint().matmul(&e)?.matmul(&rec.u)?;
        let t = crate::algebra::hermitian_part(&t)?;
        let root = right_sqrt(&t, &rec.w)?;
        let trace_abs: f64 = rec.d_h.iter().map(|v| v.abs()).sum();
        summability += trace_abs;
        sites.insert(
            rec.site.clone(),
            GeneratedSite {
                vectors: root.vectors(),
                overlaps: t,
                trace_abs,
            },
        );
    }
    Ok(GeneratedModel {
        lattice: spec.lattice.clone(),
        n,
        sites,
        summability,
    })
}

impl FiberSource for GeneratedModel {
    fn fiber_dim(&self) -> usize {
        self.n
    }
    fn index_size(&self) -> usize {
        self.n
    }
    fn fiber_vectors(&self, site: &Site) -> Result<Vec<CVector>> {
        if let Some(s) = self.sites.get(site) {
            return Ok(s.vectors.clone());
        }
        if !self.lattice.contains(site) {
            return Err(Error::Precondition(format!(
                "site {site} is not in the lattice"
            )));
        }
        Ok((0..self.n).map(|i| CVector::basis(self.n, i)).collect())
    }
}

impl LimitModel for GeneratedModel {
    fn exhaustion(&self) -> Exhaustion {
        Exhaustion::for_lattice(&self.lattice)
    }

    fn tail_certificate(&self, radius: u64) -> Result<Option<TailCertificate>> {
        // |T_x - 1| <= e^{Tr|D_x|} - 1 entrywise.
        let s: f64 = self
            .sites
            .iter()
            .filter(|(x, _)| x.norm1() > radius)
            .map(|(_, g)| g.trace_abs.exp_m1())
            .sum();
        Ok(Some(TailCertificate::diagonal_split(self.n, s, s.exp())))
    }
}

/// Random generator spec on `Z^dim` with `Tr|D_{H_x}| = 2^{-|x|}` for
/// `|x| <= radius`, random `U_x`, `W_x`.
pub fn geometric_generator_spec<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    n: usize,
    radius: u64,
) -> GeneratorSpec {
    let records = crate::lattice::ball(dim, radius)
        .into_iter()
        .map(|site| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let target = 0.5f64.powi(site.norm1() as i32);
            let d_h = raw
                .iter()
                .map(|v| {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    sign * v / total * target
                })
                .collect();
            GeneratorRecord {
                site,
                d_h,
                u: random_unitary(rng, n),
                w: random_unitary(rng, n),
            }
        })
        .collect();
    GeneratorSpec {
        lattice: Lattice::Zd { dim },
        index_size: n,
        records,
        beyond_radius: Some(radius),
    }
}

/// `Σ_{k>r} #{|z| = k} q^k` on `Z^dim`, with a certified remainder.
pub fn geometric_shell_tail(dim: usize, r: u64, q: f64) -> f64 {
    assert!((0.0..1.0).contains(&q));
    if q == 0.0 {
        return 0.0;
    }
    let rho_target = 0.5 * (1.0 + q);
    let mut sum = 0.0;
    let mut k = r + 1;
    loop {
        let term = sphere_size(dim, k) * q.powi(k as i32);
        sum += term;
        // Ratios of consecutive terms decrease in k; once below rho_target the
        // rest is dominated by a geometric series.
        let rho = sphere_size(dim, k + 1) / sphere_size(dim, k) * q;
        if rho <= rho_target && (term <= 1e-17 * sum || term == 0.0) {
            return sum + term * rho / (1.0 - rho);
        }
        k += 1;
    }
}

/// Family `h_{x,i} = (h + ε_x v_i) / ‖h + ε_x v_i‖` on `Z^dim`, with
/// `ε_x = scale · ratio^{|x|}` and `h` a unit vector.
#[derive(Clone, Debug)]
pub struct PerturbedModel {
    dim: usize,
    h: CVector,
    v: Vec<CVector>,
    scale: f64,
    ratio: f64,
}

impl PerturbedModel {
    pub fn new(dim: usize, h: CVector, v: Vec<CVector>, scale: f64, ratio: f64) -> Result<Self> {
        let mut violations = Vec::new();
        if (h.norm() - 1.0).abs() > 1e-12 {
            violations.push(Violation::new(
                "perturbed.h",
                format!("must be a unit vector, norm {}", h.norm()),
            ));
        }
        for (i, vi) in v.iter().enumerate() {
            if vi.dim() != h.dim() {
                violations.push(Violation::new(
                    format!("perturbed.v[{i}]"),
                    "dimension differs from h",
                ));
            }
        }
        if v.is_empty() {
            violations.push(Violation::new(
                "perturbed.v",
                "at least one direction is required",
            ));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            violations.push(Violation::new("perturbed.ratio", "must lie in (0, 1)"));
        }
        if !(scale >= 0.0 && scale.is_finite()) {
            violations.push(Violation::new(
                "perturbed.scale",
                "must be finite and non-negative",
            ));
        } else {
            for (i, vi) in v.iter().enumerate().filter(|(_, vi)| vi.dim() == h.dim()) {
                // min over e in [0, scale] of |h + e v|^2 = 1 + 2e Re<h,v> + e^2 |v|^2
                let a = vi.norm_sqr();
                let b = h.inner(vi).re;
                let e = if a > 0.0 {
                    (-b / a).clamp(0.0, scale)
                } else {
                    0.0
                };
                if 1.0 + 2.0 * e * b + e * e * a <= 1e-12 {
                    violations.push(Violation::new(
                        format!("perturbed.v[{i}]"),
                        "h + eps v vanishes for some eps",
                    ));
                }
            }
        }
        if dim == 0 {
            violations.push(Violation::new("lattice.dim", "must be positive"));
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(Self {
            dim,
            h,
            v,
            scale,
            ratio,
        })
    }

    pub fn epsilon(&self, x: &Site) -> f64 {
        self.scale * self.ratio.powi(x.norm1() as i32)
    }

    pub fn lattice_dim(&self) -> usize {
        self.dim
    }

    /// The far-field vector `h`.
    pub fn limit_vector(&self) -> &CVector {
        &self.h
    }

    fn vmax(&self) -> f64 {
        self.v.iter().map(CVector::norm).fold(0.0, f64::max)
    }
}

impl FiberSource for PerturbedModel {
    fn fiber_dim(&self) -> usize {
        self.h.dim()
    }
    fn index_size(&self) -> usize {
        self.v.len()
    }
    fn fiber_vectors(&self, site: &Site) -> Result<Vec<CVector>> {
        if site.dim() != self.dim {
            return Err(Error::Precondition(format!(
                "site {site} is not a point of Z^{}",
                self.dim
            )));
        }
        let e = C64::new(self.epsilon(site), 0.0);
        Ok(self
            .v
            .iter()
            .map(|vi| {
                let u = self.h.add(&vi.scale(e));
                u.scale(C64::new(1.0 / u.norm(), 0.0))
            })
            .collect())
    }
}

impl LimitModel for PerturbedModel {
    fn exhaustion(&self) -> Exhaustion {
        Exhaustion::Lattice {
            dim: self.dim,
            shuffle: None,
        }
    }

    fn tail_certificate(&self, radius: u64) -> Result<Option<TailCertificate>> {
        // |<h_j,h_i> - 1| <= ‖h_i - h_j‖ <= 4 ε_x max‖v‖.
        let s = 4.0 * self.vmax() * self.scale * geometric_shell_tail(self.dim, radius, self.ratio);
        Ok(Some(TailCertificate::uniform(
            self.v.len(),
            TailClass::Unit { deviation_sum: s },
        )))
    }
}

/// Whether a set of fiber vectors is linearly independent without spanning
/// the fiber.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct IndependenceDiagnostic {
    pub independent: bool,
    pub spanning: bool,
    /// `independent && !spanning`.
    pub independent_non_basis: bool,
}

pub fn independence_diagnostic(vectors: &[CVector]) -> Result<IndependenceDiagnostic> {
    let d = vectors.first().map_or(0, CVector::dim);
    let g = gram_of(vectors);
    let eig = eigh(&g, 1e-10)?;
    let cut = 1e-10 * eig.max().max(f64::MIN_POSITIVE);
    let rank = eig.values.iter().filter(|&&l| l > cut).count();
    let independent = rank == vectors.len();
    let spanning = rank == d;
    Ok(IndependenceDiagnostic {
        independent,
        spanning,
        independent_non_basis: independent && !spanning,
    })
}

/// Convenience: `ψ̂_Λ(b) / ψ̂(1)`.
pub fn normalized_limit_eval<M: LimitModel + ?Sized>(
    model: &M,
    obs: &LocalObservable,
    exhaustion: &Exhaustion,
    tail_tol: f64,
) -> Result<C64> {
    let z = normalization(model, exhaustion, tail_tol)?;
    if z <= crate::state::NORMALIZATION_FLOOR {
        return Err(Error::Precondition(format!(
            "limit state has vanishing norm {z:.3e}"
        )));
    }
    Ok(limit_state_eval(model, obs, exhaustion, tail_tol)? / z)
}

/// Per-site check that the Gram matrix of the built vectors reproduces `T_x`.
pub fn generator_gram_defect(model: &GeneratedModel, x: &Site) -> Result<f64> {
    let t = model.target_overlaps(x);
    let t = hermitian_function(&t, |l| l)?;
    let g = overlaps_at(model, x)?;
    g.max_abs_diff(&t)
}
