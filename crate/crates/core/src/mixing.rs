//! Mixing of limit states on `Z^ν`.
//!
//! An observable `b` on `Λ'` is carried far away by an embedding `J_t` whose
//! image avoids the ball `D_t`. The mixing gap compares the state of
//! `a · J_t(b)` with the product of the separate values; the α-mixing gap
//! replaces the second factor by the far-field limit `α(b)`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{hadamard, CMatrix, C64};
use crate::error::{Error, Result};
use crate::kernel::trace_matrix;
use crate::lattice::{sphere, Exhaustion};
use crate::limit::{boundary_matrix, limit_state_with, normalization, LimitModel};
use crate::random::rng_from_seed;
use crate::site::{ensure_distinct, Site};
use crate::state::{LocalObservable, NORMALIZATION_FLOOR};

pub use crate::lattice::ball;

/// Default clearances for the far-field limit.
pub const DEFAULT_T_SEQUENCE: [u64; 5] = [5, 10, 20, 40, 80];

/// Cauchy tolerance for the far-field limit.
pub const DEFAULT_CAUCHY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// `y + (t + 1 + R) e_1`, `R = max |y|`.
    Translate,
    /// Seeded injection into the sphere of radius `t + 1 + R`.
    Random(u64),
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Translate => "translate".into(),
            Strategy::Random(seed) => format!("random:{seed}"),
        }
    }
}

/// `J_t : Λ' → Z^ν`, image outside `D_t`.
#[derive(Clone, Debug, Serialize)]
pub struct Embedding {
    pub source: Vec<Site>,
    pub image: Vec<Site>,
    pub clearance: u64,
}

impl Embedding {
    /// `b` moved to the image sites.
    pub fn transport(&self, obs: &LocalObservable) -> Result<LocalObservable> {
        if obs.region() != self.source.as_slice() {
            return Err(Error::Geometry(
                "observable region differs from the embedding source".into(),
            ));
        }
        obs.relocated(self.image.clone())
    }
}

pub fn embed(source: &[Site], t: u64, strategy: Strategy) -> Result<Embedding> {
    ensure_distinct(source)?;
    let dim = match source.first() {
        Some(y) => y.dim(),
        None => return Err(Error::Geometry("cannot embed an empty region".into())),
    };
    if dim == 0 || source.iter().any(|y| y.dim() != dim) {
        return Err(Error::Geometry(
            "source sites must share a positive dimension".into(),
        ));
    }
    let reach = source.iter().map(Site::norm1).max().unwrap_or(0);
    let shift = t + 1 + reach;
    let image = match strategy {
        Strategy::Translate => source.iter().map(|y| y.shifted(0, shift as i64)).collect(),
        Strategy::Random(seed) => {
            let mut r = shift;
            let mut shell = sphere(dim, r);
            while shell.len() < source.len() {
                r += 1;
                shell = sphere(dim, r);
            }
            shell.shuffle(&mut rng_from_seed(
                seed ^ t.wrapping_mul(0xA24B_AED4_963E_E407),
            ));
            shell.truncate(source.len());
            shell
        }
    };
    let e = Embedding {
        source: source.to_vec(),
        image,
        clearance: t,
    };
    if let Some(z) = e.image.iter().find(|z| z.norm1() <= t) {
        return Err(Error::Geometry(format!(
            "embedded site {z} lies inside D_{t}"
        )));
    }
    ensure_distinct(&e.image)?;
    Ok(e)
}

fn lattice_dim<M: LimitModel + ?Sized>(model: &M) -> Result<(usize, Exhaustion)> {
    match model.exhaustion() {
        e @ Exhaustion::Lattice { dim, .. } => Ok((dim, e)),
        Exhaustion::Enumerated(_) => Err(Error::Geometry("mixing needs a model on Z^ν".into())),
    }
}

/// Far-field limits `lim_t Π_{y∈Λ'} Tr(h_{J_t(y),i} h_{J_t(y),j}^* b_y)`.
#[derive(Clone, Debug, Serialize)]
pub struct AlphaLimit {
    /// Entry `(i,j)`: the limit for that index pair.
    pub per_pair: CMatrix,
    /// Largest change between the last two clearances.
    pub cauchy_gap: f64,
    /// All pairs share one limit within the tolerance.
    pub independent: bool,
    /// `α(b)`, present when independent.
    #[serde(serialize_with = "serialize_opt_c64")]
    pub value: Option<C64>,
}

fn serialize_opt_c64<S: serde::Serializer>(
    z: &Option<C64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    z.map(crate::algebra::c64_to_pair).serialize(s)
}

fn far_traces<M: LimitModel + ?Sized>(
    model: &M,
    obs: &LocalObservable,
    emb: &Embedding,
) -> Result<CMatrix> {
    let n = model.index_size();
    emb.image
        .iter()
        .zip(obs.factors())
        .try_fold(CMatrix::ones(n, n), |acc, (z, b)| {
            hadamard(&acc, &trace_matrix(model, z, b)?)
        })
}

pub fn alpha_limit<M: LimitModel + ?Sized>(
    model: &M,
    obs: &LocalObservable,
    t_sequence: &[u64],
    tol: f64,
    strategy: Strategy,
) -> Result<AlphaLimit> {
    lattice_dim(model)?;
    obs.check_fiber(model.fiber_dim())?;
    if t_sequence.len() < 2 {
        return Err(Error::Precondition(
            "the clearance sequence needs at least two values".into(),
        ));
    }
    let seq = t_sequence
        .iter()
        .map(|&t| far_traces(model, obs, &embed(obs.region(), t, strategy)?))
        .collect::<Result<Vec<_>>>()?;
    let last = &seq[seq.len() - 1];
    let prev = &seq[seq.len() - 2];
    let cauchy_gap = last.max_abs_diff(prev)?;
    if cauchy_gap > tol * last.max_abs().max(1.0) {
        return Err(Error::Convergence {
            steps: t_sequence.len(),
            detail: format!(
                "far-field traces still move by {cauchy_gap:.3e} between t = {} and t = {}",
                t_sequence[t_sequence.len() - 2],
                t_sequence[t_sequence.len() - 1]
            ),
        });
    }
    let first = last.get(0, 0);
    let independent = last
        .as_slice()
        .iter()
        .all(|z| (z - first).norm() <= tol * first.norm().max(1.0));
    Ok(AlphaLimit {
        per_pair: last.clone(),
        cauchy_gap,
        independent,
        value: independent.then_some(first),
    })
}

/// The three normalized limit-state values entering the mixing gaps.
#[derive(Clone, Debug, Serialize)]
pub struct MixingTerms {
    pub t: u64,
    pub embedding: Embedding,
    #[serde(serialize_with = "crate::algebra::serialize_c64")]
    pub joint: C64,
    #[serde(serialize_with = "crate::algebra::serialize_c64")]
    pub near: C64,
    #[serde(serialize_with = "crate::algebra::serialize_c64")]
    pub far: C64,
}

impl MixingTerms {
    /// `|ψ̂(a J_t(b)) - ψ̂(a) ψ̂(J_t(b))|`.
    pub fn mixing_gap(&self) -> f64 {
        (self.joint - self.near * self.far).norm()
    }

    /// `|ψ̂(a J_t(b)) - ψ̂(a) α(b)|`.
    pub fn alpha_mixing_gap(&self, alpha: &AlphaLimit) -> Result<f64> {
        match alpha.value {
            Some(v) => Ok((self.joint - self.near * v).norm()),
            None => Err(alpha_undefined()),
        }
    }
}

/// Normalized `ψ̂` at `a`, at `J_t(b)` and at their product.
pub fn mixing_terms<M: LimitModel + ?Sized>(
    model: &M,
    a: &LocalObservable,
    b: &LocalObservable,
    t: u64,
    strategy: Strategy,
    tail_tol: f64,
) -> Result<MixingTerms> {
    let (_, ex) = lattice_dim(model)?;
    if t == 0 || a.region().iter().any(|x| x.norm1() + 1 > t) {
        return Err(Error::Geometry(format!(
            "region of a must lie in D_{}",
            t.saturating_sub(1)
        )));
    }
    let emb = embed(b.region(), t, strategy)?;
    let jb = emb.transport(b)?;
    if jb.region().iter().any(|z| a.region().contains(z)) {
        return Err(Error::Geometry(
            "embedded region overlaps the region of a".into(),
        ));
    }
    let z = normalization(model, &ex, tail_tol)?;
    if z <= NORMALIZATION_FLOOR {
        return Err(Error::Precondition(format!(
            "limit state has vanishing norm {z:.3e}"
        )));
    }
    let ajb = a.concat(&jb)?;
    let eval = |obs: &LocalObservable| -> Result<C64> {
        let beta = boundary_matrix(model, obs.region(), &ex, tail_tol)?;
        Ok(limit_state_with(model, obs, &beta)? / z)
    };
    Ok(MixingTerms {
        t,
        joint: eval(&ajb)?,
        near: eval(a)?,
        far: eval(&jb)?,
        embedding: emb,
    })
}

pub fn mixing_gap<M: LimitModel + ?Sized>(
    model: &M,
    a: &LocalObservable,
    b: &LocalObservable,
    t: u64,
    strategy: Strategy,
    tail_tol: f64,
) -> Result<f64> {
    Ok(mixing_terms(model, a, b, t, strategy, tail_tol)?.mixing_gap())
}

pub fn alpha_mixing_gap<M: LimitModel + ?Sized>(
    model: &M,
    a: &LocalObservable,
    b: &LocalObservable,
    t: u64,
    alpha: &AlphaLimit,
    strategy: Strategy,
    tail_tol: f64,
) -> Result<f64> {
    if alpha.value.is_none() {
        return Err(alpha_undefined());
    }
    mixing_terms(model, a, b, t, strategy, tail_tol)?.alpha_mixing_gap(alpha)
}

fn alpha_undefined() -> Error {
    Error::Precondition(
        "far-field limits depend on the index pair, so α(b) is undefined and α-mixing cannot be assessed".into(),
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub t: u64,
    pub strategy: String,
    pub mixing_gap: f64,
    pub alpha_mixing_gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    /// Per strategy, in input order: fraction of consecutive decreases of the mixing gap.
    pub trend: Vec<(String, f64)>,
    pub alpha: Vec<(String, AlphaLimit)>,
}

impl ScanTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,strategy,mixing_gap,alpha_mixing_gap\n");
        for r in &self.rows {
            let alpha = r
                .alpha_mixing_gap
                .map(|g| format!("{g:.16e}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.16e},{}\n",
                r.t, r.strategy, r.mixing_gap, alpha
            ));
        }
        out
    }

    pub fn column(&self, strategy: &str) -> Vec<&ScanRow> {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .collect()
    }
}

/// Options for [`mixing_scan`].
#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub tail_tol: f64,
    pub alpha_t_sequence: Vec<u64>,
    pub cauchy_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            tail_tol: crate::limit::DEFAULT_TAIL_TOL,
            alpha_t_sequence: DEFAULT_T_SEQUENCE.to_vec(),
            cauchy_tol: DEFAULT_CAUCHY_TOL,
        }
    }
}

/// Gap table over `t_list` x `strategies`, rows in that order. Rows are
/// computed in parallel on the current rayon pool.
pub fn mixing_scan<M: LimitModel + Sync + ?Sized>(
    model: &M,
    a: &LocalObservable,
    b: &LocalObservable,
    t_list: &[u64],
    strategies: &[Strategy],
    opts: &ScanOptions,
) -> Result<ScanTable> {
    let alpha = strategies
        .iter()
        .map(|&s| {
            Ok((
                s.label(),
                alpha_limit(model, b, &opts.alpha_t_sequence, opts.cauchy_tol, s)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(u64, usize)> = t_list
        .iter()
        .flat_map(|&t| (0..strategies.len()).map(move |k| (t, k)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(t, k)| {
            let terms = mixing_terms(model, a, b, t, strategies[k], opts.tail_tol)?;
            let alpha_gap = alpha[k]
                .1
                .value
                .map(|v| (terms.joint - terms.near * v).norm());
            Ok(ScanRow {
                t,
                strategy: strategies[k].label(),
                mixing_gap: terms.mixing_gap(),
                alpha_mixing_gap: alpha_gap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let trend = strategies
        .iter()
        .map(|s| {
            let label = s.label();
            let col: Vec<f64> = rows
                .iter()
                .filter(|r| r.strategy == label)
                .map(|r| r.mixing_gap)
                .collect();
            let pairs = col.len().saturating_sub(1);
            let down = col.windows(2).filter(|w| w[1] < w[0]).count();
            (
                label,
                if pairs == 0 {
                    0.0
                } else {
                    down as f64 / pairs as f64
                },
            )
        })
        .collect();
    Ok(ScanTable { rows, trend, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::CVector;
    use crate::homogeneous::HomogeneousModel;
    use crate::lattice::Lattice;
    use crate::limit::PerturbedModel;
    use crate::random::{random_observable, rng_from_seed};

    fn eps_model() -> PerturbedModel {
        let h = CVector::basis(2, 0);
        let v = vec![
            CVector::basis(2, 1),
            CVector::basis(2, 1).scale(C64::new(0.0, 1.0)),
        ];
        PerturbedModel::new(2, h, v, 1.0, 0.5).unwrap()
    }

    fn diag_proj() -> CMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = CVector::from_real(&[s, s]);
        u.outer(&u)
    }

    fn origin() -> Site {
        Site::new([0, 0])
    }

    #[test]
    fn embedding_examples() {
        let e = embed(&[origin()], 3, Strategy::Translate).unwrap();
        assert_eq!(e.image, vec![Site::new([4, 0])]);
        let src = vec![origin(), Site::new([1, -1]), Site::new([0, 2])];
        for t in [0, 1, 5, 17] {
            for s in [Strategy::Translate, Strategy::Random(7)] {
                let e = embed(&src, t, s).unwrap();
                assert!(e.image.iter().all(|z| z.norm1() > t));
                assert_eq!(e.image.len(), 3);
            }
        }
        assert_eq!(
            embed(&src, 4, Strategy::Random(1)).unwrap().image,
            embed(&src, 4, Strategy::Random(1)).unwrap().image
        );
    }

    #[test]
    fn alpha_limit_examples() {
        let m = eps_model();
        let b = LocalObservable::single(origin(), diag_proj()).unwrap();
        let al = alpha_limit(&m, &b, &DEFAULT_T_SEQUENCE, 1e-8, Strategy::Translate).unwrap();
        assert!(al.independent);
        assert!((al.value.unwrap() - C64::new(0.5, 0.0)).norm() < 1e-10);
        let one = LocalObservable::identity(vec![origin(), Site::new([1, 0])], 2).unwrap();
        let al = alpha_limit(&m, &one, &DEFAULT_T_SEQUENCE, 1e-8, Strategy::Translate).unwrap();
        assert!((al.value.unwrap() - C64::new(1.0, 0.0)).norm() < 1e-10);

        let ortho = HomogeneousModel::new(vec![CVector::basis(2, 0), CVector::basis(2, 1)])
            .unwrap()
            .on(Lattice::Zd { dim: 2 });
        let p = CVector::basis(2, 0).outer(&CVector::basis(2, 0));
        let b = LocalObservable::single(origin(), p).unwrap();
        let al = alpha_limit(&ortho, &b, &DEFAULT_T_SEQUENCE, 1e-8, Strategy::Translate).unwrap();
        assert!(!al.independent && al.value.is_none());
        let a = b.clone();
        let err = alpha_mixing_gap(&ortho, &a, &b, 5, &al, Strategy::Translate, 1e-12);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn trivial_gaps() {
        let m = eps_model();
        let mut rng = rng_from_seed(70);
        let a = LocalObservable::single(origin(), random_observable(&mut rng, 2)).unwrap();
        let one = LocalObservable::identity(vec![origin()], 2).unwrap();
        assert!(mixing_gap(&m, &a, &one, 5, Strategy::Translate, 1e-12).unwrap() < 1e-12);
        assert!(mixing_gap(&m, &one, &a, 5, Strategy::Translate, 1e-12).unwrap() < 1e-12);

        let single = PerturbedModel::new(
            2,
            CVector::basis(2, 0),
            vec![CVector::basis(2, 1)],
            1.0,
            0.5,
        )
        .unwrap();
        let b = LocalObservable::single(origin(), random_observable(&mut rng, 2)).unwrap();
        for t in [1, 4, 9] {
            assert!(mixing_gap(&single, &a, &b, t, Strategy::Translate, 1e-12).unwrap() < 1e-12);
        }
        let h = CVector::from_real(&[0.6, 0.8]);
        let constant = HomogeneousModel::new(vec![h])
            .unwrap()
            .on(Lattice::Zd { dim: 2 });
        let al = alpha_limit(
            &constant,
            &b,
            &DEFAULT_T_SEQUENCE,
            1e-8,
            Strategy::Translate,
        )
        .unwrap();
        for t in [1, 4, 9] {
            let g =
                alpha_mixing_gap(&constant, &a, &b, t, &al, Strategy::Translate, 1e-12).unwrap();
            assert!(g < 1e-12);
        }
    }

    #[test]
    fn geometry_errors() {
        let m = eps_model();
        let a = LocalObservable::single(Site::new([3, 0]), diag_proj()).unwrap();
        let b = LocalObservable::single(origin(), diag_proj()).unwrap();
        assert!(matches!(
            mixing_gap(&m, &a, &b, 3, Strategy::Translate, 1e-12),
            Err(Error::Geometry(_))
        ));
        let f = crate::random::random_family(&mut rng_from_seed(1), &[Site::id(0)], 2, 2);
        let b1 = LocalObservable::single(Site::id(0), diag_proj()).unwrap();
        assert!(matches!(
            alpha_limit(&f, &b1, &[5, 10], 1e-8, Strategy::Translate),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn eps_family_scan() {
        let m = eps_model();
        let a = LocalObservable::single(origin(), diag_proj()).unwrap();
        let b = a.clone();
        let table = mixing_scan(
            &m,
            &a,
            &b,
            &[5, 10, 20, 40],
            &[Strategy::Translate, Strategy::Random(3)],
            &ScanOptions::default(),
        )
        .unwrap();
        let tr = table.column("translate");
        let rnd = table.column("random:3");
        assert!(tr[3].mixing_gap < 1e-6 && tr[0].mixing_gap > 1e3 * tr[3].mixing_gap);
        for (x, y) in tr.iter().zip(&rnd) {
            assert!((x.mixing_gap - y.mixing_gap).abs() < 1e-8);
            let (g, ag) = (x.mixing_gap, x.alpha_mixing_gap.unwrap());
            assert!(ag < 1e-6 || x.t < 40);
            // |mixing - alpha| <= |ψ̂(a)| |ψ̂(J_t b) - α(b)|
            let terms = mixing_terms(&m, &a, &b, x.t, Strategy::Translate, 1e-12).unwrap();
            let alpha = table.alpha[0].1.value.unwrap();
            assert!((g - ag).abs() <= terms.near.norm() * (terms.far - alpha).norm() + 1e-14);
        }
        let csv = table.to_csv();
        assert!(csv.starts_with("t,strategy,mixing_gap,alpha_mixing_gap\n5,translate,"));
        assert_eq!(csv.lines().count(), 9);
    }

    #[test]
    fn boundary_factors_approach_their_limits() {
        let m = eps_model();
        let ex = m.exhaustion();
        let region = vec![origin()];
        let far = embed(&region, 80, Strategy::Translate).unwrap().image;
        let both: Vec<Site> = region.iter().chain(&far).cloned().collect();
        let b_both = boundary_matrix(&m, &both, &ex, 1e-12).unwrap();
        let b_near = boundary_matrix(&m, &region, &ex, 1e-12).unwrap();
        assert!(b_both.entries.max_abs_diff(&b_near.entries).unwrap() < 1e-8);
        let b_far = boundary_matrix(&m, &far, &ex, 1e-12).unwrap();
        let b_all = boundary_matrix(&m, &[], &ex, 1e-12).unwrap();
        assert!(b_far.entries.max_abs_diff(&b_all.entries).unwrap() < 1e-8);
    }

    #[test]
    fn orthonormal_is_not_mixing() {
        let ortho = HomogeneousModel::new(vec![CVector::basis(2, 0), CVector::basis(2, 1)])
            .unwrap()
            .on(Lattice::Zd { dim: 2 });
        let p = CVector::basis(2, 0).outer(&CVector::basis(2, 0));
        let a = LocalObservable::single(origin(), p).unwrap();
        for t in [5, 10, 20, 40] {
            let g = mixing_gap(&ortho, &a, &a, t, Strategy::Translate, 1e-12).unwrap();
            assert!((g - 0.25).abs() < 1e-12);
        }
    }
}
