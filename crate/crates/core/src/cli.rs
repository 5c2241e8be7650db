//! Command-line front end: model and observable files, subcommands, reports.
//!
//! Model files are JSON. Complex numbers are `[re, im]`, vectors are arrays
//! of complex numbers, matrices are arrays of rows. Sites are integer arrays.
//!
//! ```json
//! {
//!   "lattice": {"kind": "zd", "dim": 2},
//!   "fiber_dim": 2,
//!   "index_size": 2,
//!   "mode": "homogeneous",
//!   "reference_vectors": [[[1,0],[0,0]], [[0,0],[1,0]]],
//!   "normalized": false
//! }
//! ```
//!
//! `mode` selects the vector source: `explicit` (`sites: [{site, vectors}]`,
//! enumerated lattices only), `homogeneous` (`reference_vectors`),
//! `generators` (`generators: [{site, D_H, U, W}]` plus
//! `tail: {"beyond_radius": r, "D_H": "zero"}`) or `perturbed`
//! (`perturbed: {h, v, scale, ratio}`, `ε_x = scale · ratio^{|x|}`).
//!
//! Observable files hold `{"region": [site, ...], "factors": [matrix, ...]}`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::algebra::{c64_to_pair, is_psd, rel_err, CMatrix, CVector, C64, DEFAULT_PSD_TOL};
use crate::error::{Error, Result, Violation};
use crate::homogeneous::{
    check_generic, detect_product, equal_offdiag_family, finite_normalized_count, generic_limit,
    overlaps, real_beta_limit, HomogeneousModel,
};
use crate::kernel::{
    certify_cp, overlap_of, property_s_matrix, tensor_property_s_matrix, FiberFamily, FiberSource,
};
use crate::lattice::{Exhaustion, Lattice};
use crate::limit::{
    boundary_matrix, build_from_generators, check_projectivity, geometric_generator_spec,
    independence_diagnostic, limit_state_with, normalization, right_sqrt, transfer_matrix,
    GeneratedModel, GeneratorRecord, GeneratorSpec, LimitModel, PerturbedModel, TailCertificate,
};
use crate::mixing::{mixing_scan, ScanOptions, Strategy};
use crate::random::{
    random_family, random_observable, random_positive_definite, random_unitary, random_vector,
    rng_from_seed,
};
use crate::site::{difference, is_subset, parse_region, Site};
use crate::state::{eval_dense, eval_extended, eval_schur, LocalObservable, DEFAULT_DENSE_CAP};

/// Tolerance on `Σ β_V = 1` for models flagged as normalized.
pub const NORMALIZATION_CHECK_TOL: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(
    name = "schur-states",
    version,
    about = "Superposition states built from Schur kernels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Args, Debug, Clone)]
pub struct Options {
    /// Model file (JSON).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Observable file (JSON).
    #[arg(long, global = true)]
    pub observable: Option<PathBuf>,
    /// Second observable for mixing scans; defaults to the first.
    #[arg(long = "observable-b", global = true)]
    pub observable_b: Option<PathBuf>,
    /// Region as "x1;x2;...", each site comma-separated coordinates.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub region: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Check tolerance; each subcommand has its own default.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Stopping tolerance for boundary matrices.
    #[arg(long = "tail-tol", global = true, default_value_t = crate::limit::DEFAULT_TAIL_TOL)]
    pub tail_tol: f64,
    /// Largest clearance in mixing scans.
    #[arg(long, global = true, default_value_t = 40)]
    pub tmax: u64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Choi and Property-(S) certificates for the kernels of the model.
    CheckKernel,
    /// Finite-volume values, dense contraction next to the Schur route.
    Eval,
    /// Boundary matrix and limit state.
    Limit {
        #[arg(long)]
        check_projectivity: bool,
    },
    /// Overlap matrix, generic check and limits of a homogeneous model.
    Homog,
    /// Table of mixing gaps over clearances.
    MixingScan,
    /// Seeded invariant suite.
    Selftest,
}

// ---------------------------------------------------------------- model files

#[derive(Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Explicit,
    Homogeneous,
    Generators,
    Perturbed,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    lattice: Lattice,
    fiber_dim: usize,
    index_size: usize,
    mode: Mode,
    #[serde(default)]
    sites: Option<Vec<SiteVectors>>,
    #[serde(default)]
    reference_vectors: Option<Vec<CVector>>,
    #[serde(default)]
    generators: Option<Vec<GeneratorEntry>>,
    #[serde(default)]
    tail: Option<TailRule>,
    #[serde(default)]
    perturbed: Option<PerturbedEntry>,
    #[serde(default)]
    normalized: bool,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct SiteVectors {
    site: Site,
    vectors: Vec<CVector>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct GeneratorEntry {
    site: Site,
    #[serde(rename = "D_H")]
    d_h: Vec<f64>,
    #[serde(rename = "U")]
    u: CMatrix,
    #[serde(rename = "W")]
    w: CMatrix,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct TailRule {
    beyond_radius: u64,
    #[serde(rename = "D_H")]
    d_h: String,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct PerturbedEntry {
    h: CVector,
    v: Vec<CVector>,
    scale: f64,
    ratio: f64,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ObservableFile {
    region: Vec<Site>,
    factors: Vec<CMatrix>,
}

/// Vector source of a loaded model.
#[derive(Clone, Debug)]
pub enum Model {
    Explicit(FiberFamily),
    Homogeneous(HomogeneousModel),
    Generators(GeneratedModel),
    Perturbed(PerturbedModel),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $e:expr) => {
        match $self {
            Model::Explicit($m) => $e,
            Model::Homogeneous($m) => $e,
            Model::Generators($m) => $e,
            Model::Perturbed($m) => $e,
        }
    };
}

impl FiberSource for Model {
    fn fiber_dim(&self) -> usize {
        dispatch!(self, m => m.fiber_dim())
    }
    fn index_size(&self) -> usize {
        dispatch!(self, m => m.index_size())
    }
    fn fiber_vectors(&self, site: &Site) -> Result<Vec<CVector>> {
        dispatch!(self, m => m.fiber_vectors(site))
    }
}

impl LimitModel for Model {
    fn exhaustion(&self) -> Exhaustion {
        dispatch!(self, m => m.exhaustion())
    }
    fn tail_overlaps(&self, x: &Site) -> Result<CMatrix> {
        dispatch!(self, m => m.tail_overlaps(x))
    }
    fn tail_certificate(&self, radius: u64) -> Result<Option<TailCertificate>> {
        dispatch!(self, m => m.tail_certificate(radius))
    }
}

/// A validated model file.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub model: Model,
    pub lattice: Lattice,
    pub normalized: bool,
    /// `Σ_x Tr|D_{H_x}|` for generator models.
    pub summability: Option<f64>,
}

impl ModelSpec {
    pub fn mode(&self) -> &'static str {
        match self.model {
            Model::Explicit(_) => "explicit",
            Model::Homogeneous(_) => "homogeneous",
            Model::Generators(_) => "generators",
            Model::Perturbed(_) => "perturbed",
        }
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Parse(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))
}

fn merge(v: &mut Vec<Violation>, r: Result<()>) -> Result<()> {
    match r {
        Ok(()) => Ok(()),
        Err(Error::Validation(more)) => {
            v.extend(more);
            Ok(())
        }
        Err(e) => Err(e),
    }
}

fn check_vector(v: &mut Vec<Violation>, loc: String, x: &CVector, d: usize) {
    if x.dim() != d {
        v.push(Violation::new(
            loc,
            format!("dimension {} instead of {d}", x.dim()),
        ));
    }
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    model_from_str(path, &read(path)?)
}

/// Parses and validates a model description. `path` is used in messages only.
pub fn model_from_str(path: &Path, text: &str) -> Result<ModelSpec> {
    let f: ModelFile = parse_json(path, text)?;
    let mut v = Vec::new();
    if f.fiber_dim == 0 {
        v.push(Violation::new("fiber_dim", "must be positive"));
    }
    if f.index_size == 0 {
        v.push(Violation::new("index_size", "must be positive"));
    }
    match &f.lattice {
        Lattice::Zd { dim } if *dim == 0 => {
            v.push(Violation::new("lattice.dim", "must be positive"))
        }
        Lattice::Enumerated { sites } => {
            if let Err(e) = crate::site::ensure_distinct(sites) {
                v.push(Violation::new("lattice.sites", e.to_string()));
            }
        }
        _ => {}
    }
    let present = [
        ("sites", f.sites.is_some(), Mode::Explicit),
        (
            "reference_vectors",
            f.reference_vectors.is_some(),
            Mode::Homogeneous,
        ),
        ("generators", f.generators.is_some(), Mode::Generators),
        ("perturbed", f.perturbed.is_some(), Mode::Perturbed),
    ];
    for (name, is_there, mode) in present {
        if is_there && mode != f.mode {
            v.push(Violation::new(
                name,
                format!("not allowed in mode {:?}", f.mode).to_lowercase(),
            ));
        }
        if !is_there && mode == f.mode {
            v.push(Violation::new(name, "required by the selected mode"));
        }
    }
    if f.tail.is_some() && f.mode != Mode::Generators {
        v.push(Violation::new(
            "tail",
            "only generator models take a tail rule",
        ));
    }
    let (d, n) = (f.fiber_dim, f.index_size);
    let mut summability = None;
    let mut model = None;
    if v.is_empty() {
        match f.mode {
            Mode::Explicit => {
                let entries = f.sites.unwrap_or_default();
                match &f.lattice {
                    Lattice::Enumerated { sites } => {
                        let listed: Vec<Site> = entries.iter().map(|e| e.site.clone()).collect();
                        for s in difference(sites, &listed) {
                            v.push(Violation::new(format!("site {s}"), "lattice site without vectors"));
                        }
                        for s in difference(&listed, sites) {
                            v.push(Violation::new(format!("site {s}"), "not a lattice site"));
                        }
                        if v.is_empty() {
                            // Family order follows the lattice declaration.
                            let vectors = sites
                                .iter()
                                .map(|s| entries.iter().find(|e| &e.site == s).map(|e| e.vectors.clone()).unwrap())
                                .collect();
                            match FiberFamily::new(sites.clone(), d, n, vectors) {
                                Ok(fam) => model = Some(Model::Explicit(fam)),
                                Err(e) => merge(&mut v, Err(e))?,
                            }
                        }
                    }
                    Lattice::Zd { .. } => v.push(Violation::new(
                        "lattice",
                        "explicit vectors need an enumerated lattice; use generators or perturbed on Z^d",
                    )),
                }
            }
            Mode::Homogeneous => {
                let refs = f.reference_vectors.unwrap_or_default();
                if refs.len() != n {
                    v.push(Violation::new(
                        "reference_vectors",
                        format!("expected {n} vectors, got {}", refs.len()),
                    ));
                }
                for (j, x) in refs.iter().enumerate() {
                    check_vector(&mut v, format!("reference_vectors[{j}]"), x, d);
                }
                if v.is_empty() {
                    match HomogeneousModel::new(refs) {
                        Ok(m) => model = Some(Model::Homogeneous(m.on(f.lattice.clone()))),
                        Err(e) => merge(&mut v, Err(e))?,
                    }
                }
            }
            Mode::Generators => {
                if d != n {
                    v.push(Violation::new(
                        "fiber_dim",
                        "generator models need fiber_dim = index_size",
                    ));
                }
                let beyond = match &f.tail {
                    Some(t) => {
                        if t.d_h != "zero" {
                            v.push(Violation::new("tail.D_H", "only \"zero\" is supported"));
                        }
                        Some(t.beyond_radius)
                    }
                    None => {
                        if matches!(f.lattice, Lattice::Zd { .. }) {
                            v.push(Violation::new("tail", "required on Z^d"));
                        }
                        None
                    }
                };
                if v.is_empty() {
                    let spec = GeneratorSpec {
                        lattice: f.lattice.clone(),
                        index_size: n,
                        records: f
                            .generators
                            .unwrap_or_default()
                            .into_iter()
                            .map(|g| GeneratorRecord {
                                site: g.site,
                                d_h: g.d_h,
                                u: g.u,
                                w: g.w,
                            })
                            .collect(),
                        beyond_radius: beyond,
                    };
                    match build_from_generators(&spec) {
                        Ok(m) => {
                            summability = Some(m.summability());
                            model = Some(Model::Generators(m));
                        }
                        Err(e) => merge(&mut v, Err(e))?,
                    }
                }
            }
            Mode::Perturbed => {
                let p = f.perturbed.unwrap();
                let dim = match f.lattice {
                    Lattice::Zd { dim } => dim,
                    Lattice::Enumerated { .. } => {
                        v.push(Violation::new("lattice", "perturbed models live on Z^d"));
                        0
                    }
                };
                check_vector(&mut v, "perturbed.h".into(), &p.h, d);
                if p.v.len() != n {
                    v.push(Violation::new(
                        "perturbed.v",
                        format!("expected {n} vectors, got {}", p.v.len()),
                    ));
                }
                if v.is_empty() {
                    match PerturbedModel::new(dim, p.h, p.v, p.scale, p.ratio) {
                        Ok(m) => model = Some(Model::Perturbed(m)),
                        Err(e) => merge(&mut v, Err(e))?,
                    }
                }
            }
        }
    }
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let spec = ModelSpec {
        model: model.expect("built when no violations"),
        lattice: f.lattice,
        normalized: f.normalized,
        summability,
    };
    if spec.normalized {
        let z = normalization(
            &spec.model,
            &spec.model.exhaustion(),
            crate::limit::DEFAULT_TAIL_TOL,
        )?;
        if (z - 1.0).abs() > NORMALIZATION_CHECK_TOL {
            return Err(Error::Validation(vec![Violation::new(
                "normalized",
                format!("Σ β_V = {z:.12} differs from 1"),
            )]));
        }
    }
    Ok(spec)
}

pub fn load_observable(path: &Path, model: &ModelSpec) -> Result<LocalObservable> {
    observable_from_str(path, &read(path)?, model)
}

pub fn observable_from_str(path: &Path, text: &str, model: &ModelSpec) -> Result<LocalObservable> {
    let f: ObservableFile = parse_json(path, text)?;
    let d = model.model.fiber_dim();
    let mut v = Vec::new();
    if f.region.len() != f.factors.len() {
        v.push(Violation::new(
            "factors",
            format!("{} sites but {} factors", f.region.len(), f.factors.len()),
        ));
    }
    for (k, s) in f.region.iter().enumerate() {
        if !model.lattice.contains(s) {
            v.push(Violation::new(
                format!("region[{k}]"),
                format!("site {s} is not in the lattice"),
            ));
        }
    }
    for (k, b) in f.factors.iter().enumerate() {
        if b.shape() != (d, d) {
            v.push(Violation::new(
                format!("factors[{k}]"),
                format!("expected {d}x{d}, got {:?}", b.shape()),
            ));
        } else if !b.is_finite() {
            v.push(Violation::new(format!("factors[{k}]"), "non-finite entry"));
        }
    }
    if let Err(e) = crate::site::ensure_distinct(&f.region) {
        v.push(Violation::new("region", e.to_string()));
    }
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    LocalObservable::new(f.region, f.factors)
}

// ---------------------------------------------------------------- reports

fn cnum(z: C64) -> Value {
    json!(c64_to_pair(z))
}

fn sites_json(sites: &[Site]) -> Value {
    json!(sites
        .iter()
        .map(|s| s.coords().to_vec())
        .collect::<Vec<_>>())
}

fn matrix_json(m: &CMatrix) -> Value {
    serde_json::to_value(m).expect("matrices serialize")
}

/// Finished report plus an optional failed contract.
struct Outcome {
    report: Value,
    csv: Option<String>,
    failure: Option<String>,
}

impl Outcome {
    fn ok(report: Value) -> Self {
        Self {
            report,
            csv: None,
            failure: None,
        }
    }

    fn check(report: Value, pass: bool, what: &str) -> Self {
        Self {
            report,
            csv: None,
            failure: (!pass).then(|| what.to_string()),
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                flatten(&key(k), x, out);
            }
        }
        Value::Array(items) => {
            for (k, x) in items.iter().enumerate() {
                flatten(&key(&k.to_string()), x, out);
            }
        }
        Value::Number(n) => {
            let s = match (n.as_i64(), n.as_u64()) {
                (Some(i), _) => i.to_string(),
                (_, Some(u)) => u.to_string(),
                _ => fmt_num(n.as_f64().unwrap_or(f64::NAN)),
            };
            out.push((prefix.to_string(), s));
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::Null => out.push((prefix.to_string(), String::new())),
    }
}

/// `key,value` rows of every scalar in a JSON report.
pub fn report_to_csv(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let mut s = String::from("key,value\n");
    for (k, x) in rows {
        s.push_str(&format!("{k},{x}\n"));
    }
    s
}

// ---------------------------------------------------------------- commands

fn need_model(opts: &Options) -> Result<ModelSpec> {
    match &opts.model {
        Some(p) => load_model(p),
        None => Err(Error::Validation(vec![Violation::new(
            "--model",
            "a model file is required",
        )])),
    }
}

fn region_flag(opts: &Options) -> Result<Option<Vec<Site>>> {
    opts.region.as_deref().map(parse_region).transpose()
}

fn observable_or_identity(opts: &Options, spec: &ModelSpec) -> Result<LocalObservable> {
    match (&opts.observable, region_flag(opts)?) {
        (Some(p), _) => load_observable(p, spec),
        (None, Some(r)) => LocalObservable::identity(r, spec.model.fiber_dim()),
        (None, None) => Err(Error::Validation(vec![Violation::new(
            "--observable",
            "give an observable file or a --region",
        )])),
    }
}

fn default_sites(spec: &ModelSpec, k: usize) -> Vec<Site> {
    spec.model.exhaustion().prefix(k)
}

fn cmd_check_kernel(opts: &Options) -> Result<Outcome> {
    let spec = need_model(opts)?;
    let tol = opts.tol.unwrap_or(DEFAULT_PSD_TOL);
    let sites = region_flag(opts)?.unwrap_or_else(|| default_sites(&spec, 3));
    let m = &spec.model;
    let d = m.fiber_dim();
    let mut rng = rng_from_seed(opts.seed);
    let mut all = true;
    let mut per_site = Vec::new();
    for x in &sites {
        let choi = certify_cp(m, x, tol)?;
        let bs: Vec<CMatrix> = (0..3).map(|_| random_observable(&mut rng, d)).collect();
        let ps = is_psd(&property_s_matrix(m, x, &bs)?, tol)?;
        all &= choi.psd && ps.psd;
        per_site.push(json!({"site": x.coords(), "choi": choi, "property_s": ps}));
    }
    let tuples: Vec<Vec<CMatrix>> = (0..3)
        .map(|_| {
            sites
                .iter()
                .map(|_| random_observable(&mut rng, d))
                .collect()
        })
        .collect();
    let tensor = is_psd(&tensor_property_s_matrix(m, &sites, &tuples)?, tol)?;
    all &= tensor.psd;
    let report = json!({
        "command": "check-kernel",
        "tol": tol,
        "sites": per_site,
        "tensor": {"sites": sites_json(&sites), "property_s": tensor},
        "all_psd": all,
    });
    Ok(Outcome::check(
        report,
        all,
        "a kernel certificate is not positive semidefinite",
    ))
}

fn cmd_eval(opts: &Options) -> Result<Outcome> {
    let spec = need_model(opts)?;
    let tol = opts.tol.unwrap_or(1e-10);
    let obs = match &opts.observable {
        Some(p) => load_observable(p, &spec)?,
        None => observable_or_identity(opts, &spec)?,
    };
    let lambda1 = match (&opts.observable, region_flag(opts)?) {
        (Some(_), Some(r)) => r,
        _ => obs.region().to_vec(),
    };
    if !is_subset(obs.region(), &lambda1) {
        return Err(Error::Precondition(
            "observable region is not inside --region".into(),
        ));
    }
    let m = &spec.model;
    let extended = eval_extended(m, &lambda1, &obs)?;
    let same = lambda1.len() == obs.len();
    let schur = if same {
        Some(eval_schur(m, &obs)?)
    } else {
        None
    };
    let dense = if lambda1.len() <= DEFAULT_DENSE_CAP {
        Some(eval_dense(m, &lambda1, &obs, DEFAULT_DENSE_CAP)?)
    } else {
        None
    };
    let unit = LocalObservable::identity(lambda1.clone(), m.fiber_dim())?;
    let norm = eval_extended(m, &lambda1, &unit)?;
    let mut diff: f64 = 0.0;
    if let Some(dv) = dense {
        diff = diff.max(rel_err(extended, dv));
        if let Some(sv) = schur {
            diff = diff.max(rel_err(sv, dv));
        }
    }
    let agree = diff <= tol;
    let normalized = if norm.re > crate::state::NORMALIZATION_FLOOR {
        Some(extended / norm.re)
    } else {
        None
    };
    let report = json!({
        "command": "eval",
        "region": sites_json(obs.region()),
        "evaluation_region": sites_json(&lambda1),
        "extended": cnum(extended),
        "schur": schur.map(cnum),
        "dense": dense.map(cnum),
        "norm": cnum(norm),
        "normalized": normalized.map(cnum),
        "max_rel_diff": diff,
        "agree": agree,
    });
    Ok(Outcome::check(
        report,
        agree,
        "dense and Schur evaluations disagree",
    ))
}

fn cmd_limit(opts: &Options, projectivity: bool) -> Result<Outcome> {
    let spec = need_model(opts)?;
    let m = &spec.model;
    let ex = m.exhaustion();
    let tail_tol = opts.tail_tol;
    let obs = match &opts.observable {
        Some(p) => Some(load_observable(p, &spec)?),
        None => None,
    };
    let region = match (&obs, region_flag(opts)?) {
        (Some(o), Some(r)) if projectivity => {
            let mut outer = r;
            outer.extend(difference(o.region(), &outer));
            outer
        }
        (Some(o), None) => o.region().to_vec(),
        (_, Some(r)) => r,
        (None, None) => Vec::new(),
    };
    let beta = boundary_matrix(m, &region, &ex, tail_tol)?;
    let z = normalization(m, &ex, tail_tol)?;
    let mut report = json!({
        "command": "limit",
        "mode": spec.mode(),
        "region": sites_json(&region),
        "beta": matrix_json(&beta.entries),
        "tail_bound": beta.tail_bound,
        "sites_used": beta.sites_used,
        "radius": beta.radius,
        "normalization": z,
        "summability": spec.summability,
        "value": Value::Null,
        "normalized_value": Value::Null,
        "projectivity": Value::Null,
    });
    let mut pass = true;
    if let Some(o) = &obs {
        if projectivity {
            let tol = opts.tol.unwrap_or(1e-9);
            let rep = check_projectivity(m, &region, o, &ex, tol, tail_tol)?;
            pass = rep.pass;
            report["value"] = cnum(rep.inner);
            report["normalized_value"] = cnum(rep.inner / z);
            report["projectivity"] = json!({
                "inner_region": sites_json(o.region()),
                "outer": cnum(rep.outer),
                "inner": cnum(rep.inner),
                "gap": rep.gap,
                "scale": rep.scale,
                "tol": tol,
                "pass": rep.pass,
            });
        } else {
            let v = limit_state_with(m, o, &beta)?;
            report["value"] = cnum(v);
            report["normalized_value"] = cnum(v / z);
        }
    } else if projectivity {
        return Err(Error::Validation(vec![Violation::new(
            "--observable",
            "projectivity needs an observable on the inner region",
        )]));
    }
    Ok(Outcome::check(
        report,
        pass,
        "projectivity gap exceeds the tolerance",
    ))
}

fn cmd_homog(opts: &Options) -> Result<Outcome> {
    let spec = need_model(opts)?;
    let hm = match &spec.model {
        Model::Homogeneous(h) => h,
        _ => {
            return Err(Error::Precondition(
                "homog needs a model in homogeneous mode".into(),
            ))
        }
    };
    let ov = overlaps(hm);
    let generic = check_generic(&ov);
    let product = detect_product(&ov, opts.tol.unwrap_or(1e-12));
    let obs = match (&opts.observable, region_flag(opts)?) {
        (Some(p), _) => Some(load_observable(p, &spec)?),
        (None, Some(r)) => Some(LocalObservable::identity(r, hm.fiber_dim())?),
        _ => None,
    };
    let mut limit = Value::Null;
    let mut finite = Vec::new();
    if let Some(o) = &obs {
        let res = if generic {
            generic_limit(hm, o).map(|g| json!({"kind": "generic", "value": cnum(g.value), "components": g.components, "weights": g.weights}))
        } else {
            real_beta_limit(hm, o)
                .map(|r| json!({"kind": "real_beta", "value": cnum(r.value), "pairs": r.pairs}))
        };
        limit = match res {
            Ok(v) => v,
            Err(e) => json!({"kind": "none", "error": e.to_string()}),
        };
        let mut extra = 0usize;
        while extra <= opts.tmax as usize {
            finite.push(json!({"sites": o.len() + extra, "value": cnum(finite_normalized_count(hm, o, extra)?)}));
            extra = if extra == 0 { 1 } else { extra * 2 };
        }
    }
    let diag = independence_diagnostic(hm.vectors())?;
    let report = json!({
        "command": "homog",
        "beta": matrix_json(&ov.beta),
        "beta_max": ov.beta_max,
        "argmax": ov.argmax,
        "generic": generic,
        "product": product,
        "subleading_ratio": ov.subleading_ratio(),
        "independence": diag,
        "limit": limit,
        "finite": finite,
    });
    Ok(Outcome::ok(report))
}

fn t_list(tmax: u64) -> Vec<u64> {
    if tmax < 5 {
        return vec![tmax.max(1)];
    }
    let mut out = vec![5];
    while out.last().unwrap() * 2 <= tmax {
        out.push(out.last().unwrap() * 2);
    }
    out
}

fn cmd_mixing_scan(opts: &Options) -> Result<Outcome> {
    let spec = need_model(opts)?;
    let a = match &opts.observable {
        Some(p) => load_observable(p, &spec)?,
        None => {
            return Err(Error::Validation(vec![Violation::new(
                "--observable",
                "mixing-scan needs an observable a",
            )]))
        }
    };
    let b = match &opts.observable_b {
        Some(p) => load_observable(p, &spec)?,
        None => a.clone(),
    };
    let scan_opts = ScanOptions {
        tail_tol: opts.tail_tol,
        cauchy_tol: opts.tol.unwrap_or(crate::mixing::DEFAULT_CAUCHY_TOL),
        ..ScanOptions::default()
    };
    let strategies = [Strategy::Translate, Strategy::Random(opts.seed)];
    let table = mixing_scan(
        &spec.model,
        &a,
        &b,
        &t_list(opts.tmax),
        &strategies,
        &scan_opts,
    )?;
    let report = json!({
        "command": "mixing-scan",
        "rows": table.rows,
        "trend": table.trend.iter().map(|(s, f)| json!({"strategy": s, "decreasing_fraction": f})).collect::<Vec<_>>(),
        "alpha": table.alpha.iter().map(|(s, a)| json!({
            "strategy": s,
            "independent": a.independent,
            "value": a.value.map(cnum),
            "cauchy_gap": a.cauchy_gap,
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        report,
        csv: Some(table.to_csv()),
        failure: None,
    })
}

// ---------------------------------------------------------------- selftest

struct CheckResult {
    name: &'static str,
    cases: usize,
    worst: f64,
    threshold: f64,
}

type CheckFn = fn(u64) -> Result<CheckResult>;

fn line(n: i64) -> Vec<Site> {
    (0..n).map(Site::id).collect()
}

fn st_oracle(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(2..=3);
        let di = rng.random_range(2..=3);
        let n1 = rng.random_range(1..=5i64);
        let n = rng.random_range(1..=n1);
        let f = random_family(&mut rng, &line(n1), d, di);
        let obs = LocalObservable::new(
            line(n),
            (0..n).map(|_| random_observable(&mut rng, d)).collect(),
        )?;
        let dense = eval_dense(&f, &line(n1), &obs, DEFAULT_DENSE_CAP)?;
        worst = worst.max(rel_err(eval_extended(&f, &line(n1), &obs)?, dense));
        let full = LocalObservable::new(
            line(n1),
            (0..n1).map(|_| random_observable(&mut rng, d)).collect(),
        )?;
        let dense = eval_dense(&f, &line(n1), &full, DEFAULT_DENSE_CAP)?;
        worst = worst.max(rel_err(eval_schur(&f, &full)?, dense));
    }
    Ok(CheckResult {
        name: "oracle_equivalence",
        cases: 20,
        worst,
        threshold: 1e-10,
    })
}

fn psd_defect(m: &CMatrix) -> Result<f64> {
    let r = is_psd(m, f64::INFINITY)?;
    Ok((-r.min_eigenvalue / r.max_eigenvalue.abs().max(1.0)).max(0.0))
}

fn st_cp(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = random_family(&mut rng, &line(3), 2, 3);
        for x in line(3) {
            worst = worst.max(psd_defect(&crate::kernel::choi_matrix(&f, &x)?)?);
            let bs: Vec<CMatrix> = (0..3).map(|_| random_observable(&mut rng, 2)).collect();
            worst = worst.max(psd_defect(&property_s_matrix(&f, &x, &bs)?)?);
        }
        let tuples: Vec<Vec<CMatrix>> = (0..3)
            .map(|_| (0..3).map(|_| random_observable(&mut rng, 2)).collect())
            .collect();
        worst = worst.max(psd_defect(&tensor_property_s_matrix(
            &f,
            &line(3),
            &tuples,
        )?)?);
    }
    Ok(CheckResult {
        name: "kernel_positivity",
        cases: 20,
        worst,
        threshold: 1e-10,
    })
}

fn st_right_sqrt(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = random_positive_definite(&mut rng, 3);
        let w = random_unitary(&mut rng, 3);
        let r = right_sqrt(&t, &w)?;
        let hh = r.h.matmul(&r.h.adjoint())?;
        worst = worst.max(hh.max_abs_diff(&t)? / t.max_abs());
        worst = worst.max((r.log.max_abs() - r.trace_norm).max(0.0));
    }
    Ok(CheckResult {
        name: "right_sqrt",
        cases: 20,
        worst,
        threshold: 1e-10,
    })
}

fn st_cocycle(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_from_seed(seed);
    let m = build_from_generators(&geometric_generator_spec(&mut rng, 1, 2, 30))?;
    let ex = m.exhaustion();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let a = rng.random_range(-3..=0i64);
        let outer: Vec<Site> = (a..a + 4).map(Site::id).collect();
        let inner = outer[1..3].to_vec();
        let bo = boundary_matrix(&m, &outer, &ex, 1e-12)?;
        let bi = boundary_matrix(&m, &inner, &ex, 1e-12)?;
        let t = transfer_matrix(&m, &outer, &inner)?;
        worst = worst.max(crate::algebra::hadamard(&bo.entries, &t)?.max_abs_diff(&bi.entries)?);
        let obs = LocalObservable::new(
            inner.clone(),
            inner
                .iter()
                .map(|_| random_observable(&mut rng, 2))
                .collect(),
        )?;
        let rep = check_projectivity(&m, &outer, &obs, &ex, 1e-9, 1e-12)?;
        worst = worst.max(rep.gap / rep.scale * 0.1);
    }
    Ok(CheckResult {
        name: "cocycle_and_projectivity",
        cases: 5,
        worst,
        threshold: 1e-10,
    })
}

fn st_homogeneous(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 5 {
        let hm = HomogeneousModel::new((0..3).map(|_| random_vector(&mut rng, 3)).collect())?;
        let ov = overlaps(&hm);
        if !check_generic(&ov) || ov.subleading_ratio() > 0.85 {
            continue;
        }
        cases += 1;
        let obs = LocalObservable::new(
            line(2),
            (0..2).map(|_| random_observable(&mut rng, 3)).collect(),
        )?;
        let lim = generic_limit(&hm, &obs)?.value;
        worst = worst.max(rel_err(finite_normalized_count(&hm, &obs, 400)?, lim));
    }
    Ok(CheckResult {
        name: "homogeneous_limit",
        cases,
        worst,
        threshold: 1e-10,
    })
}

fn st_equal_offdiag(_seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for p in 2..=6 {
        for k in 1..=9 {
            let c = k as f64 / 10.0;
            let g = overlap_of(&equal_offdiag_family(p, c, p)?);
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        worst = worst.max((g.get(i, j) - C64::new(c, 0.0)).norm());
                    }
                }
            }
            cases += 1;
        }
    }
    Ok(CheckResult {
        name: "equal_offdiag",
        cases,
        worst,
        threshold: 1e-12,
    })
}

fn st_mixing(_seed: u64) -> Result<CheckResult> {
    let h = CVector::basis(2, 0);
    let v = vec![
        CVector::basis(2, 1),
        CVector::basis(2, 1).scale(C64::new(0.0, 1.0)),
    ];
    let m = PerturbedModel::new(2, h, v, 1.0, 0.5)?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let u = CVector::from_real(&[s, s]);
    let a = LocalObservable::single(Site::new([0, 0]), u.outer(&u))?;
    let g5 = crate::mixing::mixing_gap(&m, &a, &a, 5, Strategy::Translate, 1e-12)?;
    let g20 = crate::mixing::mixing_gap(&m, &a, &a, 20, Strategy::Translate, 1e-12)?;
    // Ratio of the far gap to the near one; small when the state mixes.
    Ok(CheckResult {
        name: "mixing_decay",
        cases: 2,
        worst: g20 / g5,
        threshold: 1e-3,
    })
}

const CHECKS: [CheckFn; 7] = [
    st_oracle,
    st_cp,
    st_right_sqrt,
    st_cocycle,
    st_homogeneous,
    st_equal_offdiag,
    st_mixing,
];

fn cmd_selftest(opts: &Options) -> Result<Outcome> {
    let results = CHECKS
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            f(opts
                .seed
                .wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = results.iter().all(|r| r.worst <= r.threshold);
    let checks: Vec<Value> = results
        .iter()
        .map(|r| json!({"name": r.name, "cases": r.cases, "worst": r.worst, "threshold": r.threshold, "pass": r.worst <= r.threshold}))
        .collect();
    let report = json!({"command": "selftest", "seed": opts.seed, "checks": checks, "pass": pass});
    Ok(Outcome::check(report, pass, "an invariant check failed"))
}

// ---------------------------------------------------------------- entry

fn dispatch_command(cli: &Cli) -> Result<Outcome> {
    let o = &cli.opts;
    match &cli.command {
        Command::CheckKernel => cmd_check_kernel(o),
        Command::Eval => cmd_eval(o),
        Command::Limit { check_projectivity } => cmd_limit(o, *check_projectivity),
        Command::Homog => cmd_homog(o),
        Command::MixingScan => cmd_mixing_scan(o),
        Command::Selftest => cmd_selftest(o),
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if cli.opts.threads == 0 {
        return Err(Error::Validation(vec![Violation::new(
            "--threads",
            "must be at least 1",
        )]));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.opts.threads)
        .build()
        .map_err(|e| Error::Precondition(format!("cannot start thread pool: {e}")))?;
    let outcome = pool.install(|| dispatch_command(cli))?;
    let text = match (cli.opts.format, &outcome.csv) {
        (Format::Csv, Some(csv)) => csv.clone(),
        (Format::Csv, None) => report_to_csv(&outcome.report),
        (Format::Json, _) => {
            let mut s = serde_json::to_string_pretty(&outcome.report).expect("reports serialize");
            s.push('\n');
            s
        }
    };
    out.write_all(text.as_bytes())?;
    match outcome.failure {
        Some(what) => Err(Error::Precondition(what)),
        None => Ok(()),
    }
}

/// Runs the command line `args` (program name first). Reports go to `out`,
/// diagnostics to `err`. Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PathBuf {
        PathBuf::from("model.json")
    }

    #[test]
    fn homogeneous_file_loads() {
        let text = r#"{"lattice": {"kind": "zd", "dim": 2}, "fiber_dim": 2, "index_size": 2,
            "mode": "homogeneous", "reference_vectors": [[[1,0],[0,0]], [[0,0],[1,0]]]}"#;
        let spec = model_from_str(&p(), text).unwrap();
        let Model::Homogeneous(h) = &spec.model else {
            panic!()
        };
        assert_eq!(overlaps(h).beta, CMatrix::identity(2));
    }

    #[test]
    fn zero_vector_is_named() {
        let text = r#"{"lattice": {"kind": "enumerated", "sites": [[0],[1]]}, "fiber_dim": 2, "index_size": 2,
            "mode": "explicit", "sites": [
              {"site": [0], "vectors": [[[1,0],[0,0]], [[0,0],[1,0]]]},
              {"site": [1], "vectors": [[[1,0],[0,0]], [[0,0],[0,0]]]}]}"#;
        match model_from_str(&p(), text) {
            Err(Error::Validation(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].location, "site 1, vector 1");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn violations_are_collected() {
        let text = r#"{"lattice": {"kind": "zd", "dim": 1}, "fiber_dim": 0, "index_size": 2,
            "mode": "homogeneous", "perturbed": {"h": [], "v": [], "scale": 1, "ratio": 0.5}}"#;
        match model_from_str(&p(), text) {
            Err(Error::Validation(v)) => assert!(v.len() >= 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        match model_from_str(&p(), "{\n  \"lattice\": oops") {
            Err(Error::Parse(m)) => assert!(m.contains("line 2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization_flag_is_checked() {
        let text = r#"{"lattice": {"kind": "zd", "dim": 1}, "fiber_dim": 2, "index_size": 2,
            "mode": "homogeneous", "reference_vectors": [[[1,0],[0,0]], [[0,0],[1,0]]], "normalized": true}"#;
        assert!(matches!(
            model_from_str(&p(), text),
            Err(Error::Validation(_))
        ));
        let text = r#"{"lattice": {"kind": "zd", "dim": 1}, "fiber_dim": 1, "index_size": 1,
            "mode": "homogeneous", "reference_vectors": [[[1,0]]], "normalized": true}"#;
        assert!(model_from_str(&p(), text).unwrap().normalized);
    }

    #[test]
    fn csv_flattening() {
        let v = json!({"a": 1, "b": [0.5, true], "c": null});
        assert_eq!(
            report_to_csv(&v),
            "key,value\na,1\nb.0,5.0000000000000000e-1\nb.1,true\nc,\n"
        );
    }

    #[test]
    fn t_lists() {
        assert_eq!(t_list(40), vec![5, 10, 20, 40]);
        assert_eq!(t_list(39), vec![5, 10, 20]);
        assert_eq!(t_list(3), vec![3]);
    }

    #[test]
    fn usage_errors_exit_one() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run(["schur-states", "frobnicate"], &mut out, &mut err), 1);
        assert_eq!(run(["schur-states", "eval"], &mut out, &mut err), 1);
        assert_eq!(run(["schur-states", "--help"], &mut out, &mut err), 0);
    }
}
