//! Geometry of `Z^ν` under the 1-norm, and the site sets models live on.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::random::rng_from_seed;
use crate::site::Site;

/// Site set of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Lattice {
    /// `Z^ν`.
    Zd { dim: usize },
    /// Finite graph; sites in declared order.
    Enumerated { sites: Vec<Site> },
}

impl Lattice {
    pub fn contains(&self, x: &Site) -> bool {
        match self {
            Lattice::Zd { dim } => x.dim() == *dim,
            Lattice::Enumerated { sites } => sites.contains(x),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Lattice::Enumerated { .. })
    }
}

/// Sites with `|z| = r`, lexicographic.
pub fn sphere(dim: usize, r: u64) -> Vec<Site> {
    let mut out = Vec::new();
    let mut buf = Vec::with_capacity(dim);
    fill_sphere(dim, r as i64, &mut buf, &mut out);
    out
}

fn fill_sphere(left: usize, budget: i64, buf: &mut Vec<i64>, out: &mut Vec<Site>) {
    if left == 0 {
        if budget == 0 {
            out.push(Site(buf.clone()));
        }
        return;
    }
    if left == 1 {
        // Only +-budget closes the sum.
        let mut last = vec![-budget];
        if budget != 0 {
            last.push(budget);
        }
        for c in last {
            buf.push(c);
            out.push(Site(buf.clone()));
            buf.pop();
        }
        return;
    }
    for c in -budget..=budget {
        buf.push(c);
        fill_sphere(left - 1, budget - c.abs(), buf, out);
        buf.pop();
    }
}

/// `D_r = {z : |z| <= r}`, lexicographic.
pub fn ball(dim: usize, r: u64) -> Vec<Site> {
    let mut all: Vec<Site> = (0..=r).flat_map(|k| sphere(dim, k)).collect();
    all.sort();
    all
}

/// `#{z in Z^ν : |z| = k}`.
pub fn sphere_size(dim: usize, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    // Choose i nonzero coordinates with signs, then a composition of k into i parts.
    (1..=dim.min(k as usize))
        .map(|i| {
            2f64.powi(i as i32) * binomial(dim as u64, i as u64) * binomial(k - 1, i as u64 - 1)
        })
        .sum()
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, m| acc * (n - m) as f64 / (m + 1) as f64)
}

/// Shells of an exhaustion, innermost first.
#[derive(Clone, Debug, PartialEq)]
pub enum Exhaustion {
    /// All sites of a finite graph, as one shell.
    Enumerated(Vec<Site>),
    /// Spheres of `Z^ν` in increasing radius. With a seed, each shell is
    /// shuffled deterministically.
    Lattice { dim: usize, shuffle: Option<u64> },
}

impl Exhaustion {
    pub fn for_lattice(lattice: &Lattice) -> Self {
        match lattice {
            Lattice::Zd { dim } => Exhaustion::Lattice {
                dim: *dim,
                shuffle: None,
            },
            Lattice::Enumerated { sites } => Exhaustion::Enumerated(sites.clone()),
        }
    }

    pub fn shuffled(self, seed: u64) -> Self {
        match self {
            Exhaustion::Lattice { dim, .. } => Exhaustion::Lattice {
                dim,
                shuffle: Some(seed),
            },
            Exhaustion::Enumerated(mut sites) => {
                sites.shuffle(&mut rng_from_seed(seed));
                Exhaustion::Enumerated(sites)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Exhaustion::Enumerated(_))
    }

    /// Shell `r`, or `None` past the end of a finite exhaustion.
    pub fn shell(&self, r: u64) -> Option<Vec<Site>> {
        match self {
            Exhaustion::Enumerated(sites) => (r == 0).then(|| sites.clone()),
            Exhaustion::Lattice { dim, shuffle } => {
                let mut s = sphere(*dim, r);
                if let Some(seed) = shuffle {
                    s.shuffle(&mut rng_from_seed(
                        seed.wrapping_add(r.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                    ));
                }
                Some(s)
            }
        }
    }

    /// First `n` sites `x_1, ..., x_n`.
    pub fn prefix(&self, n: usize) -> Vec<Site> {
        let mut out = Vec::with_capacity(n);
        let mut r = 0;
        while out.len() < n {
            match self.shell(r) {
                Some(s) => out.extend(s.into_iter().take(n - out.len())),
                None => break,
            }
            r += 1;
        }
        out
    }
}
