//! Site identifiers.
//!
//! A site is a tuple of integer coordinates. Lattice sites of `Z^ν` use all
//! `ν` coordinates; sites of an enumerated graph are one-tuples holding the
//! site number.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Site(coords.into())
    }

    /// One-coordinate site, used for enumerated graphs and for `Z^1`.
    pub fn id(n: i64) -> Self {
        Site(vec![n])
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// 1-norm `|z_1| + ... + |z_ν|`.
    pub fn norm1(&self) -> u64 {
        self.0.iter().map(|c| c.unsigned_abs()).sum()
    }

    /// Translate along coordinate axis `axis` by `by`.
    pub fn shifted(&self, axis: usize, by: i64) -> Site {
        let mut c = self.0.clone();
        c[axis] += by;
        Site(c)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Site> {
        let coords = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Parse(format!("bad site coordinate {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Site(coords))
    }
}

/// Parses a region of the form `"x1;x2;..."`, each site written as
/// comma-separated coordinates.
pub fn parse_region(s: &str) -> Result<Vec<Site>> {
    let region: Vec<Site> = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(Site::from_str)
        .collect::<Result<_>>()?;
    ensure_distinct(&region)?;
    Ok(region)
}

pub fn ensure_distinct(region: &[Site]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in region {
        if !seen.insert(s) {
            return Err(Error::Precondition(format!(
                "site {s} appears twice in region"
            )));
        }
    }
    Ok(())
}

/// `true` when every site of `inner` is in `outer`.
pub fn is_subset(inner: &[Site], outer: &[Site]) -> bool {
    let outer: BTreeSet<&Site> = outer.iter().collect();
    inner.iter().all(|s| outer.contains(s))
}

/// Sites of `outer` not in `inner`, in `outer` order.
pub fn difference(outer: &[Site], inner: &[Site]) -> Vec<Site> {
    let inner: BTreeSet<&Site> = inner.iter().collect();
    outer
        .iter()
        .filter(|s| !inner.contains(s))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let r = parse_region("0,0; 1,-2;3,4").unwrap();
        assert_eq!(
            r,
            vec![Site::new([0, 0]), Site::new([1, -2]), Site::new([3, 4])]
        );
        assert_eq!(r[1].to_string(), "1,-2");
        assert_eq!(r[1].norm1(), 3);
        assert!(parse_region("0;0").is_err());
        assert!(parse_region("a").is_err());
    }

    #[test]
    fn set_helpers() {
        let a = vec![Site::id(1), Site::id(2), Site::id(3)];
        let b = vec![Site::id(2)];
        assert!(is_subset(&b, &a));
        assert!(!is_subset(&a, &b));
        assert_eq!(difference(&a, &b), vec![Site::id(1), Site::id(3)]);
    }
}
