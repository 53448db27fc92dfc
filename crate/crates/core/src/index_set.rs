//! Sensor index sets and their enumeration.
//!
//! Members are stored zero-based; every human-facing rendering (display,
//! config files, gains files, trace headers) is one-based.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Sorted set of distinct zero-based sensor indices.
///
/// The derived ordering is lexicographic on the member list, which is the
/// tie-break order used by the selector.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Builds a set from arbitrary zero-based members; duplicates are an error.
    pub fn new(mut members: Vec<usize>, universe: usize) -> Result<Self> {
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument(format!("duplicate sensor in {members:?}")));
        }
        if let Some(&m) = members.last() {
            if m >= universe {
                return Err(Error::Argument(format!("sensor {} outside 1..={universe}", m + 1)));
            }
        }
        Ok(IndexSet(members))
    }

    pub fn from_one_based(members: &[usize], universe: usize) -> Result<Self> {
        if members.contains(&0) {
            return Err(Error::Argument("sensor numbers are one-based".into()));
        }
        Self::new(members.iter().map(|m| m - 1).collect(), universe)
    }

    pub fn full(universe: usize) -> Self {
        IndexSet((0..universe).collect())
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|m| m + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|&i| !other.contains(i))
    }

    /// Complement within `0..universe`.
    pub fn complement(&self, universe: usize) -> IndexSet {
        IndexSet((0..universe).filter(|&i| !self.contains(i)).collect())
    }

    /// Compact label used in trace headers and file names, e.g. `1-3`.
    pub fn label(&self) -> String {
        self.one_based()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Applies a relabeling `perm[old] = new` and re-sorts.
    pub fn permuted(&self, perm: &[usize]) -> IndexSet {
        let mut v: Vec<usize> = self.0.iter().map(|&i| perm[i]).collect();
        v.sort_unstable();
        IndexSet(v)
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, m) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", m + 1)?;
        }
        write!(f, "}}")
    }
}

impl Serialize for IndexSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for IndexSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.contains(&0) {
            return Err(serde::de::Error::custom("sensor numbers are one-based"));
        }
        let max = v.iter().copied().max().unwrap_or(0);
        IndexSet::from_one_based(&v, max).map_err(serde::de::Error::custom)
    }
}

/// Binomial coefficient C(n, k); zero when k > n.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All `k`-element subsets of `0..n` in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> Result<Vec<IndexSet>> {
    if k > n {
        return Err(Error::Argument(format!("subset size {k} exceeds universe {n}")));
    }
    let mut out = Vec::with_capacity(binomial(n, k));
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(IndexSet(cur.clone()));
        // rightmost position that can still advance
        let Some(pos) = (0..k).rev().find(|&p| cur[p] < n - k + p) else {
            break;
        };
        cur[pos] += 1;
        for q in pos + 1..k {
            cur[q] = cur[q - 1] + 1;
        }
    }
    Ok(out)
}
