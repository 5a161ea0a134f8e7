//! Multi-indices and downward-closed index sets.
//!
//! A multi-index `α = (α_1, …, α_k)` selects the tensorized feature
//! `ψ_α(x) = Π_j ψ_{α_j}(x_j)`. Active sets are kept downward closed, and new
//! indices are only ever drawn from the reduced margin so that closure is
//! preserved by every insertion.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// A tuple of non-negative degrees, one per input variable.
///
/// Ordering is lexicographic, which fixes iteration order of sets and hence
/// every tie-break downstream.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(degrees: Vec<u32>) -> Self {
        MultiIndex(degrees)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// The unit index `e_l`.
    pub fn unit(dim: usize, l: usize) -> Self {
        let mut v = vec![0; dim];
        v[l] = 1;
        MultiIndex(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degrees(&self) -> &[u32] {
        &self.0
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn max_degree(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Degree in the last variable.
    pub fn last(&self) -> u32 {
        self.0.last().copied().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// `α + e_l`.
    pub fn forward(&self, l: usize) -> Self {
        let mut v = self.0.clone();
        v[l] += 1;
        MultiIndex(v)
    }

    /// `α − e_l`, or `None` when `α_l = 0`.
    pub fn backward(&self, l: usize) -> Option<Self> {
        if self.0[l] == 0 {
            return None;
        }
        let mut v = self.0.clone();
        v[l] -= 1;
        Some(MultiIndex(v))
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

fn check_dims<'a>(indices: impl IntoIterator<Item = &'a MultiIndex>, k: usize) -> Result<()> {
    for alpha in indices {
        if alpha.dim() != k {
            return Err(Error::Dimension {
                expected: k,
                got: alpha.dim(),
            });
        }
    }
    Ok(())
}

/// True iff every backward neighbor of every member is also a member.
///
/// Checking immediate backward neighbors suffices: any `α' ≤ α` is reached
/// from `α` by a chain of unit decrements.
pub fn is_downward_closed(set: &BTreeSet<MultiIndex>, k: usize) -> Result<bool> {
    check_dims(set, k)?;
    Ok(set
        .iter()
        .all(|alpha| (0..k).all(|l| alpha.backward(l).is_none_or(|b| set.contains(&b)))))
}

/// A downward-closed multi-index set with its reduced margin maintained incrementally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownwardClosedSet {
    dim: usize,
    members: BTreeSet<MultiIndex>,
    reduced_margin: BTreeSet<MultiIndex>,
}

impl DownwardClosedSet {
    /// The empty set in dimension `dim`. Its reduced margin is `{0}` so that
    /// the greedy search has a first candidate.
    pub fn empty(dim: usize) -> Self {
        let mut reduced_margin = BTreeSet::new();
        reduced_margin.insert(MultiIndex::zero(dim));
        DownwardClosedSet {
            dim,
            members: BTreeSet::new(),
            reduced_margin,
        }
    }

    /// Validates `members` and builds the set.
    pub fn from_members(dim: usize, members: impl IntoIterator<Item = MultiIndex>) -> Result<Self> {
        let members: BTreeSet<MultiIndex> = members.into_iter().collect();
        if !is_downward_closed(&members, dim)? {
            return Err(Error::Precondition(
                "multi-index set is not downward closed".into(),
            ));
        }
        let reduced_margin = reduced_margin_of(&members, dim);
        Ok(DownwardClosedSet {
            dim,
            members,
            reduced_margin,
        })
    }

    /// All indices with `|α|_1 ≤ p`.
    pub fn total_degree(dim: usize, p: u32) -> Self {
        let mut members = BTreeSet::new();
        let mut current = vec![MultiIndex::zero(dim)];
        members.insert(MultiIndex::zero(dim));
        for _ in 0..p {
            let mut next = Vec::new();
            for alpha in &current {
                for l in 0..dim {
                    let beta = alpha.forward(l);
                    if members.insert(beta.clone()) {
                        next.push(beta);
                    }
                }
            }
            current = next;
        }
        let reduced_margin = reduced_margin_of(&members, dim);
        DownwardClosedSet {
            dim,
            members,
            reduced_margin,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, alpha: &MultiIndex) -> bool {
        self.members.contains(alpha)
    }

    /// Members in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = &MultiIndex> {
        self.members.iter()
    }

    pub fn members(&self) -> &BTreeSet<MultiIndex> {
        &self.members
    }

    /// Position of `alpha` in lexicographic order.
    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        if !self.members.contains(alpha) {
            return None;
        }
        Some(self.members.range(..alpha).count())
    }

    /// Indices outside the set with at least one backward neighbor inside.
    pub fn margin(&self) -> BTreeSet<MultiIndex> {
        if self.members.is_empty() {
            return self.reduced_margin.clone();
        }
        let mut out = BTreeSet::new();
        for alpha in &self.members {
            for l in 0..self.dim {
                let beta = alpha.forward(l);
                if !self.members.contains(&beta) {
                    out.insert(beta);
                }
            }
        }
        out
    }

    /// Indices whose insertion keeps the set downward closed.
    pub fn reduced_margin(&self) -> &BTreeSet<MultiIndex> {
        &self.reduced_margin
    }

    /// Returns a new set with `alpha` added. `alpha` must lie in the reduced margin.
    pub fn insert(&self, alpha: &MultiIndex) -> Result<Self> {
        if alpha.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: alpha.dim(),
            });
        }
        if !self.reduced_margin.contains(alpha) {
            return Err(Error::Precondition(format!(
                "{alpha} is not in the reduced margin"
            )));
        }
        let mut members = self.members.clone();
        members.insert(alpha.clone());
        let mut reduced_margin = self.reduced_margin.clone();
        reduced_margin.remove(alpha);
        // Only forward neighbors of the new member can have become admissible.
        for l in 0..self.dim {
            let beta = alpha.forward(l);
            if admissible(&beta, &members) {
                reduced_margin.insert(beta);
            }
        }
        Ok(DownwardClosedSet {
            dim: self.dim,
            members,
            reduced_margin,
        })
    }
}

fn admissible(beta: &MultiIndex, members: &BTreeSet<MultiIndex>) -> bool {
    !members.contains(beta)
        && (0..beta.dim()).all(|l| beta.backward(l).is_none_or(|b| members.contains(&b)))
}

/// Reduced margin recomputed from scratch.
pub fn reduced_margin_of(members: &BTreeSet<MultiIndex>, dim: usize) -> BTreeSet<MultiIndex> {
    if members.is_empty() {
        return std::iter::once(MultiIndex::zero(dim)).collect();
    }
    let mut out = BTreeSet::new();
    for alpha in members {
        for l in 0..dim {
            let beta = alpha.forward(l);
            if admissible(&beta, members) {
                out.insert(beta);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    fn set(v: &[&[u32]]) -> BTreeSet<MultiIndex> {
        v.iter().map(|a| mi(a)).collect()
    }

    fn hypercube(k: usize, p: u32) -> DownwardClosedSet {
        // All α with max_j α_j < p.
        let mut members = vec![MultiIndex::zero(k)];
        for l in 0..k {
            let mut next = Vec::new();
            for alpha in &members {
                for d in 1..p {
                    let mut v = alpha.degrees().to_vec();
                    v[l] = d;
                    next.push(MultiIndex::new(v));
                }
            }
            members.extend(next);
        }
        DownwardClosedSet::from_members(k, members).unwrap()
    }

    /// Brute-force margin: every α in the box [0, bound]^k outside the set with a
    /// backward neighbor inside.
    fn brute_margin(s: &DownwardClosedSet, bound: u32) -> BTreeSet<MultiIndex> {
        let k = s.dim();
        let mut out = BTreeSet::new();
        let total = (bound as usize + 1).pow(k as u32);
        for code in 0..total {
            let mut c = code;
            let mut v = vec![0u32; k];
            for slot in v.iter_mut() {
                *slot = (c % (bound as usize + 1)) as u32;
                c /= bound as usize + 1;
            }
            let alpha = MultiIndex::new(v);
            if s.contains(&alpha) {
                continue;
            }
            if (0..k).any(|l| alpha.backward(l).is_some_and(|b| s.contains(&b))) {
                out.insert(alpha);
            }
        }
        out
    }

    #[test]
    fn closure_examples() {
        assert!(is_downward_closed(&BTreeSet::new(), 2).unwrap());
        assert!(is_downward_closed(&set(&[&[0, 0], &[1, 0], &[0, 1]]), 2).unwrap());
        assert!(!is_downward_closed(&set(&[&[1, 1]]), 2).unwrap());
        assert!(matches!(
            is_downward_closed(&set(&[&[0, 0, 0]]), 2),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn margin_examples() {
        let s = DownwardClosedSet::from_members(2, [mi(&[0, 0])]).unwrap();
        assert_eq!(s.margin(), set(&[&[1, 0], &[0, 1]]));
        let e = DownwardClosedSet::empty(3);
        assert_eq!(e.margin(), set(&[&[0, 0, 0]]));
        assert_eq!(*e.reduced_margin(), set(&[&[0, 0, 0]]));
    }

    #[test]
    fn reduced_margin_example() {
        let s = DownwardClosedSet::from_members(2, [mi(&[0, 0]), mi(&[1, 0]), mi(&[0, 1])]).unwrap();
        assert_eq!(*s.reduced_margin(), set(&[&[2, 0], &[1, 1], &[0, 2]]));
        // (1,1) is in the margin of {(0,0),(1,0)} but not in its reduced margin.
        let t = DownwardClosedSet::from_members(2, [mi(&[0, 0]), mi(&[1, 0])]).unwrap();
        assert!(t.margin().contains(&mi(&[1, 1])));
        assert!(!t.reduced_margin().contains(&mi(&[1, 1])));
    }

    #[test]
    fn insert_examples() {
        let s = DownwardClosedSet::from_members(2, [mi(&[0, 0])]).unwrap();
        let t = s.insert(&mi(&[1, 0])).unwrap();
        assert_eq!(*t.members(), set(&[&[0, 0], &[1, 0]]));
        let e = DownwardClosedSet::empty(2).insert(&mi(&[0, 0])).unwrap();
        assert_eq!(*e.members(), set(&[&[0, 0]]));
        assert!(matches!(s.insert(&mi(&[1, 1])), Err(Error::Precondition(_))));
        assert!(matches!(s.insert(&mi(&[0, 0])), Err(Error::Precondition(_))));
    }

    #[test]
    fn hypercube_cardinalities_match_brute_force() {
        for k in 1..=4usize {
            for p in 1..=3u32 {
                let s = hypercube(k, p);
                assert_eq!(s.len(), (p as usize).pow(k as u32));
                let m = s.margin();
                assert_eq!(m, brute_margin(&s, p + 1), "k={k} p={p}");
                // Exactly one coordinate sits at p; the rest of the outer shell
                // {0..=p}^k \ {0..p}^k has no backward neighbor in the cube.
                assert_eq!(m.len(), k * (p as usize).pow(k as u32 - 1));
                let shell = ((p + 1) as usize).pow(k as u32) - (p as usize).pow(k as u32);
                assert!(m.len() <= shell);
                assert_eq!(m.len() == shell, k == 1);
                assert_eq!(s.reduced_margin().len(), k, "k={k} p={p}");
            }
        }
    }

    #[test]
    fn total_degree_count() {
        assert_eq!(DownwardClosedSet::total_degree(2, 2).len(), 6);
        assert_eq!(DownwardClosedSet::total_degree(3, 0).len(), 1);
        assert_eq!(DownwardClosedSet::total_degree(3, 2).len(), 10);
    }

    #[test]
    fn position_is_lexicographic_rank() {
        let s = DownwardClosedSet::total_degree(2, 1);
        let order: Vec<_> = s.iter().cloned().collect();
        assert_eq!(order, vec![mi(&[0, 0]), mi(&[0, 1]), mi(&[1, 0])]);
        assert_eq!(s.position(&mi(&[1, 0])), Some(2));
        assert_eq!(s.position(&mi(&[2, 0])), None);
    }

    proptest! {
        #[test]
        fn random_growth_preserves_invariants(k in 1usize..5, picks in prop::collection::vec(0usize..1000, 1..25)) {
            let mut s = DownwardClosedSet::empty(k);
            for p in picks {
                let rm: Vec<_> = s.reduced_margin().iter().cloned().collect();
                let alpha = &rm[p % rm.len()];
                s = s.insert(alpha).unwrap();
                prop_assert!(is_downward_closed(s.members(), k).unwrap());
                let margin = s.margin();
                prop_assert!(s.reduced_margin().is_subset(&margin));
                prop_assert!(margin.iter().all(|a| !s.contains(a)));
                prop_assert_eq!(s.reduced_margin(), &reduced_margin_of(s.members(), k));
                for beta in s.reduced_margin() {
                    let t = s.insert(beta).unwrap();
                    prop_assert!(is_downward_closed(t.members(), k).unwrap());
                }
            }
        }
    }
}
