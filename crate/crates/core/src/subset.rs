//! Bit-mask encoding of subsets of the input indices.
//!
//! Variable indices are zero-based internally; `Display` renders them
//! one-based (`{1,3}`) to match the usual `X_1..X_p` naming.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported input dimension. Every table enumerates `2^p` subsets.
pub const MAX_DIM: usize = 30;

/// A subset `u` of `{0, .., p-1}` stored as a bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsetIndex(u32);

impl SubsetIndex {
    pub const EMPTY: SubsetIndex = SubsetIndex(0);

    /// Builds a subset from a raw mask, rejecting bits at or above `p`.
    pub fn new(bits: u32, p: usize) -> Result<Self> {
        check_dim(p)?;
        if bits & !full_bits(p) != 0 {
            return Err(Error::InvalidArgument(format!(
                "mask {bits:#b} has bits outside dimension {p}"
            )));
        }
        Ok(SubsetIndex(bits))
    }

    /// Wraps a mask without checking it against a dimension.
    pub const fn from_bits(bits: u32) -> Self {
        SubsetIndex(bits)
    }

    pub fn full(p: usize) -> Self {
        debug_assert!(p <= MAX_DIM);
        SubsetIndex(full_bits(p))
    }

    pub fn singleton(i: usize) -> Self {
        debug_assert!(i < MAX_DIM);
        SubsetIndex(1 << i)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        SubsetIndex(indices.into_iter().fold(0, |acc, i| acc | (1 << i)))
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    /// Position of this subset in a dense `2^p` table.
    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub const fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub const fn contains(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub const fn with(self, i: usize) -> Self {
        SubsetIndex(self.0 | (1 << i))
    }

    pub const fn without(self, i: usize) -> Self {
        SubsetIndex(self.0 & !(1 << i))
    }

    pub fn complement(self, p: usize) -> Self {
        SubsetIndex(!self.0 & full_bits(p))
    }

    pub const fn union(self, other: Self) -> Self {
        SubsetIndex(self.0 | other.0)
    }

    pub const fn intersection(self, other: Self) -> Self {
        SubsetIndex(self.0 & other.0)
    }

    pub const fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    /// True for `∅ ⊊ u ⊊ [1:p]`.
    pub fn is_proper(self, p: usize) -> bool {
        !self.is_empty() && self != Self::full(p)
    }

    /// Member indices in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// All `2^p` subsets in mask order.
    pub fn all(p: usize) -> impl Iterator<Item = SubsetIndex> {
        (0..1u64 << p).map(|b| SubsetIndex(b as u32))
    }

    /// All nonempty proper subsets in mask order.
    pub fn proper(p: usize) -> impl Iterator<Item = SubsetIndex> {
        (1..(1u64 << p) - 1).map(|b| SubsetIndex(b as u32))
    }

    /// Every subset of `self`, including `∅` and `self`.
    pub fn subsets(self) -> impl Iterator<Item = SubsetIndex> {
        let full = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full {
                None
            } else {
                Some((cur.wrapping_sub(full)) & full)
            };
            Some(SubsetIndex(cur))
        })
    }
}

impl fmt::Debug for SubsetIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SubsetIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        f.write_str("}")
    }
}

pub fn check_dim(p: usize) -> Result<()> {
    if p == 0 || p > MAX_DIM {
        return Err(Error::Dimension { p, max: MAX_DIM });
    }
    Ok(())
}

fn full_bits(p: usize) -> u32 {
    if p >= 32 {
        u32::MAX
    } else {
        (1u32 << p) - 1
    }
}

/// Exact binomial coefficients `C(n, k)` for `n <= MAX_DIM`.
#[derive(Debug, Clone)]
pub struct Binomials {
    rows: Vec<Vec<u64>>,
}

impl Binomials {
    pub fn new(n_max: usize) -> Self {
        let mut rows: Vec<Vec<u64>> = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            let mut row = vec![1u64; n + 1];
            for k in 1..n {
                row[k] = rows[n - 1][k - 1] + rows[n - 1][k];
            }
            rows.push(row);
        }
        Binomials { rows }
    }

    pub fn get(&self, n: usize, k: usize) -> u64 {
        if k > n {
            0
        } else {
            self.rows[n][k]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_partitions_the_full_set() {
        let p = 7;
        for u in SubsetIndex::all(p) {
            let c = u.complement(p);
            assert_eq!(u.union(c), SubsetIndex::full(p));
            assert!(u.intersection(c).is_empty());
            assert_eq!(u.len() + c.len(), p);
        }
    }

    #[test]
    fn rejects_out_of_range_dimensions_and_bits() {
        assert!(SubsetIndex::new(0, 0).is_err());
        assert!(SubsetIndex::new(0, MAX_DIM + 1).is_err());
        assert!(SubsetIndex::new(0b1000, 3).is_err());
        assert!(SubsetIndex::new(0b111, 3).is_ok());
        assert!(SubsetIndex::new(u32::MAX >> 2, MAX_DIM).is_ok());
    }

    #[test]
    fn subsets_of_mask_are_enumerated_once() {
        let u = SubsetIndex::from_indices([0, 2, 5]);
        let subs: Vec<_> = u.subsets().collect();
        assert_eq!(subs.len(), 8);
        assert!(subs.iter().all(|s| s.is_subset_of(u)));
        let mut sorted = subs.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
    }

    #[test]
    fn display_is_one_based() {
        assert_eq!(SubsetIndex::from_indices([0, 2]).to_string(), "{1,3}");
        assert_eq!(SubsetIndex::EMPTY.to_string(), "{}");
    }

    #[test]
    fn binomials_match_pascal_and_known_values() {
        let b = Binomials::new(MAX_DIM);
        assert_eq!(b.get(10, 5), 252);
        assert_eq!(b.get(30, 15), 155_117_520);
        assert_eq!(b.get(3, 4), 0);
        for n in 0..=MAX_DIM {
            let sum: u64 = (0..=n).map(|k| b.get(n, k)).sum();
            assert_eq!(sum, 1u64 << n);
        }
    }
}
