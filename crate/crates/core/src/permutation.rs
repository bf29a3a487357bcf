use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subset::SubsetIndex;

/// An ordering of the `p` input indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let p = order.len();
        let mut seen = vec![false; p];
        for &i in &order {
            if i >= p || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "{order:?} is not a permutation of 0..{p}"
                )));
            }
            seen[i] = true;
        }
        Ok(Permutation(order))
    }

    pub fn identity(p: usize) -> Self {
        Permutation((0..p).collect())
    }

    /// Uniform draw by Fisher–Yates.
    pub fn random<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..p).collect();
        for i in (1..p).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        Permutation(order)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    /// `σ^{-1}`: position of each variable.
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (pos, &i) in self.0.iter().enumerate() {
            inv[i] = pos;
        }
        Permutation(inv)
    }

    /// `P_i(σ)`: the variables placed before `i`.
    pub fn predecessors(&self, i: usize) -> SubsetIndex {
        let pos = self.0.iter().position(|&j| j == i).expect("index in permutation");
        SubsetIndex::from_indices(self.0[..pos].iter().copied())
    }

    /// Advances to the next permutation in lexicographic order; false at the last.
    pub fn next_lexicographic(&mut self) -> bool {
        let v = &mut self.0;
        let n = v.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && v[i - 1] >= v[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while v[j] <= v[i - 1] {
            j -= 1;
        }
        v.swap(i - 1, j);
        v[i..].reverse();
        true
    }

    /// All `p!` permutations in lexicographic order.
    pub fn all(p: usize) -> impl Iterator<Item = Permutation> {
        let mut cur = Some(Permutation::identity(p));
        std::iter::from_fn(move || {
            let out = cur.take()?;
            let mut next = out.clone();
            if next.next_lexicographic() {
                cur = Some(next);
            }
            Some(out)
        })
    }
}

pub(crate) fn factorial(p: usize) -> u64 {
    (1..=p as u64).product()
}
