//! Exact nearest neighbours under `d_v(a, b) = max_{i∈v} d_i(a_i, b_i)`.
//!
//! Ties are broken uniformly at random: every point at distance at most the
//! k-th smallest distance is a candidate, candidates are grouped by equal
//! distance, and each group is ranked in random order. The kd-tree and the
//! linear scan build the same candidate list, so they return the same
//! neighbours for the same random stream.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, RngCore};

use super::{ColumnKind, DataSample};
use crate::error::{Error, Result};
use crate::subset::SubsetIndex;

/// Maximum points per kd-tree leaf.
pub const LEAF_SIZE: usize = 12;

/// Below this many rows a linear scan is used even for continuous columns.
const TREE_MIN_ROWS: usize = 64;

/// A neighbour index over the columns `v` of a sample.
#[derive(Debug)]
pub struct KnnIndex<'a> {
    sample: &'a DataSample,
    v: SubsetIndex,
    coords: Vec<usize>,
    categorical: Vec<bool>,
    tree: Option<KdTree>,
}

#[derive(Debug)]
struct KdTree {
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Debug)]
struct Node {
    start: u32,
    end: u32,
    split: Option<Split>,
}

#[derive(Debug)]
struct Split {
    /// Position in `coords`.
    axis: usize,
    value: f64,
    left: u32,
    right: u32,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    idx: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A kd-tree when every column of `v` is continuous and the sample is large
/// enough, a linear scan otherwise.
pub fn build_knn_index(sample: &DataSample, v: SubsetIndex) -> Result<KnnIndex<'_>> {
    let index = KnnIndex::linear(sample, v)?;
    if index.categorical.iter().any(|&c| c) || sample.n() < TREE_MIN_ROWS {
        Ok(index)
    } else {
        Ok(index.with_tree())
    }
}

impl<'a> KnnIndex<'a> {
    /// An index that answers every query by scanning all rows.
    pub fn linear(sample: &'a DataSample, v: SubsetIndex) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidArgument("neighbour search needs at least one column".into()));
        }
        if !v.is_subset_of(SubsetIndex::full(sample.p())) {
            return Err(Error::InvalidArgument(format!(
                "columns {v} outside a sample of {} columns",
                sample.p()
            )));
        }
        let coords = v.to_vec();
        let categorical = coords
            .iter()
            .map(|&c| sample.kinds()[c] == ColumnKind::Categorical)
            .collect();
        Ok(KnnIndex {
            sample,
            v,
            coords,
            categorical,
            tree: None,
        })
    }

    /// A kd-tree index; only for all-continuous columns.
    pub fn tree(sample: &'a DataSample, v: SubsetIndex) -> Result<Self> {
        let index = Self::linear(sample, v)?;
        if index.categorical.iter().any(|&c| c) {
            return Err(Error::InvalidArgument(format!(
                "kd-tree over {v} includes categorical columns"
            )));
        }
        Ok(index.with_tree())
    }

    fn with_tree(mut self) -> Self {
        self.tree = Some(self.build_tree());
        self
    }

    pub fn columns(&self) -> SubsetIndex {
        self.v
    }

    pub fn uses_tree(&self) -> bool {
        self.tree.is_some()
    }

    pub fn len(&self) -> usize {
        self.sample.n()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.n() == 0
    }

    #[inline]
    fn coord(&self, row: usize, axis: usize) -> f64 {
        self.sample.scaled()[row * self.sample.p() + self.coords[axis]]
    }

    #[inline]
    fn dist(&self, a: usize, b: usize) -> f64 {
        let p = self.sample.p();
        let (ra, rb) = (&self.sample.scaled()[a * p..], &self.sample.scaled()[b * p..]);
        let mut d = 0.0f64;
        for (k, &c) in self.coords.iter().enumerate() {
            let dk = if self.categorical[k] {
                if ra[c] == rb[c] {
                    0.0
                } else {
                    1.0
                }
            } else {
                (ra[c] - rb[c]).abs()
            };
            d = d.max(dk);
        }
        d
    }

    /// The `k` nearest rows to row `anchor`, pairwise distinct, in rank
    /// order. With distinct distances the anchor itself comes first.
    pub fn neighbours(&self, anchor: usize, k: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        let n = self.sample.n();
        if anchor >= n {
            return Err(Error::InvalidArgument(format!("row {anchor} out of {n}")));
        }
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!(
                "cannot take {k} neighbours among {n} rows"
            )));
        }
        let candidates = match &self.tree {
            Some(tree) => {
                let radius = tree.kth_distance(self, anchor, k);
                let mut out = Vec::new();
                tree.within(self, anchor, radius, 0, &mut out);
                out
            }
            None => self.scan(anchor, k),
        };
        Ok(pick(candidates, k, rng))
    }

    fn scan(&self, anchor: usize, k: usize) -> Vec<Candidate> {
        let all: Vec<Candidate> = (0..self.sample.n())
            .map(|j| Candidate {
                dist: self.dist(anchor, j),
                idx: j as u32,
            })
            .collect();
        let mut dists: Vec<f64> = all.iter().map(|c| c.dist).collect();
        let (_, &mut radius, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        all.into_iter().filter(|c| c.dist <= radius).collect()
    }

    fn build_tree(&self) -> KdTree {
        let n = self.sample.n();
        let mut tree = KdTree {
            order: (0..n as u32).collect(),
            nodes: Vec::new(),
        };
        self.build_node(&mut tree, 0, n);
        tree
    }

    fn build_node(&self, tree: &mut KdTree, start: usize, end: usize) -> u32 {
        let id = tree.nodes.len() as u32;
        tree.nodes.push(Node {
            start: start as u32,
            end: end as u32,
            split: None,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let (mut axis, mut spread) = (0, 0.0);
        for a in 0..self.coords.len() {
            let (lo, hi) = tree.order[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| {
                    let x = self.coord(i as usize, a);
                    (lo.min(x), hi.max(x))
                },
            );
            if hi - lo > spread {
                (axis, spread) = (a, hi - lo);
            }
        }
        if spread == 0.0 {
            return id;
        }
        let mid = start + (end - start) / 2;
        tree.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            self.coord(a as usize, axis)
                .total_cmp(&self.coord(b as usize, axis))
        });
        let value = self.coord(tree.order[mid] as usize, axis);
        let left = self.build_node(tree, start, mid);
        let right = self.build_node(tree, mid, end);
        tree.nodes[id as usize].split = Some(Split {
            axis,
            value,
            left,
            right,
        });
        id
    }
}

impl KdTree {
    /// Distance of the `k`-th nearest row.
    fn kth_distance(&self, index: &KnnIndex<'_>, anchor: usize, k: usize) -> f64 {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn(index, anchor, k, 0, &mut heap);
        heap.peek().expect("k >= 1").dist
    }

    fn knn(
        &self,
        index: &KnnIndex<'_>,
        anchor: usize,
        k: usize,
        node: u32,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let node = &self.nodes[node as usize];
        match &node.split {
            None => {
                for &j in &self.order[node.start as usize..node.end as usize] {
                    let c = Candidate {
                        dist: index.dist(anchor, j as usize),
                        idx: j,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c.dist < heap.peek().expect("nonempty").dist {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Some(s) => {
                let q = index.coord(anchor, s.axis);
                let gap = q - s.value;
                let (near, far) = if gap <= 0.0 { (s.left, s.right) } else { (s.right, s.left) };
                self.knn(index, anchor, k, near, heap);
                if heap.len() < k || gap.abs() <= heap.peek().expect("nonempty").dist {
                    self.knn(index, anchor, k, far, heap);
                }
            }
        }
    }

    fn within(
        &self,
        index: &KnnIndex<'_>,
        anchor: usize,
        radius: f64,
        node: u32,
        out: &mut Vec<Candidate>,
    ) {
        let node = &self.nodes[node as usize];
        match &node.split {
            None => {
                for &j in &self.order[node.start as usize..node.end as usize] {
                    let dist = index.dist(anchor, j as usize);
                    if dist <= radius {
                        out.push(Candidate { dist, idx: j });
                    }
                }
            }
            Some(s) => {
                let q = index.coord(anchor, s.axis);
                if q - s.value <= radius {
                    self.within(index, anchor, radius, s.left, out);
                }
                if s.value - q <= radius {
                    self.within(index, anchor, radius, s.right, out);
                }
            }
        }
    }
}

/// Ranks `candidates` by distance, shuffling each group of equal distance,
/// and keeps the first `k`.
fn pick(mut candidates: Vec<Candidate>, k: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    candidates.sort_unstable();
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    while out.len() < k {
        let dist = candidates[start].dist;
        let end = start
            + candidates[start..]
                .iter()
                .take_while(|c| c.dist == dist)
                .count();
        let group = &mut candidates[start..end];
        let take = (k - out.len()).min(group.len());
        if group.len() == 1 {
            out.push(group[0].idx as usize);
        } else {
            for t in 0..take {
                let j = rng.random_range(t..group.len());
                group.swap(t, j);
                out.push(group[t].idx as usize);
            }
        }
        start = end;
    }
    out
}
