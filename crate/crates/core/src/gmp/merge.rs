//! Greedy merging of adjacent components on the reduced graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use ndarray::ArrayView2;

use crate::graph::{AdjacencyGraph, Partition};

#[derive(Debug, Clone, Copy)]
struct Candidate {
    delta: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap order: smallest delta, then smallest ids, pops first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .delta
            .total_cmp(&self.delta)
            .then(other.a.cmp(&self.a))
            .then(other.b.cmp(&self.b))
    }
}

/// Components as (size, mean) with cut weights to their neighbors.
pub(crate) struct MergeState {
    size: Vec<usize>,
    mean: Vec<Vec<f64>>,
    nbrs: Vec<BTreeMap<usize, f64>>,
    alive: Vec<bool>,
    stamp: Vec<u32>,
    /// component of every vertex at construction
    origin: Vec<u32>,
    /// union-find parent over component ids
    parent: Vec<usize>,
}

impl MergeState {
    pub fn new(
        features: ArrayView2<f64>,
        graph: &AdjacencyGraph,
        w: &[f64],
        partition: &Partition,
    ) -> Self {
        let k = partition.num_superpoints();
        let dim = features.ncols();
        let mut size = vec![0usize; k];
        let mut mean = vec![vec![0.0; dim]; k];
        for (i, &c) in partition.assignment().iter().enumerate() {
            size[c as usize] += 1;
            for (m, x) in mean[c as usize].iter_mut().zip(features.row(i)) {
                *m += x;
            }
        }
        for (m, &n) in mean.iter_mut().zip(&size) {
            m.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }
        let mut nbrs = vec![BTreeMap::new(); k];
        let a = partition.assignment();
        for (&(i, j), &wij) in graph.edges().iter().zip(w) {
            let (ci, cj) = (a[i as usize] as usize, a[j as usize] as usize);
            if ci != cj {
                *nbrs[ci].entry(cj).or_insert(0.0) += wij;
                *nbrs[cj].entry(ci).or_insert(0.0) += wij;
            }
        }
        Self {
            size,
            mean,
            nbrs,
            alive: vec![true; k],
            stamp: vec![0; k],
            origin: a.to_vec(),
            parent: (0..k).collect(),
        }
    }

    /// Energy change of merging `a` and `b`: added fidelity minus the saved cut weight.
    fn delta(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.size[a] as f64, self.size[b] as f64);
        let d2: f64 = self.mean[a]
            .iter()
            .zip(&self.mean[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        na * nb / (na + nb) * d2 - self.nbrs[a].get(&b).copied().unwrap_or(0.0)
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        Candidate {
            delta: self.delta(a, b),
            a,
            b,
            stamp_a: self.stamp[a],
            stamp_b: self.stamp[b],
        }
    }

    /// Merges `a` and `b`. The one with more neighbors survives (smaller id on ties), so
    /// relabeling work stays small-to-large.
    fn merge(&mut self, a: usize, b: usize) -> usize {
        let (lo, hi) = (a.min(b), a.max(b));
        let (keep, gone) = if self.nbrs[hi].len() > self.nbrs[lo].len() {
            (hi, lo)
        } else {
            (lo, hi)
        };
        let (nk, ng) = (self.size[keep] as f64, self.size[gone] as f64);
        let gone_mean = std::mem::take(&mut self.mean[gone]);
        for (m, g) in self.mean[keep].iter_mut().zip(&gone_mean) {
            *m = (*m * nk + g * ng) / (nk + ng);
        }
        self.size[keep] += self.size[gone];
        self.size[gone] = 0;
        let gone_nbrs = std::mem::take(&mut self.nbrs[gone]);
        self.nbrs[keep].remove(&gone);
        for (c, wc) in gone_nbrs {
            if c == keep {
                continue;
            }
            let moved = self.nbrs[c].remove(&gone).unwrap_or(0.0);
            debug_assert!((moved - wc).abs() <= 1e-9 * (1.0 + wc.abs()));
            *self.nbrs[c].entry(keep).or_insert(0.0) += wc;
            *self.nbrs[keep].entry(c).or_insert(0.0) += wc;
        }
        self.alive[gone] = false;
        self.parent[gone] = keep;
        self.stamp[keep] += 1;
        self.stamp[gone] += 1;
        keep
    }

    fn root_of(&mut self, mut c: usize) -> usize {
        let mut root = c;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[c] != root {
            let next = self.parent[c];
            self.parent[c] = root;
            c = next;
        }
        root
    }

    fn initial_heap(&self) -> BinaryHeap<Candidate> {
        let mut heap = BinaryHeap::new();
        for a in 0..self.size.len() {
            for &b in self.nbrs[a].keys() {
                if a < b && self.alive[a] && self.alive[b] {
                    heap.push(self.candidate(a, b));
                }
            }
        }
        heap
    }

    /// Pops the next up-to-date candidate. Entries made stale by earlier merges are
    /// re-evaluated for the components their endpoints now belong to and pushed back, so
    /// every adjacent pair stays represented without re-pushing all neighbors on each merge.
    fn pop_current(&mut self, heap: &mut BinaryHeap<Candidate>) -> Option<Candidate> {
        while let Some(c) = heap.pop() {
            let (a, b) = (self.root_of(c.a), self.root_of(c.b));
            if a == b {
                continue;
            }
            if a == c.a && b == c.b && c.stamp_a == self.stamp[a] && c.stamp_b == self.stamp[b] {
                return Some(c);
            }
            heap.push(self.candidate(a, b));
        }
        None
    }

    /// Merges the best adjacent pair while doing so lowers the energy.
    pub fn greedy_merge(&mut self) {
        let mut heap = self.initial_heap();
        while let Some(c) = self.pop_current(&mut heap) {
            if c.delta >= 0.0 {
                break;
            }
            self.merge(c.a, c.b);
        }
    }

    /// The `k` adjacent pairs whose merge raises the energy least, cheapest first.
    pub fn cheapest_pairs(&self, k: usize) -> Vec<(usize, usize)> {
        let mut all: Vec<Candidate> = Vec::new();
        for a in 0..self.size.len() {
            for &b in self.nbrs[a].keys() {
                if a < b && self.alive[a] && self.alive[b] {
                    all.push(self.candidate(a, b));
                }
            }
        }
        // the heap order puts the cheapest last
        all.sort_by(|x, y| y.cmp(x));
        all.into_iter().take(k).map(|c| (c.a, c.b)).collect()
    }

    /// Keeps merging the best adjacent pair past the point where the energy starts to rise,
    /// down to one component per connected piece, and returns the labels of the prefix of
    /// merges with the lowest energy. A run of individually unfavorable merges can pay off
    /// jointly, which the plain greedy stop misses.
    pub fn best_prefix_labels(mut self) -> Vec<u32> {
        let mut heap = self.initial_heap();
        let mut merges: Vec<(usize, usize)> = Vec::new();
        let (mut energy, mut best_energy, mut best_len) = (0.0f64, 0.0f64, 0usize);
        while let Some(c) = self.pop_current(&mut heap) {
            energy += c.delta;
            let keep = self.merge(c.a, c.b);
            merges.push((keep, if keep == c.a { c.b } else { c.a }));
            if energy < best_energy - 1e-12 * (1.0 + best_energy.abs()) {
                best_energy = energy;
                best_len = merges.len();
            }
        }
        let mut parent: Vec<usize> = (0..self.size.len()).collect();
        for &(keep, gone) in &merges[..best_len] {
            parent[gone] = keep;
        }
        let find = |mut c: usize| {
            while parent[c] != c {
                c = parent[c];
            }
            c as u32
        };
        self.origin.iter().map(|&c| find(c as usize)).collect()
    }

    /// Merges every component smaller than `n_min` that has a neighbor into the neighbor
    /// with the smallest energy increase, smallest components first.
    pub fn force_min_size(&mut self, n_min: usize) {
        let mut small: BTreeSet<(usize, usize)> = (0..self.size.len())
            .filter(|&c| self.alive[c] && self.size[c] < n_min && !self.nbrs[c].is_empty())
            .map(|c| (self.size[c], c))
            .collect();
        while let Some((_, c)) = small.pop_first() {
            let target = self.nbrs[c]
                .keys()
                .map(|&b| (self.delta(c, b), b))
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                .map(|(_, b)| b)
                .expect("small components in the queue have neighbors");
            small.remove(&(self.size[target], target));
            let keep = self.merge(c, target);
            if self.size[keep] < n_min && !self.nbrs[keep].is_empty() {
                small.insert((self.size[keep], keep));
            }
        }
    }

    fn find(&self, mut c: usize) -> usize {
        while self.parent[c] != c {
            c = self.parent[c];
        }
        c
    }

    /// Component of every vertex (ids are surviving component ids, not contiguous).
    pub fn labels(&self) -> Vec<u32> {
        let roots: Vec<u32> = (0..self.parent.len())
            .map(|c| self.find(c) as u32)
            .collect();
        self.origin.iter().map(|&c| roots[c as usize]).collect()
    }
}
