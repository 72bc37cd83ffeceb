use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::PointCloud;
use crate::error::{arg_err, Result};

const LEAF_SIZE: usize = 12;

/// `k` nearest neighbors of every point, self excluded, rows sorted by
/// ascending distance with ties broken toward the smaller index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodTable {
    k: usize,
    ids: Vec<u32>,
}

impl NeighborhoodTable {
    pub fn from_raw(k: usize, ids: Vec<u32>) -> Result<Self> {
        if k == 0 || ids.len() % k != 0 {
            return arg_err(format!(
                "{} neighbor ids do not form rows of {k}",
                ids.len()
            ));
        }
        let n = ids.len() / k;
        for (row, chunk) in ids.chunks(k).enumerate() {
            if chunk.iter().any(|&j| j as usize >= n || j as usize == row) {
                return arg_err(format!("neighbor row {row} holds an invalid index"));
            }
        }
        Ok(Self { k, ids })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of rows (points).
    pub fn len(&self) -> usize {
        self.ids.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist2: f64,
    idx: usize,
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
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.idx.cmp(&other.idx))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static 3D kd-tree over a borrowed point set.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let pts = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` points nearest to `query` ordered by (distance, index), skipping `exclude`.
    pub fn nearest(&self, query: [f64; 3], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, &query, k, exclude, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.idx, c.dist2.sqrt())).collect()
    }

    fn search(
        &self,
        node: usize,
        q: &[f64; 3],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        dist2: dist2(&self.points[i], q),
                        idx: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, exclude, heap);
                // points equal to the split value may sit on either side
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// Indices of all points within `radius` of `query` (inclusive), unsorted.
    pub fn within_radius(&self, query: [f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.radius_search(0, &query, radius * radius, &mut out);
        }
        out
    }

    fn radius_search(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => out.extend(
                self.order[start..end]
                    .iter()
                    .copied()
                    .filter(|&i| dist2(&self.points[i], q) <= r2),
            ),
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.radius_search(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_search(far, q, r2, out);
                }
            }
        }
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Exact `k` nearest neighbors of every point of the cloud.
pub fn build_knn(cloud: &PointCloud, k: usize) -> Result<NeighborhoodTable> {
    let n = cloud.len();
    if k == 0 {
        return arg_err("k must be positive");
    }
    if n <= k {
        return arg_err(format!("k-nn needs more than k={k} points, cloud has {n}"));
    }
    let tree = KdTree::new(cloud.positions());
    let mut ids = Vec::with_capacity(n * k);
    for (i, p) in cloud.positions().iter().enumerate() {
        ids.extend(
            tree.nearest(*p, k, Some(i))
                .into_iter()
                .map(|(j, _)| j as u32),
        );
    }
    Ok(NeighborhoodTable { k, ids })
}
