//! Dinic max-flow on real capacities, used for binary labelings with a pairwise penalty.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub(crate) struct FlowGraph {
    head: Vec<usize>,
    next: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<f64>,
    level: Vec<i32>,
    iter: Vec<usize>,
    eps: f64,
}

const NONE: usize = usize::MAX;

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        Self {
            head: vec![NONE; n],
            next: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
            level: vec![0; n],
            iter: vec![0; n],
            eps: 0.0,
        }
    }

    fn push_arc(&mut self, u: usize, v: usize, c: f64) {
        self.to.push(v);
        self.cap.push(c);
        self.next.push(self.head[u]);
        self.head[u] = self.to.len() - 1;
    }

    /// Adds `u -> v` with capacity `forward` and `v -> u` with capacity `backward`.
    pub fn add_edge(&mut self, u: usize, v: usize, forward: f64, backward: f64) {
        self.push_arc(u, v, forward);
        self.push_arc(v, u, backward);
        self.eps = self.eps.max(forward).max(backward);
    }

    fn bfs(&mut self, s: usize, t: usize, tol: f64) -> bool {
        self.level.fill(-1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let mut e = self.head[u];
            while e != NONE {
                let v = self.to[e];
                if self.cap[e] > tol && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
                e = self.next[e];
            }
        }
        self.level[t] >= 0
    }

    /// Pushes blocking flow along level-graph paths; iterative to bound stack use on long
    /// paths.
    fn blocking_flow(&mut self, s: usize, t: usize, tol: f64) {
        self.iter.clone_from(&self.head);
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().fold(f64::INFINITY, |m, &e| m.min(self.cap[e]));
                for &e in &path {
                    self.cap[e] -= f;
                    self.cap[e ^ 1] += f;
                }
                path.clear();
                u = s;
                continue;
            }
            while self.iter[u] != NONE {
                let e = self.iter[u];
                if self.cap[e] > tol && self.level[self.to[e]] == self.level[u] + 1 {
                    break;
                }
                self.iter[u] = self.next[e];
            }
            if self.iter[u] == NONE {
                if u == s {
                    return;
                }
                // dead end: drop it from the level graph and step back
                self.level[u] = -1;
                let e = path.pop().expect("non-source node has a parent arc");
                u = self.to[e ^ 1];
                self.iter[u] = self.next[self.iter[u]];
                continue;
            }
            let e = self.iter[u];
            path.push(e);
            u = self.to[e];
        }
    }

    /// Runs max-flow and returns, for every node, whether it stays on the source side of the
    /// minimum cut.
    pub fn min_cut(&mut self, s: usize, t: usize) -> Vec<bool> {
        // residuals below this are treated as saturated
        let tol = self.eps * 1e-12;
        while self.bfs(s, t, tol) {
            self.blocking_flow(s, t, tol);
        }
        self.bfs(s, t, tol);
        self.level.iter().map(|&l| l >= 0).collect()
    }
}
