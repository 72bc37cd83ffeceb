//! Approximate solver for the generalized minimal partition problem
//!
//! ```text
//! min_f  Σ_i ‖f_i − x_i‖² + Σ_(i,j)∈E w_ij [f_i ≠ f_j]
//! ```
//!
//! in the style of ℓ0 cut pursuit. Each outer iteration splits every component in two by an
//! exact binary min cut between two centroids (with edge weights scaled down by a ramp in
//! early iterations), greedily merges adjacent components while the energy drops, and then
//! forces components smaller than `n_min` into their cheapest neighbor. An iteration that
//! raises the energy at full regularization is rolled back, so the energy history never
//! increases. `f` is always the per-component mean.

mod flow;
mod merge;

use ndarray::{Array2, ArrayView2};

use crate::error::{arg_err, Result};
use crate::graph::{components_where, connected_components, AdjacencyGraph, Partition};
use flow::FlowGraph;
use merge::MergeState;

/// Forced-merge rounds and pairs per round in the final polish.
const KICK_ROUNDS: usize = 4;
const KICK_PAIRS: usize = 8;
/// Single-vertex seedings tried per split, on top of the fixed ones, for components up to
/// `EXTRA_SEED_LIMIT` points.
const EXTRA_SEEDS: usize = 8;
const EXTRA_SEED_LIMIT: usize = 64;
const SPLIT_ROUNDS: usize = 8;
/// Cuts per seeding before larger components keep only the most promising one.
const SCREEN_ROUNDS: usize = 2;
const REFINE_PASSES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GmpConfig {
    pub lambda_tilde: f64,
    pub sigma: f64,
    pub alpha_spat: f64,
    pub n_min_1: usize,
    pub ramp: f64,
    pub max_iters: usize,
}

impl Default for GmpConfig {
    fn default() -> Self {
        Self {
            lambda_tilde: 1.0,
            sigma: 0.5,
            alpha_spat: 0.2,
            n_min_1: 40,
            ramp: 0.7,
            max_iters: 10,
        }
    }
}

impl GmpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return arg_err(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.lambda_tilde >= 0.0) {
            return arg_err(format!(
                "lambda_tilde must be non-negative, got {}",
                self.lambda_tilde
            ));
        }
        if !(self.ramp > 0.0 && self.ramp <= 1.0) {
            return arg_err(format!("ramp must lie in (0, 1], got {}", self.ramp));
        }
        if self.max_iters == 0 {
            return arg_err("max_iters must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmpSolution {
    /// per-vertex value, equal to the mean feature of its component
    pub f: Array2<f64>,
    pub partition: Partition,
    pub energy: f64,
    /// energy at full regularization after each outer iteration
    pub energy_history: Vec<f64>,
    /// set when `n_min` could not be honored (n_min ≥ N) and the graph components were
    /// returned as is
    pub n_min_exceeded: bool,
}

/// `λ = λ̃ / (4c)` for a graph of connectivity `c`.
pub fn lambda_from_normalized(lambda_tilde: f64, connectivity: f64) -> Result<f64> {
    if !(connectivity > 0.0) {
        return arg_err(format!("connectivity must be positive, got {connectivity}"));
    }
    Ok(lambda_tilde / (4.0 * connectivity))
}

/// `ceil(max(n/2, n + (n/2)·log10 λ̃))` with `n = n_min_1`.
pub fn min_superpoint_size(lambda_tilde: f64, n_min_1: usize) -> Result<usize> {
    if !(lambda_tilde > 0.0) {
        return arg_err(format!("lambda_tilde must be positive, got {lambda_tilde}"));
    }
    let n = n_min_1 as f64;
    let v = (n / 2.0).max(n + n / 2.0 * lambda_tilde.log10());
    // the product can land a hair above an integer (e.g. 70.00000000000001)
    Ok((v - 1e-9).ceil().max(0.0) as usize)
}

/// `w_ij = λ exp(−‖e_i − e_j‖² / σ)` for every edge of the graph.
pub fn gmp_edge_weights(
    embeddings: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    lambda: f64,
    sigma: f64,
) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return arg_err(format!("sigma must be positive, got {sigma}"));
    }
    if !(lambda >= 0.0) {
        return arg_err(format!("lambda must be non-negative, got {lambda}"));
    }
    if embeddings.nrows() != graph.num_vertices() {
        return arg_err(format!(
            "{} embeddings for {} vertices",
            embeddings.nrows(),
            graph.num_vertices()
        ));
    }
    Ok(graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let d = &embeddings.row(i as usize) - &embeddings.row(j as usize);
            lambda * (-d.dot(&d) / sigma).exp()
        })
        .collect())
}

/// Rows `[e_i, α·p_i]`.
pub fn augment_features(
    embeddings: ArrayView2<f64>,
    positions: &[[f64; 3]],
    alpha_spat: f64,
) -> Result<Array2<f64>> {
    if embeddings.nrows() != positions.len() {
        return arg_err(format!(
            "{} embeddings for {} positions",
            embeddings.nrows(),
            positions.len()
        ));
    }
    let m = embeddings.ncols();
    let mut out = Array2::zeros((positions.len(), m + 3));
    for (i, p) in positions.iter().enumerate() {
        for c in 0..m {
            out[[i, c]] = embeddings[[i, c]];
        }
        for a in 0..3 {
            out[[i, m + a]] = alpha_spat * p[a];
        }
    }
    Ok(out)
}

/// `Σ‖f_i − x_i‖² + Σ w_ij [i, j in different components]`.
pub fn gmp_energy(
    f: ArrayView2<f64>,
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    w: &[f64],
    partition: &Partition,
) -> Result<f64> {
    if f.dim() != features.dim() || w.len() != graph.num_edges() || partition.len() != f.nrows() {
        return arg_err("energy inputs have inconsistent shapes");
    }
    let fidelity: f64 = f
        .rows()
        .into_iter()
        .zip(features.rows())
        .map(|(a, b)| {
            let d = &a - &b;
            d.dot(&d)
        })
        .sum();
    Ok(fidelity + cut_weight(graph, w, partition.assignment(), 1.0))
}

fn cut_weight(graph: &AdjacencyGraph, w: &[f64], labels: &[u32], scale: f64) -> f64 {
    graph
        .edges()
        .iter()
        .zip(w)
        .filter(|(&(i, j), _)| labels[i as usize] != labels[j as usize])
        .map(|(_, &wij)| wij * scale)
        .sum()
}

fn component_means(
    features: ArrayView2<f64>,
    labels: &[u32],
    count: usize,
) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::zeros((count, features.ncols()));
    let mut sizes = vec![0usize; count];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = sums.row_mut(l as usize);
        row += &features.row(i);
        sizes[l as usize] += 1;
    }
    for (mut row, &n) in sums.rows_mut().into_iter().zip(&sizes) {
        if n > 0 {
            row /= n as f64;
        }
    }
    (sums, sizes)
}

/// Energy at weight scale `scale` of the partition `labels` with `f` the component means.
fn partition_energy(
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    w: &[f64],
    labels: &[u32],
    count: usize,
    scale: f64,
) -> f64 {
    let (means, _) = component_means(features, labels, count);
    let mut fidelity = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let d = &features.row(i) - &means.row(l as usize);
        fidelity += d.dot(&d);
    }
    fidelity + cut_weight(graph, w, labels, scale)
}

fn sse(features: ArrayView2<f64>, members: &[usize]) -> f64 {
    let dim = features.ncols();
    let n = members.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in members {
        for (m, v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    members
        .iter()
        .map(|&i| {
            features
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum()
}

fn dist2(a: &[f64], b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Principal axis of the rows of `members` by power iteration, with the spread along it.
fn principal_axis(features: ArrayView2<f64>, members: &[usize], mean: &[f64]) -> (Vec<f64>, f64) {
    let dim = mean.len();
    let mut cov = vec![0.0; dim * dim];
    for &v in members {
        let x = features.row(v);
        for r in 0..dim {
            for c in 0..dim {
                cov[r * dim + c] += (x[r] - mean[r]) * (x[c] - mean[c]);
            }
        }
    }
    // deterministic start that is not orthogonal to any axis
    let mut u: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64 * 0.1).collect();
    for _ in 0..50 {
        let next: Vec<f64> = (0..dim)
            .map(|r| (0..dim).map(|c| cov[r * dim + c] * u[c]).sum())
            .collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (u, 0.0);
        }
        u = next.into_iter().map(|x| x / norm).collect();
    }
    let var: f64 = members
        .iter()
        .map(|&v| {
            features
                .row(v)
                .iter()
                .zip(mean)
                .zip(&u)
                .map(|((x, m), d)| (x - m) * d)
                .sum::<f64>()
                .powi(2)
        })
        .sum::<f64>()
        / members.len() as f64;
    (u, var.sqrt())
}

/// Binary labeling by alternating an exact min cut against centroids `a`, `b` with centroid
/// updates, for at most `rounds` cuts. `true` means closer to `a`. The centroids of the
/// returned labeling come back too so a run can be continued.
fn two_means_cut(
    features: ArrayView2<f64>,
    members: &[usize],
    internal: &[(usize, usize, f64)],
    mut a: Vec<f64>,
    mut b: Vec<f64>,
    rounds: usize,
) -> (Vec<bool>, Vec<f64>, Vec<f64>) {
    let n = members.len();
    let dim = features.ncols();
    let mut labels: Vec<bool> = vec![true; n];
    for round in 0..rounds {
        let (s, t) = (n, n + 1);
        let mut g = FlowGraph::new(n + 2);
        for (li, &v) in members.iter().enumerate() {
            let x = features.row(v);
            let ca = dist2(&a, x);
            let cb = dist2(&b, x);
            // source side means label a; cutting s->i pays for label b
            if cb > ca {
                g.add_edge(s, li, cb - ca, 0.0);
            } else if ca > cb {
                g.add_edge(li, t, ca - cb, 0.0);
            }
        }
        for &(i, j, wij) in internal {
            if wij > 0.0 {
                g.add_edge(i, j, wij, wij);
            }
        }
        let side = g.min_cut(s, t);
        let new_labels: Vec<bool> = side[..n].to_vec();
        let count_a = new_labels.iter().filter(|&&l| l).count();
        if count_a == 0 || count_a == n {
            return (new_labels, a, b);
        }
        let stable = round > 0 && new_labels == labels;
        labels = new_labels;
        if stable {
            break;
        }
        let mut sa = vec![0.0; dim];
        let mut sb = vec![0.0; dim];
        for (li, &v) in members.iter().enumerate() {
            let target = if labels[li] { &mut sa } else { &mut sb };
            for (t, x) in target.iter_mut().zip(features.row(v)) {
                *t += x;
            }
        }
        let nb = (n - count_a) as f64;
        a = sa.iter().map(|x| x / count_a as f64).collect();
        b = sb.iter().map(|x| x / nb).collect();
    }
    (labels, a, b)
}

/// Connected pieces of a binary labeling inside a component, numbered by first member.
fn label_pieces(n: usize, internal: &[(usize, usize, f64)], labels: &[bool]) -> (Vec<u32>, u32) {
    let mut piece = vec![u32::MAX; n];
    let mut local_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j, _) in internal {
        if labels[i] == labels[j] {
            local_adj[i].push(j);
            local_adj[j].push(i);
        }
    }
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..n {
        if piece[start] != u32::MAX {
            continue;
        }
        piece[start] = count;
        stack.push(start);
        while let Some(x) = stack.pop() {
            for &y in &local_adj[x] {
                if piece[y] == u32::MAX {
                    piece[y] = count;
                    stack.push(y);
                }
            }
        }
        count += 1;
    }
    (piece, count)
}

/// Tries to split one component. Several centroid seedings are tried and the labeling with
/// the lowest energy at weight scale `scale` wins; it is returned (as local piece labels)
/// only if it beats keeping the component whole.
fn split_component(
    features: ArrayView2<f64>,
    adjacency: &crate::graph::Adjacency,
    w: &[f64],
    members: &[usize],
    local_of: &mut [usize],
    scale: f64,
) -> Option<Vec<u32>> {
    let n = members.len();
    if n < 2 {
        return None;
    }
    let dim = features.ncols();
    let mut mean = vec![0.0; dim];
    for &v in members {
        for (m, x) in mean.iter_mut().zip(features.row(v)) {
            *m += x / n as f64;
        }
    }
    let farthest = |from: &[f64]| {
        let mut best = (0usize, -1.0);
        for (li, &v) in members.iter().enumerate() {
            let d = dist2(from, features.row(v));
            if d > best.1 {
                best = (li, d);
            }
        }
        best
    };
    let (s1, d1) = farthest(&mean);
    if d1 <= 0.0 {
        return None;
    }
    let far: Vec<f64> = features.row(members[s1]).to_vec();
    let (s2, _) = farthest(&far);
    let rest_mean: Vec<f64> = mean
        .iter()
        .zip(&far)
        .map(|(m, f)| (m * n as f64 - f) / (n - 1) as f64)
        .collect();
    let (axis, spread) = principal_axis(features, members, &mean);
    let mut seeds = vec![
        (far.clone(), features.row(members[s2]).to_vec()),
        (far, rest_mean),
    ];
    if spread > 0.0 {
        seeds.push((
            mean.iter()
                .zip(&axis)
                .map(|(m, u)| m + spread * u)
                .collect(),
            mean.iter()
                .zip(&axis)
                .map(|(m, u)| m - spread * u)
                .collect(),
        ));
    }
    // a few more single-vertex seeds spread over the component
    let stride = n.div_ceil(EXTRA_SEEDS).max(1);
    let extra = if n <= EXTRA_SEED_LIMIT { n } else { 0 };
    for li in (0..extra).step_by(stride) {
        if li == s1 {
            continue;
        }
        let x = features.row(members[li]).to_vec();
        let rest: Vec<f64> = mean
            .iter()
            .zip(&x)
            .map(|(m, f)| (m * n as f64 - f) / (n - 1) as f64)
            .collect();
        seeds.push((x, rest));
    }

    for (li, &v) in members.iter().enumerate() {
        local_of[v] = li;
    }
    // internal edges once, as (local i, local j, scaled weight)
    let mut internal = Vec::new();
    for (li, &v) in members.iter().enumerate() {
        for &(u, e) in adjacency.neighbors(v) {
            let u = u as usize;
            if v < u && local_of[u] != usize::MAX {
                internal.push((li, local_of[u], w[e as usize] * scale));
            }
        }
    }
    for &v in members {
        local_of[v] = usize::MAX;
    }

    let before = sse(features, members);
    // energy of a labeling split into connected pieces
    let score = |labels: &[bool]| -> Option<(f64, Vec<u32>)> {
        let (piece, count) = label_pieces(n, &internal, labels);
        if count < 2 {
            return None;
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); count as usize];
        for (li, &p) in piece.iter().enumerate() {
            groups[p as usize].push(members[li]);
        }
        let cut: f64 = internal
            .iter()
            .filter(|&&(i, j, _)| piece[i] != piece[j])
            .map(|&(_, _, wij)| wij)
            .sum();
        let after: f64 = groups.iter().map(|g| sse(features, g)).sum::<f64>() + cut;
        Some((after, piece))
    };
    let mut best: Option<(f64, Vec<u32>)> = None;
    let mut keep = |cand: Option<(f64, Vec<u32>)>| {
        if let Some((after, piece)) = cand {
            if best.as_ref().map_or(true, |(e, _)| after < *e) {
                best = Some((after, piece));
            }
        }
    };
    if n <= EXTRA_SEED_LIMIT {
        for (a, b) in seeds {
            let (labels, _, _) = two_means_cut(features, members, &internal, a, b, SPLIT_ROUNDS);
            keep(score(&labels));
        }
    } else {
        // large components: a short run per seeding, then only the best one runs on
        let mut lead: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for (a, b) in seeds {
            let (labels, a, b) = two_means_cut(features, members, &internal, a, b, SCREEN_ROUNDS);
            let cand = score(&labels);
            if let Some((after, _)) = &cand {
                if lead.as_ref().map_or(true, |(e, _, _)| after < e) {
                    lead = Some((*after, a, b));
                }
            }
            keep(cand);
        }
        if let Some((_, a, b)) = lead {
            let (labels, _, _) = two_means_cut(
                features,
                members,
                &internal,
                a,
                b,
                SPLIT_ROUNDS - SCREEN_ROUNDS,
            );
            keep(score(&labels));
        }
    }
    best.filter(|(after, _)| *after < before - 1e-12 * (1.0 + before))
        .map(|(_, piece)| piece)
}

/// Vertices a bounded local search may visit before falling back to a full traversal.
const LOCAL_REACH: usize = 64;

/// Whether the component `labels[v]` (with members `members`, connected, more than one
/// vertex) stays connected without `v`. Paths through `v` only use its neighbors in the
/// component, so reconnecting those locally is enough; otherwise the whole rest is traversed.
fn stays_connected(
    adjacency: &crate::graph::Adjacency,
    labels: &[u32],
    members: &[usize],
    v: usize,
    seen: &mut [u32],
    stamp: &mut u32,
) -> bool {
    let a = labels[v];
    let inside: Vec<usize> = adjacency
        .neighbors(v)
        .iter()
        .map(|&(u, _)| u as usize)
        .filter(|&u| labels[u] == a)
        .collect();
    let Some(&start) = inside.first() else {
        // v touches nothing of its own component, which then is v alone
        return members.len() <= 1;
    };
    let reach = |limit: usize, seen: &mut [u32], stamp: &mut u32| -> usize {
        *stamp += 1;
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = *stamp;
        let mut reached = 1;
        while let Some(p) = queue.pop_front() {
            for &(q, _) in adjacency.neighbors(p) {
                let q = q as usize;
                if q != v && labels[q] == a && seen[q] != *stamp {
                    seen[q] = *stamp;
                    reached += 1;
                    if reached >= limit {
                        return reached;
                    }
                    queue.push_back(q);
                }
            }
        }
        reached
    };
    reach(LOCAL_REACH, seen, stamp);
    if inside.iter().all(|&u| seen[u] == *stamp) {
        return true;
    }
    reach(usize::MAX, seen, stamp) == members.len() - 1
}

/// Moves single boundary vertices to a neighboring component while that lowers the
/// energy, keeps the source component connected and does not push it below `n_min`.
fn refine_boundaries(
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    w: &[f64],
    labels: &[u32],
    n_min: usize,
) -> Vec<u32> {
    let partition = Partition::from_labels(labels);
    let mut labels = partition.assignment().to_vec();
    let count = partition.num_superpoints();
    let dim = features.ncols();
    let adjacency = graph.adjacency();
    let mut size = vec![0usize; count];
    let mut sum = vec![vec![0.0; dim]; count];
    for (v, &l) in labels.iter().enumerate() {
        size[l as usize] += 1;
        for (s, x) in sum[l as usize].iter_mut().zip(features.row(v)) {
            *s += x;
        }
    }
    let mut members: Vec<Vec<usize>> = partition.members();
    let mut seen = vec![u32::MAX; labels.len()];
    let mut stamp = 0u32;
    for _pass in 0..REFINE_PASSES {
        let mut moved = false;
        for v in 0..labels.len() {
            let a = labels[v] as usize;
            let na = size[a];
            if na > 1 && na - 1 < n_min {
                continue;
            }
            let x = features.row(v);
            // weight from v to each adjacent component
            let mut link: Vec<(usize, f64)> = Vec::new();
            let mut to_own = 0.0;
            for &(u, e) in adjacency.neighbors(v) {
                let c = labels[u as usize] as usize;
                let wv = w[e as usize];
                if c == a {
                    to_own += wv;
                } else if let Some(slot) = link.iter_mut().find(|(cc, _)| *cc == c) {
                    slot.1 += wv;
                } else {
                    link.push((c, wv));
                }
            }
            if link.is_empty() && !(na > 1 && n_min <= 1) {
                continue;
            }
            let leave = if na > 1 {
                let nf = na as f64;
                let d2: f64 = x
                    .iter()
                    .zip(&sum[a])
                    .map(|(xi, s)| (xi - s / nf).powi(2))
                    .sum();
                -nf / (nf - 1.0) * d2
            } else {
                0.0
            };
            let mut best: Option<(f64, usize)> = None;
            for &(b, wb) in &link {
                let nb = size[b] as f64;
                let d2: f64 = x
                    .iter()
                    .zip(&sum[b])
                    .map(|(xi, s)| (xi - s / nb).powi(2))
                    .sum();
                let delta = leave + nb / (nb + 1.0) * d2 + to_own - wb;
                if delta < -1e-12
                    && best.map_or(true, |(d, bb)| delta < d || (delta == d && b < bb))
                {
                    best = Some((delta, b));
                }
            }
            // splitting v off on its own
            if na > 1 && n_min <= 1 {
                let delta = leave + to_own;
                if delta < -1e-12 && best.map_or(true, |(d, _)| delta < d) {
                    best = Some((delta, usize::MAX));
                }
            }
            let Some((_, b)) = best else { continue };
            // the rest of the source component must stay connected
            if na > 1
                && !stays_connected(&adjacency, &labels, &members[a], v, &mut seen, &mut stamp)
            {
                continue;
            }
            let b = if b == usize::MAX {
                size.push(0);
                sum.push(vec![0.0; dim]);
                members.push(Vec::new());
                size.len() - 1
            } else {
                b
            };
            labels[v] = b as u32;
            size[a] -= 1;
            size[b] += 1;
            for (c, xi) in x.iter().enumerate() {
                sum[a][c] -= xi;
                sum[b][c] += xi;
            }
            members[a].retain(|&u| u != v);
            members[b].push(v);
            moved = true;
        }
        if !moved {
            break;
        }
    }
    labels
}

fn check_inputs(features: ArrayView2<f64>, graph: &AdjacencyGraph, w: &[f64]) -> Result<()> {
    if features.nrows() != graph.num_vertices() {
        return arg_err(format!(
            "{} feature rows for {} vertices",
            features.nrows(),
            graph.num_vertices()
        ));
    }
    if w.len() != graph.num_edges() {
        return arg_err(format!(
            "{} weights for {} edges",
            w.len(),
            graph.num_edges()
        ));
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return arg_err("edge weights must be finite and non-negative");
    }
    if features.iter().any(|v| !v.is_finite()) {
        return arg_err("features must be finite");
    }
    Ok(())
}

fn finish(
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    w: &[f64],
    labels: &[u32],
    history: Vec<f64>,
    n_min_exceeded: bool,
) -> GmpSolution {
    let partition = Partition::from_labels(labels);
    let (means, _) = component_means(
        features,
        partition.assignment(),
        partition.num_superpoints(),
    );
    let mut f = Array2::zeros(features.dim());
    for (i, &l) in partition.assignment().iter().enumerate() {
        f.row_mut(i).assign(&means.row(l as usize));
    }
    let energy = partition_energy(
        features,
        graph,
        w,
        partition.assignment(),
        partition.num_superpoints(),
        1.0,
    );
    GmpSolution {
        f,
        partition,
        energy,
        energy_history: history,
        n_min_exceeded,
    }
}

type SplitCache = std::collections::HashMap<Vec<usize>, Option<Vec<u32>>>;

/// One split pass over all components at weight scale `scale`; returns new labels.
fn split_pass(
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    w: &[f64],
    partition: &Partition,
    scale: f64,
    cache: &mut SplitCache,
) -> Vec<u32> {
    let adjacency = graph.adjacency();
    let mut local_of = vec![usize::MAX; graph.num_vertices()];
    let mut labels = partition.assignment().to_vec();
    let mut next = partition.num_superpoints() as u32;
    for members in partition.members() {
        // splits at full strength are reused when a component comes back unchanged
        let piece = if scale == 1.0 {
            if let Some(hit) = cache.get(&members) {
                hit.clone()
            } else {
                let piece =
                    split_component(features, &adjacency, w, &members, &mut local_of, scale);
                cache.insert(members.clone(), piece.clone());
                piece
            }
        } else {
            split_component(features, &adjacency, w, &members, &mut local_of, scale)
        };
        if let Some(piece) = piece {
            // piece 0 keeps the component id
            for (li, &v) in members.iter().enumerate() {
                if piece[li] > 0 {
                    labels[v] = next + piece[li] - 1;
                }
            }
            next += piece.iter().max().copied().unwrap_or(0);
        }
    }
    labels
}

/// Solves the partition problem for features `x` (N×D), edge weights `w` (already scaled by
/// λ) and minimum component size `n_min`.
pub fn solve_gmp(
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    w: &[f64],
    n_min: usize,
    config: &GmpConfig,
) -> Result<GmpSolution> {
    config.validate()?;
    check_inputs(features, graph, w)?;
    let n = graph.num_vertices();
    let base = connected_components(graph, &[]);
    if n == 0 {
        return Ok(finish(features, graph, w, &[], Vec::new(), false));
    }
    if n_min >= n {
        log::warn!("minimum superpoint size {n_min} is not below the {n} points; returning graph components");
        let labels = base.assignment().to_vec();
        let e = partition_energy(features, graph, w, &labels, base.num_superpoints(), 1.0);
        return Ok(finish(features, graph, w, &labels, vec![e], true));
    }

    let t_max = config.max_iters;
    let energy_of = |p: &Partition| {
        partition_energy(features, graph, w, p.assignment(), p.num_superpoints(), 1.0)
    };
    let mut best_energy = energy_of(&base);
    let mut best = base.clone();
    // bottom-up agglomeration from singletons competes with the top-down iterates
    let singletons = Partition::from_labels(&(0..n as u32).collect::<Vec<_>>());
    let agglomerated = merge_and_refine(features, graph, w, &singletons, n_min);
    let e = energy_of(&agglomerated);
    if e < best_energy {
        best_energy = e;
        best = agglomerated;
    }
    let mut working = base;
    let mut history = Vec::new();
    let mut cache = SplitCache::new();
    // full-strength iterates seen so far; the iteration is deterministic, so a repeat is a cycle
    let mut seen = std::collections::HashSet::new();
    for t in 0..2 * t_max {
        let steps_left = (t_max - 1).saturating_sub(t) as i32;
        let scale = config.ramp.powi(steps_left);
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let split =
            Partition::from_labels(&split_pass(features, graph, w, &working, scale, &mut cache));
        let next = merge_and_refine(features, graph, &scaled, &split, n_min);
        let changed = next != working;
        working = next;
        // the ramped iterate and its polish at full strength both compete for the answer
        let polished = if scale < 1.0 {
            merge_and_refine(features, graph, w, &working, n_min)
        } else {
            working.clone()
        };
        for cand in [&working, &polished] {
            let e = energy_of(cand);
            if e < best_energy - 1e-12 * (1.0 + best_energy.abs()) {
                best_energy = e;
                best = cand.clone();
            }
        }
        history.push(best_energy);
        let repeated = scale == 1.0 && !seen.insert(working.assignment().to_vec());
        if t + 1 >= t_max && (!changed || repeated) {
            break;
        }
    }
    let (best, best_energy) = kick(features, graph, w, best, best_energy, n_min, &energy_of);
    if let Some(last) = history.last_mut() {
        *last = best_energy;
    }
    Ok(finish(
        features,
        graph,
        w,
        best.assignment(),
        history,
        false,
    ))
}

/// Escapes local minima where several merges only pay off together: forces each of the
/// cheapest adjacent merges, re-optimizes, and keeps the best result while it improves.
fn kick(
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    w: &[f64],
    mut best: Partition,
    mut best_energy: f64,
    n_min: usize,
    energy_of: &dyn Fn(&Partition) -> f64,
) -> (Partition, f64) {
    for _ in 0..KICK_ROUNDS {
        let pairs = MergeState::new(features, graph, w, &best).cheapest_pairs(KICK_PAIRS);
        let mut round_best: Option<(f64, Partition)> = None;
        for (a, b) in pairs {
            let forced: Vec<u32> = best
                .assignment()
                .iter()
                .map(|&l| if l as usize == b { a as u32 } else { l })
                .collect();
            let cand =
                merge_and_refine(features, graph, w, &Partition::from_labels(&forced), n_min);
            let e = energy_of(&cand);
            if round_best.as_ref().map_or(true, |(re, _)| e < *re) {
                round_best = Some((e, cand));
            }
        }
        match round_best {
            Some((e, cand)) if e < best_energy - 1e-12 * (1.0 + best_energy.abs()) => {
                best_energy = e;
                best = cand;
            }
            _ => break,
        }
    }
    (best, best_energy)
}

/// Greedy merges, forced minimum size, boundary refinement and a last greedy merge, all
/// under the weights `w`.
fn merge_and_refine(
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    w: &[f64],
    partition: &Partition,
    n_min: usize,
) -> Partition {
    let mut state = MergeState::new(features, graph, w, partition);
    state.greedy_merge();
    state.force_min_size(n_min);
    let refined = Partition::from_labels(&refine_boundaries(
        features,
        graph,
        w,
        &state.labels(),
        n_min,
    ));
    let merged = MergeState::new(features, graph, w, &refined).best_prefix_labels();
    Partition::from_labels(&refine_boundaries(features, graph, w, &merged, n_min))
}

/// Solves along a regularization path. The smallest `λ̃` is solved from scratch; each larger
/// one starts from the previous partition and only merges, so the number of components never
/// increases with `λ̃`. `unit_weights` are the edge weights for `λ = 1`. Results follow the
/// order of `lambda_tildes`.
pub fn solve_gmp_path(
    features: ArrayView2<f64>,
    graph: &AdjacencyGraph,
    unit_weights: &[f64],
    lambda_tildes: &[f64],
    config: &GmpConfig,
) -> Result<Vec<GmpSolution>> {
    config.validate()?;
    check_inputs(features, graph, unit_weights)?;
    let c = graph.connectivity();
    let mut order: Vec<usize> = (0..lambda_tildes.len()).collect();
    order.sort_by(|&a, &b| lambda_tildes[a].total_cmp(&lambda_tildes[b]));
    let mut out: Vec<Option<GmpSolution>> = vec![None; lambda_tildes.len()];
    let mut previous: Option<Partition> = None;
    for idx in order {
        let lt = lambda_tildes[idx];
        let lambda = if c > 0.0 {
            lambda_from_normalized(lt, c)?
        } else {
            0.0
        };
        let w: Vec<f64> = unit_weights.iter().map(|x| x * lambda).collect();
        let n_min = min_superpoint_size(lt, config.n_min_1)?;
        let sol = match &previous {
            None => solve_gmp(features, graph, &w, n_min, config)?,
            Some(prev) => {
                if n_min >= graph.num_vertices() {
                    solve_gmp(features, graph, &w, n_min, config)?
                } else {
                    let mut state = MergeState::new(features, graph, &w, prev);
                    state.greedy_merge();
                    state.force_min_size(n_min);
                    let p = Partition::from_labels(&state.labels());
                    let e = partition_energy(
                        features,
                        graph,
                        &w,
                        p.assignment(),
                        p.num_superpoints(),
                        1.0,
                    );
                    finish(features, graph, &w, p.assignment(), vec![e], false)
                }
            }
        };
        previous = Some(sol.partition.clone());
        out[idx] = Some(sol);
    }
    Ok(out
        .into_iter()
        .map(|s| s.expect("every index solved"))
        .collect())
}

/// Connected components of regions where `f` is exactly equal.
pub fn extract_partition(f: ArrayView2<f64>, graph: &AdjacencyGraph) -> Result<Partition> {
    if f.nrows() != graph.num_vertices() {
        return arg_err(format!(
            "{} rows for {} vertices",
            f.nrows(),
            graph.num_vertices()
        ));
    }
    Ok(components_where(graph, |e| {
        let (i, j) = graph.edge(e);
        f.row(i) == f.row(j)
    }))
}

#[cfg(test)]
mod tests;
