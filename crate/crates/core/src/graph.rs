//! Adjacency graph, ground-truth edge classification, connected components and the
//! cross-partition graph used to weight inter-object edges.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use crate::cloud::{KdTree, PointCloud, UNLABELED};
use crate::error::{arg_err, Result};

/// Undirected simple graph over the points of a cloud. Edges are stored as `(i, j)` with
/// `i < j`, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    num_vertices: usize,
    edges: Vec<(u32, u32)>,
}

impl AdjacencyGraph {
    /// Builds a graph from arbitrary vertex pairs: orders each pair, drops duplicates and
    /// rejects self-loops or out-of-range vertices.
    pub fn from_edges(
        num_vertices: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return arg_err(format!("self-loop on vertex {a}"));
            }
            if a >= num_vertices || b >= num_vertices {
                return arg_err(format!(
                    "edge ({a}, {b}) out of range for {num_vertices} vertices"
                ));
            }
            edges.push((a.min(b) as u32, a.max(b) as u32));
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self {
            num_vertices,
            edges,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        let (a, b) = self.edges[e];
        (a as usize, b as usize)
    }

    /// Average connectivity `c = |E| / |V|`.
    pub fn connectivity(&self) -> f64 {
        if self.num_vertices == 0 {
            0.0
        } else {
            self.edges.len() as f64 / self.num_vertices as f64
        }
    }

    /// Compressed adjacency lists: `(neighbor, edge index)` per vertex.
    pub fn adjacency(&self) -> Adjacency {
        let mut degree = vec![0usize; self.num_vertices + 1];
        for &(a, b) in &self.edges {
            degree[a as usize + 1] += 1;
            degree[b as usize + 1] += 1;
        }
        for i in 0..self.num_vertices {
            degree[i + 1] += degree[i];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut entries = vec![(0u32, 0u32); 2 * self.edges.len()];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            entries[fill[a as usize]] = (b, e as u32);
            fill[a as usize] += 1;
            entries[fill[b as usize]] = (a, e as u32);
            fill[b as usize] += 1;
        }
        Adjacency { offsets, entries }
    }

    /// Subgraph induced by `vertices`; vertex `vertices[t]` becomes `t`.
    /// Also returns, for each kept edge, its index in `self`.
    pub fn induced(&self, vertices: &[usize]) -> (AdjacencyGraph, Vec<usize>) {
        let mut local = vec![u32::MAX; self.num_vertices];
        for (t, &v) in vertices.iter().enumerate() {
            local[v] = t as u32;
        }
        let mut kept: Vec<((u32, u32), usize)> = self
            .edges
            .iter()
            .enumerate()
            .filter_map(|(e, &(a, b))| {
                let (la, lb) = (local[a as usize], local[b as usize]);
                (la != u32::MAX && lb != u32::MAX).then(|| ((la.min(lb), la.max(lb)), e))
            })
            .collect();
        kept.sort_unstable();
        let (edges, origin) = kept.into_iter().unzip();
        (
            AdjacencyGraph {
                num_vertices: vertices.len(),
                edges,
            },
            origin,
        )
    }
}

/// CSR adjacency lists of an [`AdjacencyGraph`].
#[derive(Debug, Clone)]
pub struct Adjacency {
    offsets: Vec<usize>,
    entries: Vec<(u32, u32)>,
}

impl Adjacency {
    /// `(neighbor, edge index)` pairs of vertex `v`.
    pub fn neighbors(&self, v: usize) -> &[(u32, u32)] {
        &self.entries[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Symmetrized `k_adj`-nearest-neighbor graph: `(i, j)` is an edge iff `j` is among the
/// nearest neighbors of `i` or `i` among those of `j`.
pub fn build_adjacency(cloud: &PointCloud, k_adj: usize) -> Result<AdjacencyGraph> {
    build_adjacency_with_radius(cloud, k_adj, None)
}

/// [`build_adjacency`] plus, when `radius` is given, every pair closer than `radius`.
/// The radius edges stand in for the Delaunay edges used to connect sparse scan lines.
pub fn build_adjacency_with_radius(
    cloud: &PointCloud,
    k_adj: usize,
    radius: Option<f64>,
) -> Result<AdjacencyGraph> {
    let n = cloud.len();
    if k_adj == 0 || n <= k_adj {
        return arg_err(format!(
            "adjacency needs 0 < k_adj < N, got k_adj={k_adj}, N={n}"
        ));
    }
    let tree = KdTree::new(cloud.positions());
    let mut pairs = Vec::with_capacity(n * k_adj);
    for (i, p) in cloud.positions().iter().enumerate() {
        pairs.extend(
            tree.nearest(*p, k_adj, Some(i))
                .into_iter()
                .map(|(j, _)| (i, j)),
        );
        if let Some(r) = radius {
            pairs.extend(
                tree.within_radius(*p, r)
                    .into_iter()
                    .filter(|&j| j != i)
                    .map(|j| (i, j)),
            );
        }
    }
    AdjacencyGraph::from_edges(n, pairs)
}

/// Ground-truth split of the edge set. All sets hold sorted edge indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeClassification {
    pub intra: Vec<usize>,
    pub inter: Vec<usize>,
    /// inter edges plus every edge sharing a vertex with one (1-edge tolerance zone)
    pub inter_expanded: Vec<usize>,
}

/// Splits edges into intra-object and inter-object sets. Edges touching an
/// [`UNLABELED`] vertex belong to neither.
pub fn classify_edges(graph: &AdjacencyGraph, object_ids: &[u32]) -> Result<EdgeClassification> {
    if object_ids.len() != graph.num_vertices() {
        return arg_err(format!(
            "{} object ids for {} vertices",
            object_ids.len(),
            graph.num_vertices()
        ));
    }
    let mut out = EdgeClassification::default();
    let mut touches_inter = vec![false; graph.num_vertices()];
    for (e, &(a, b)) in graph.edges().iter().enumerate() {
        let (oa, ob) = (object_ids[a as usize], object_ids[b as usize]);
        if oa == UNLABELED || ob == UNLABELED {
            continue;
        }
        if oa == ob {
            out.intra.push(e);
        } else {
            out.inter.push(e);
            touches_inter[a as usize] = true;
            touches_inter[b as usize] = true;
        }
    }
    out.inter_expanded = graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, &(a, b))| touches_inter[a as usize] || touches_inter[b as usize])
        .map(|(e, _)| e)
        .collect();
    Ok(out)
}

/// Assignment of every point to a superpoint with contiguous ids `0..num_superpoints`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<u32>,
    num_superpoints: usize,
}

impl Partition {
    /// Wraps an assignment whose ids are already contiguous.
    pub fn new(assignment: Vec<u32>) -> Result<Self> {
        let num = assignment
            .iter()
            .map(|&s| s as usize + 1)
            .max()
            .unwrap_or(0);
        let mut used = vec![false; num];
        for &s in &assignment {
            used[s as usize] = true;
        }
        if used.iter().any(|u| !u) {
            return arg_err("superpoint ids are not contiguous");
        }
        Ok(Self {
            assignment,
            num_superpoints: num,
        })
    }

    /// Relabels arbitrary ids to `0..K` in order of first appearance.
    pub fn from_labels(labels: &[u32]) -> Self {
        let mut map = BTreeMap::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = map.len() as u32;
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self {
            assignment,
            num_superpoints: map.len(),
        }
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn num_superpoints(&self) -> usize {
        self.num_superpoints
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Member points of every superpoint.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_superpoints];
        for (i, &s) in self.assignment.iter().enumerate() {
            out[s as usize].push(i);
        }
        out
    }

    /// Edges whose endpoints lie in different superpoints (predicted transitions).
    pub fn transitions(&self, graph: &AdjacencyGraph) -> Vec<usize> {
        graph
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| self.assignment[a as usize] != self.assignment[b as usize])
            .map(|(e, _)| e)
            .collect()
    }

    /// Whether every superpoint induces a connected subgraph.
    pub fn is_connected_in(&self, graph: &AdjacencyGraph) -> bool {
        let cut = self.transitions(graph);
        connected_components(graph, &cut).num_superpoints() == self.num_superpoints
    }
}

/// Connected components of the graph once `cut_edges` are removed. Component ids follow
/// the order of each component's smallest vertex.
pub fn connected_components(graph: &AdjacencyGraph, cut_edges: &[usize]) -> Partition {
    let mut cut = vec![false; graph.num_edges()];
    for &e in cut_edges {
        cut[e] = true;
    }
    components_where(graph, |e| !cut[e])
}

/// Components over the edges for which `keep` holds.
pub(crate) fn components_where(graph: &AdjacencyGraph, keep: impl Fn(usize) -> bool) -> Partition {
    let n = graph.num_vertices();
    let adj = graph.adjacency();
    let mut assignment = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    let mut next = 0u32;
    for start in 0..n {
        if assignment[start] != u32::MAX {
            continue;
        }
        assignment[start] = next;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for &(u, e) in adj.neighbors(v) {
                if assignment[u as usize] == u32::MAX && keep(e as usize) {
                    assignment[u as usize] = next;
                    queue.push_back(u as usize);
                }
            }
        }
        next += 1;
    }
    Partition {
        assignment,
        num_superpoints: next as usize,
    }
}

/// Set of inter edges joining two components of the cross partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Superedge {
    pub u: usize,
    pub v: usize,
    pub edges: Vec<usize>,
    /// `mu * min(|U|, |V|) / |(U, V)|`
    pub weight: f64,
}

/// Refinement of the superpoint partition by the object partition, with its superedges.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossPartitionGraph {
    pub components: Vec<Vec<usize>>,
    /// component of each vertex, `u32::MAX` for unlabeled vertices
    pub component_of: Vec<u32>,
    pub superedges: Vec<Superedge>,
    /// weight of each edge of `classification.inter`, same order
    pub inter_weights: Vec<f64>,
}

/// Builds the cross-partition graph: components are connected pieces of `O ∩ S`, and every
/// inter edge between components `U` and `V` is weighted `mu * min(|U|,|V|) / |(U,V)|`.
pub fn build_cross_partition(
    graph: &AdjacencyGraph,
    classification: &EdgeClassification,
    superpoints: &Partition,
    object_ids: &[u32],
    mu: f64,
) -> Result<CrossPartitionGraph> {
    let n = graph.num_vertices();
    if superpoints.len() != n || object_ids.len() != n {
        return arg_err(format!(
            "graph has {n} vertices, partition {} and object ids {}",
            superpoints.len(),
            object_ids.len()
        ));
    }
    let sp = superpoints.assignment();
    let pieces = components_where(graph, |e| {
        let (a, b) = graph.edge(e);
        object_ids[a] != UNLABELED && object_ids[a] == object_ids[b] && sp[a] == sp[b]
    });
    // renumber without unlabeled vertices, keeping smallest-vertex order
    let mut remap = vec![u32::MAX; pieces.num_superpoints()];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut component_of = vec![u32::MAX; n];
    for (i, &c) in pieces.assignment().iter().enumerate() {
        if object_ids[i] == UNLABELED {
            continue;
        }
        if remap[c as usize] == u32::MAX {
            remap[c as usize] = components.len() as u32;
            components.push(Vec::new());
        }
        let id = remap[c as usize];
        component_of[i] = id;
        components[id as usize].push(i);
    }

    let mut grouped: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for &e in &classification.inter {
        let (a, b) = graph.edge(e);
        let (ca, cb) = (component_of[a], component_of[b]);
        grouped.entry((ca.min(cb), ca.max(cb))).or_default().push(e);
    }
    let mut edge_weight = BTreeMap::new();
    let superedges: Vec<Superedge> = grouped
        .into_iter()
        .map(|((u, v), edges)| {
            let (u, v) = (u as usize, v as usize);
            let size = components[u].len().min(components[v].len()) as f64;
            let weight = mu * size / edges.len() as f64;
            for &e in &edges {
                edge_weight.insert(e, weight);
            }
            Superedge {
                u,
                v,
                edges,
                weight,
            }
        })
        .collect();
    let inter_weights = classification
        .inter
        .iter()
        .map(|e| edge_weight[e])
        .collect();
    Ok(CrossPartitionGraph {
        components,
        component_of,
        superedges,
        inter_weights,
    })
}

/// Writes the edge list as `i,j,weight` CSV rows (weight 1 when none is given).
pub fn write_edges_csv<W: Write>(
    graph: &AdjacencyGraph,
    weights: Option<&[f64]>,
    mut w: W,
) -> Result<()> {
    if weights.is_some_and(|ws| ws.len() != graph.num_edges()) {
        return arg_err("one weight per edge required");
    }
    writeln!(w, "i,j,weight")?;
    for (e, &(a, b)) in graph.edges().iter().enumerate() {
        writeln!(w, "{a},{b},{}", weights.map_or(1.0, |ws| ws[e]))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(n: usize) -> AdjacencyGraph {
        AdjacencyGraph::from_edges(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
    }

    #[test]
    fn two_point_adjacency() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let g = build_adjacency(&cloud, 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.connectivity(), 0.5);
    }

    #[test]
    fn symmetrization_adds_reverse_edges() {
        let cloud =
            PointCloud::from_positions(vec![[0.0; 3], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        let g = build_adjacency(&cloud, 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn adjacency_rejects_small_clouds() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(build_adjacency(&cloud, 2).is_err());
    }

    #[test]
    fn radius_augmentation_connects_distant_rows() {
        // two rows 0.5 apart, points 0.1 apart within a row: 2-nn stays within rows
        let pts: Vec<[f64; 3]> = (0..20)
            .map(|i| [(i % 10) as f64 * 0.1, (i / 10) as f64 * 0.5, 0.0])
            .collect();
        let cloud = PointCloud::from_positions(pts).unwrap();
        let plain = build_adjacency(&cloud, 2).unwrap();
        assert_eq!(connected_components(&plain, &[]).num_superpoints(), 2);
        let aug = build_adjacency_with_radius(&cloud, 2, Some(0.5)).unwrap();
        assert_eq!(connected_components(&aug, &[]).num_superpoints(), 1);
    }

    #[test]
    fn from_edges_dedups_and_rejects_loops() {
        let g = AdjacencyGraph::from_edges(3, [(1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(AdjacencyGraph::from_edges(3, [(1, 1)]).is_err());
    }

    #[test]
    fn classify_chain() {
        let g = chain(4);
        let c = classify_edges(&g, &[0, 0, 1, 1]).unwrap();
        assert_eq!(c.inter, vec![1]);
        assert_eq!(c.intra, vec![0, 2]);
        assert_eq!(c.inter_expanded, vec![0, 1, 2]);
    }

    #[test]
    fn classify_uniform_and_distinct() {
        let g = chain(4);
        let c = classify_edges(&g, &[5, 5, 5, 5]).unwrap();
        assert!(c.inter.is_empty() && c.inter_expanded.is_empty());
        assert_eq!(c.intra.len(), 3);
        let c = classify_edges(&g, &[0, 1, 2, 3]).unwrap();
        assert!(c.intra.is_empty());
        assert_eq!(c.inter, vec![0, 1, 2]);
    }

    #[test]
    fn classify_skips_unlabeled() {
        let g = chain(4);
        let c = classify_edges(&g, &[0, UNLABELED, 1, 1]).unwrap();
        assert_eq!(c.intra, vec![2]);
        assert!(c.inter.is_empty());
        assert!(classify_edges(&g, &[0, 1]).is_err());
    }

    #[test]
    fn components_of_chain() {
        let g = chain(4);
        assert_eq!(connected_components(&g, &[]).num_superpoints(), 1);
        let p = connected_components(&g, &[1]);
        assert_eq!(p.assignment(), &[0, 0, 1, 1]);
        let p = connected_components(&g, &[0, 1, 2]);
        assert_eq!(p.assignment(), &[0, 1, 2, 3]);
    }

    #[test]
    fn component_ids_follow_smallest_vertex() {
        let g = AdjacencyGraph::from_edges(5, [(0, 3), (1, 4), (2, 4)]).unwrap();
        assert_eq!(connected_components(&g, &[]).assignment(), &[0, 1, 1, 0, 1]);
    }

    /// Two 2x5 grids side by side, objects of 6 and 4 points.
    fn straddle_instance() -> (AdjacencyGraph, Vec<u32>) {
        // vertices 0..6: object A as a 2x3 grid, 6..10: object B as a 2x2 grid
        // A columns x=0,1,2 ; B columns x=3,4 ; rows y=0,1
        let idx = |x: usize, y: usize| -> usize {
            if x < 3 {
                x * 2 + y
            } else {
                6 + (x - 3) * 2 + y
            }
        };
        let mut edges = Vec::new();
        for x in 0..5 {
            edges.push((idx(x, 0), idx(x, 1)));
            if x + 1 < 5 {
                edges.push((idx(x, 0), idx(x + 1, 0)));
                edges.push((idx(x, 1), idx(x + 1, 1)));
            }
        }
        let g = AdjacencyGraph::from_edges(10, edges).unwrap();
        let objects = (0..10).map(|i| if i < 6 { 0 } else { 1 }).collect();
        (g, objects)
    }

    #[test]
    fn cross_partition_straddling_superpoint() {
        let (g, objects) = straddle_instance();
        let cls = classify_edges(&g, &objects).unwrap();
        assert_eq!(cls.inter.len(), 2);
        let one = Partition::new(vec![0; 10]).unwrap();
        let cp = build_cross_partition(&g, &cls, &one, &objects, 1.0).unwrap();
        assert_eq!(cp.components.len(), 2);
        assert_eq!(cp.superedges.len(), 1);
        assert_eq!(cp.inter_weights, vec![2.0, 2.0]);
    }

    #[test]
    fn cross_partition_matching_objects() {
        let (g, objects) = straddle_instance();
        let cls = classify_edges(&g, &objects).unwrap();
        let exact = Partition::from_labels(&objects);
        let cp = build_cross_partition(&g, &cls, &exact, &objects, 3.0).unwrap();
        assert_eq!(cp.superedges[0].weight, 3.0 * 4.0 / 2.0);
    }

    #[test]
    fn cross_partition_single_edge_interface() {
        // chain A A A | B B, superpoints {0,1},{2,3,4}: the second superpoint straddles
        let g = chain(5);
        let objects = vec![0, 0, 0, 1, 1];
        let cls = classify_edges(&g, &objects).unwrap();
        let sp = Partition::new(vec![0, 0, 1, 1, 1]).unwrap();
        let cp = build_cross_partition(&g, &cls, &sp, &objects, 2.0).unwrap();
        // components {0,1}, {2}, {3,4}; the only inter edge (2,3) joins {2} and {3,4}
        assert_eq!(cp.components, vec![vec![0, 1], vec![2], vec![3, 4]]);
        assert_eq!(cp.superedges.len(), 1);
        assert_eq!((cp.superedges[0].u, cp.superedges[0].v), (1, 2));
        assert_eq!(cp.inter_weights, vec![2.0 * 1.0 / 1.0]);
    }

    #[test]
    fn cross_partition_size_mismatch() {
        let g = chain(3);
        let cls = classify_edges(&g, &[0, 0, 1]).unwrap();
        let sp = Partition::new(vec![0, 0]).unwrap();
        assert!(build_cross_partition(&g, &cls, &sp, &[0, 0, 1], 1.0).is_err());
    }

    #[test]
    fn partition_contiguity() {
        assert!(Partition::new(vec![0, 2]).is_err());
        assert_eq!(Partition::from_labels(&[7, 3, 7]).assignment(), &[0, 1, 0]);
    }

    #[test]
    fn csv_export() {
        let g = chain(3);
        let mut buf = Vec::new();
        write_edges_csv(&g, Some(&[0.5, 2.0]), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "i,j,weight\n0,1,0.5\n1,2,2\n"
        );
    }

    fn random_graph() -> impl Strategy<Value = (AdjacencyGraph, Vec<u32>, Vec<u32>)> {
        (3usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec((0..n, 0..n), 0..3 * n),
                prop::collection::vec(0u32..4, n),
                prop::collection::vec(0u32..3, n),
            )
                .prop_map(move |(pairs, objects, sp)| {
                    let g =
                        AdjacencyGraph::from_edges(n, pairs.into_iter().filter(|(a, b)| a != b))
                            .unwrap();
                    (g, objects, sp)
                })
        })
    }

    proptest! {
        #[test]
        fn cross_partition_invariants((g, objects, sp_raw) in random_graph(), mu in 0.1f64..10.0) {
            let cls = classify_edges(&g, &objects).unwrap();
            // superpoints must be connected: refine raw labels by graph components
            let sp_edges_cut: Vec<usize> = (0..g.num_edges())
                .filter(|&e| { let (a, b) = g.edge(e); sp_raw[a] != sp_raw[b] })
                .collect();
            let sp = connected_components(&g, &sp_edges_cut);
            let cp = build_cross_partition(&g, &cls, &sp, &objects, mu).unwrap();
            let total: usize = cp.components.iter().map(|c| c.len()).sum();
            prop_assert_eq!(total, g.num_vertices());
            for se in &cp.superedges {
                let (u0, v0) = (cp.components[se.u][0], cp.components[se.v][0]);
                prop_assert_ne!(objects[u0], objects[v0]);
                let sum: f64 = se.edges.iter().map(|_| se.weight).sum();
                let want = mu * cp.components[se.u].len().min(cp.components[se.v].len()) as f64;
                prop_assert!((sum - want).abs() <= 1e-9 * want.max(1.0));
                for &e in &se.edges {
                    let (a, b) = g.edge(e);
                    let pair = (cp.component_of[a] as usize, cp.component_of[b] as usize);
                    prop_assert!(pair == (se.u, se.v) || pair == (se.v, se.u));
                }
            }
        }

        #[test]
        fn inter_cut_reproduces_connected_objects((g, objects, _) in random_graph()) {
            let cls = classify_edges(&g, &objects).unwrap();
            let comps = connected_components(&g, &cls.inter);
            // every component is object-pure
            for members in comps.members() {
                prop_assert!(members.iter().all(|&i| objects[i] == objects[members[0]]));
            }
            // and equals the object partition's connected refinement
            let pieces = components_where(&g, |e| { let (a, b) = g.edge(e); objects[a] == objects[b] });
            prop_assert_eq!(comps, pieces);
        }
    }
}
