//! Graph-structured contrastive loss on point embeddings.
//!
//! Intra-object edges pull embeddings together through a pseudo-Huber penalty φ; inter-object
//! edges push them at least unit distance apart through the hinge ψ, each weighted by μ_ij.

use ndarray::{Array2, ArrayView1};

use crate::cloud::voxel::majority;
use crate::cloud::UNLABELED;
use crate::embed::EmbeddingField;
use crate::error::{arg_err, Result};
use crate::graph::{build_cross_partition, AdjacencyGraph, EdgeClassification, Partition};

/// How inter-object edges are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// μ·min(|U|,|V|)/|(U,V)| on superedges of the cross partition
    CrossPartition,
    /// 1 + |S ∩ O_S| for inter edges inside a superpoint S, 1 elsewhere
    Seal,
    /// constant |E_intra| / |E_inter|
    Proportional,
}

impl std::str::FromStr for Weighting {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_partition" | "cross-partition" => Ok(Weighting::CrossPartition),
            "seal" => Ok(Weighting::Seal),
            "proportional" => Ok(Weighting::Proportional),
            other => arg_err(format!("unknown weighting {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub delta: f64,
    pub mu_tilde: f64,
    pub weighting: Weighting,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            delta: 0.3,
            mu_tilde: 5.0,
            weighting: Weighting::CrossPartition,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.mu_tilde > 0.0) {
            return arg_err(format!(
                "delta and mu_tilde must be positive, got {} and {}",
                self.delta, self.mu_tilde
            ));
        }
        Ok(())
    }
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Pseudo-Huber penalty `δ(√(‖x‖²/δ²+1) − 1)`.
pub fn phi(diff: ArrayView1<f64>, delta: f64) -> f64 {
    let s = diff.dot(&diff) / (delta * delta);
    delta * ((s + 1.0).sqrt() - 1.0)
}

/// Truncated negative distance `max(1 − ‖x‖, 0)`.
pub fn psi(diff: ArrayView1<f64>) -> f64 {
    (1.0 - norm(diff)).max(0.0)
}

/// Per-inter-edge weights, aligned with `classification.inter`.
///
/// `superpoints` is required by the partition-dependent modes; `mu` is the absolute weight
/// μ = μ̃·c used by the cross-partition mode.
pub fn compute_inter_edge_weights(
    mode: Weighting,
    graph: &AdjacencyGraph,
    classification: &EdgeClassification,
    superpoints: Option<&Partition>,
    object_ids: &[u32],
    mu: f64,
) -> Result<Vec<f64>> {
    match mode {
        Weighting::Proportional => {
            let w = classification.intra.len() as f64 / classification.inter.len().max(1) as f64;
            Ok(vec![w; classification.inter.len()])
        }
        Weighting::CrossPartition => {
            let Some(sp) = superpoints else {
                return arg_err("cross-partition weighting needs a partition");
            };
            Ok(build_cross_partition(graph, classification, sp, object_ids, mu)?.inter_weights)
        }
        Weighting::Seal => {
            let Some(sp) = superpoints else {
                return arg_err("seal weighting needs a partition");
            };
            if sp.len() != graph.num_vertices() || object_ids.len() != graph.num_vertices() {
                return arg_err("partition or object ids do not match the graph");
            }
            // weight of a superpoint: 1 + points of its majority object
            let weight: Vec<f64> = sp
                .members()
                .iter()
                .map(|pts| {
                    let o = majority(
                        pts.iter()
                            .map(|&i| object_ids[i])
                            .filter(|&o| o != UNLABELED),
                    );
                    1.0 + pts.iter().filter(|&&i| object_ids[i] == o).count() as f64
                })
                .collect();
            let a = sp.assignment();
            Ok(classification
                .inter
                .iter()
                .map(|&e| {
                    let (i, j) = graph.edge(e);
                    if a[i] == a[j] {
                        weight[a[i] as usize]
                    } else {
                        1.0
                    }
                })
                .collect())
        }
    }
}

/// Loss value and its gradient with respect to the embeddings.
pub fn contrastive_loss(
    embeddings: &EmbeddingField,
    graph: &AdjacencyGraph,
    classification: &EdgeClassification,
    weights: &[f64],
    delta: f64,
) -> Result<(f64, Array2<f64>)> {
    contrastive_loss_array(embeddings.as_array(), graph, classification, weights, delta)
}

pub fn contrastive_loss_array(
    e: &Array2<f64>,
    graph: &AdjacencyGraph,
    classification: &EdgeClassification,
    weights: &[f64],
    delta: f64,
) -> Result<(f64, Array2<f64>)> {
    if weights.len() != classification.inter.len() {
        return arg_err(format!(
            "{} weights for {} inter edges",
            weights.len(),
            classification.inter.len()
        ));
    }
    if e.nrows() != graph.num_vertices() {
        return arg_err(format!(
            "{} embeddings for {} vertices",
            e.nrows(),
            graph.num_vertices()
        ));
    }
    let mut grad = Array2::zeros(e.dim());
    let total = classification.intra.len() + classification.inter.len();
    if total == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / total as f64;
    let mut loss = 0.0;
    for &edge in &classification.intra {
        let (i, j) = graph.edge(edge);
        let diff = &e.row(i) - &e.row(j);
        let s = (diff.dot(&diff) / (delta * delta) + 1.0).sqrt();
        loss += delta * (s - 1.0);
        let g = diff * (scale / (delta * s));
        grad.row_mut(i).scaled_add(1.0, &g);
        grad.row_mut(j).scaled_add(-1.0, &g);
    }
    for (&edge, &mu) in classification.inter.iter().zip(weights) {
        let (i, j) = graph.edge(edge);
        let diff = &e.row(i) - &e.row(j);
        let n = norm(diff.view());
        if n >= 1.0 {
            continue;
        }
        loss += mu * (1.0 - n);
        if n > 0.0 {
            let g = diff * (-mu * scale / n);
            grad.row_mut(i).scaled_add(1.0, &g);
            grad.row_mut(j).scaled_add(-1.0, &g);
        }
    }
    Ok((loss * scale, grad))
}
