//! Training of the embedder on labeled clouds: BFS subgraph batches, augmentation, Adam with
//! global-norm clipping and stepped learning-rate decay.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{NeighborhoodTable, PointCloud};
use crate::embed::{
    backward_batch, forward_batch, init_params, read_params, update_running_stats, write_params,
    EmbedderConfig, EmbedderParams, NeighborhoodBatch, Phase,
};
use crate::error::{arg_err, Error, Result};
use crate::gmp::{
    augment_features, gmp_edge_weights, lambda_from_normalized, min_superpoint_size, solve_gmp,
    GmpConfig,
};
use crate::graph::{classify_edges, AdjacencyGraph, Partition};
use crate::loss::{compute_inter_edge_weights, contrastive_loss_array, LossConfig, Weighting};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_clouds: usize,
    pub subgraph_size: usize,
    /// optimizer steps per epoch; 0 means one pass over the clouds
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub clip: f64,
    pub seed: u64,
    pub noise_std: f64,
    pub noise_clamp: f64,
    pub loss: LossConfig,
    /// solver settings for the partitions behind partition-dependent weightings
    pub gmp: GmpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            decay_epochs: vec![20, 35, 45],
            decay_factor: 0.7,
            batch_clouds: 16,
            subgraph_size: 10_000,
            steps_per_epoch: 0,
            lr: 1e-2,
            clip: 1.0,
            seed: 0,
            noise_std: 0.03,
            noise_clamp: 0.1,
            loss: LossConfig::default(),
            gmp: GmpConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return arg_err(format!("decay factor {} outside (0, 1]", self.decay_factor));
        }
        if !(self.clip > 0.0 && self.lr > 0.0) {
            return arg_err("clip and lr must be positive");
        }
        if self.decay_epochs.windows(2).any(|w| w[0] > w[1]) {
            return arg_err("decay epochs must be sorted");
        }
        if self.decay_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return arg_err("decay epochs must precede the last epoch");
        }
        if self.batch_clouds == 0 || self.subgraph_size == 0 {
            return arg_err("batch size and subgraph size must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_clamp >= 0.0) {
            return arg_err("noise settings must be non-negative");
        }
        self.loss.validate()?;
        self.gmp.validate()
    }
}

/// Learning rate in effect during `epoch` (0-based): the base rate times `decay_factor` for
/// every decay epoch already reached.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    let decays = config.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    config.lr * config.decay_factor.powi(decays as i32)
}

/// Vertices reached by breadth-first expansion from a random seed, visiting neighbors in
/// increasing index order. When a connected component runs out, expansion restarts from a
/// random unvisited vertex. The flag is set when `size` exceeds the graph and the whole
/// vertex set is returned.
pub fn sample_training_subgraph(
    graph: &AdjacencyGraph,
    size: usize,
    rng: &mut impl Rng,
) -> (Vec<usize>, AdjacencyGraph, bool) {
    let n = graph.num_vertices();
    if size >= n {
        let all: Vec<usize> = (0..n).collect();
        let (sub, _) = graph.induced(&all);
        return (all, sub, size > n);
    }
    let adjacency = graph.adjacency();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(size);
    let mut queue = VecDeque::new();
    let mut nbrs: Vec<usize> = Vec::new();
    while order.len() < size {
        let seed = loop {
            let v = rng.gen_range(0..n);
            if !visited[v] {
                break v;
            }
        };
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            if order.len() == size {
                break;
            }
            nbrs.clear();
            nbrs.extend(adjacency.neighbors(v).iter().map(|&(u, _)| u as usize));
            nbrs.sort_unstable();
            for &u in &nbrs {
                if !visited[u] {
                    visited[u] = true;
                    queue.push_back(u);
                }
            }
        }
        queue.clear();
    }
    let (sub, _) = graph.induced(&order);
    (order, sub, false)
}

fn clamped_noise(rng: &mut impl Rng, normal: &Normal<f64>, clamp: f64) -> f64 {
    normal.sample(rng).clamp(-clamp, clamp)
}

/// Adds clamped Gaussian noise to the normalized neighbor positions and to all radiometry.
pub fn augment_batch(
    batch: &mut NeighborhoodBatch,
    rng: &mut impl Rng,
    noise_std: f64,
    noise_clamp: f64,
) {
    if noise_std == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, noise_std).expect("finite, non-negative deviation");
    for x in batch
        .normalized
        .iter_mut()
        .chain(batch.set_radiometry.iter_mut())
        .chain(batch.point_radiometry.iter_mut())
    {
        *x += clamped_noise(rng, &normal, noise_clamp);
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Scales `grads` in place so their global norm is at most `clip`. Returns the norm before
/// clipping.
pub fn clip_global_norm(grads: &mut [f64], clip: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip {
        let scale = clip / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Clips the gradient to global norm `clip`, then applies one Adam update. Returns the norm
/// before clipping. Non-finite gradients leave params and state untouched.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    clip: f64,
) -> Result<f64> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Shape(format!(
            "{} params, {} grads, optimizer state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    let mut g = grads.to_vec();
    let norm = clip_global_norm(&mut g, clip);
    state.t += 1;
    let c1 = 1.0 - BETA1.powi(state.t as i32);
    let c2 = 1.0 - BETA2.powi(state.t as i32);
    for (((p, gi), m), v) in params
        .iter_mut()
        .zip(&g)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = BETA1 * *m + (1.0 - BETA1) * gi;
        *v = BETA2 * *v + (1.0 - BETA2) * gi * gi;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    }
    Ok(norm)
}

/// A labeled cloud with its neighborhoods and adjacency graph.
#[derive(Debug, Clone)]
pub struct TrainingCloud {
    pub cloud: PointCloud,
    pub table: NeighborhoodTable,
    pub graph: AdjacencyGraph,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// mean batch loss over the epoch
    pub loss: f64,
    pub lr: f64,
}

/// Per-epoch training log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,loss,lr")?;
        for r in &self.epochs {
            writeln!(w, "{},{},{}", r.epoch, r.loss, r.lr)?;
        }
        Ok(())
    }
}

/// Parameters and optimizer state after some number of epochs.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: EmbedderParams,
    pub adam: AdamState,
    pub epochs_done: usize,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SSPC";
const CHECKPOINT_VERSION: u32 = 1;

/// Weight file followed by the optimizer block.
pub fn write_checkpoint<W: Write>(ck: &Checkpoint, w: &mut W) -> Result<()> {
    write_params(&ck.params, w)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u64::<LittleEndian>(ck.epochs_done as u64)?;
    w.write_u64::<LittleEndian>(ck.adam.t)?;
    w.write_u64::<LittleEndian>(ck.adam.m.len() as u64)?;
    for x in ck.adam.m.iter().chain(&ck.adam.v) {
        w.write_f64::<LittleEndian>(*x)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let params = read_params(r)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing optimizer block".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let epochs_done = r.read_u64::<LittleEndian>()? as usize;
    let t = r.read_u64::<LittleEndian>()?;
    let n = r.read_u64::<LittleEndian>()? as usize;
    if n != params.num_parameters() {
        return Err(Error::Format(format!(
            "optimizer state for {n} values, model has {}",
            params.num_parameters()
        )));
    }
    let read_vec = |r: &mut R| -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(r.read_f64::<LittleEndian>()?)).collect()
    };
    let m = read_vec(r)?;
    let v = read_vec(r)?;
    Ok(Checkpoint {
        params,
        adam: AdamState { m, v, t },
        epochs_done,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(ck, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}

/// One cloud's contribution to a batch.
struct BatchItem {
    vertices: Vec<usize>,
    graph: AdjacencyGraph,
    objects: Vec<u32>,
    positions: Vec<[f64; 3]>,
}

/// Superpoints of a subgraph from its current embeddings, at the training regularization.
fn current_partition(e: &Array2<f64>, item: &BatchItem, gmp: &GmpConfig) -> Result<Partition> {
    let c = item.graph.connectivity();
    let lambda = if c > 0.0 {
        lambda_from_normalized(gmp.lambda_tilde, c)?
    } else {
        0.0
    };
    let w = gmp_edge_weights(e.view(), &item.graph, lambda, gmp.sigma)?;
    let features = augment_features(e.view(), &item.positions, gmp.alpha_spat)?;
    let n_min = min_superpoint_size(gmp.lambda_tilde, gmp.n_min_1)?;
    Ok(solve_gmp(features.view(), &item.graph, &w, n_min, gmp)?.partition)
}

/// Mean loss over the batch items and its gradient with respect to the stacked embeddings.
fn batch_loss(
    e: &Array2<f64>,
    items: &[BatchItem],
    config: &TrainConfig,
) -> Result<(f64, Array2<f64>)> {
    let mut grad = Array2::zeros(e.dim());
    let mut total = 0.0;
    let mut offset = 0;
    let scale = 1.0 / items.len() as f64;
    for item in items {
        let n = item.vertices.len();
        let ei = e.slice(s![offset..offset + n, ..]).to_owned();
        let cls = classify_edges(&item.graph, &item.objects)?;
        let partition = match config.loss.weighting {
            Weighting::Proportional => None,
            _ => Some(current_partition(&ei, item, &config.gmp)?),
        };
        let mu = config.loss.mu_tilde * item.graph.connectivity();
        let weights = compute_inter_edge_weights(
            config.loss.weighting,
            &item.graph,
            &cls,
            partition.as_ref(),
            &item.objects,
            mu,
        )?;
        let (l, g) = contrastive_loss_array(&ei, &item.graph, &cls, &weights, config.loss.delta)?;
        total += l * scale;
        grad.slice_mut(s![offset..offset + n, ..])
            .scaled_add(scale, &g);
        offset += n;
    }
    Ok((total, grad))
}

/// One optimizer step on a batch of clouds. Returns the batch loss.
fn train_step(
    params: &mut EmbedderParams,
    adam: &mut AdamState,
    data: &[TrainingCloud],
    picks: &[usize],
    lr: f64,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut items = Vec::with_capacity(picks.len());
    let mut parts = Vec::with_capacity(picks.len());
    for &ci in picks {
        let tc = &data[ci];
        let objects_all = tc
            .cloud
            .object_ids()
            .ok_or_else(|| Error::Argument(format!("training cloud {ci} has no object ids")))?;
        let (vertices, graph, _) = sample_training_subgraph(&tc.graph, config.subgraph_size, rng);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let rotated = tc.cloud.rotated_z(angle);
        let mut batch = NeighborhoodBatch::from_cloud_positions(
            &tc.cloud,
            rotated.positions(),
            &tc.table,
            &vertices,
        )?;
        augment_batch(&mut batch, rng, config.noise_std, config.noise_clamp);
        parts.push(batch);
        items.push(BatchItem {
            objects: vertices.iter().map(|&v| objects_all[v]).collect(),
            positions: vertices.iter().map(|&v| tc.cloud.positions()[v]).collect(),
            vertices,
            graph,
        });
    }
    let batch = NeighborhoodBatch::concat(&parts)?;
    let tape = forward_batch(params, &batch, Phase::Train)?;
    let (loss, upstream) = batch_loss(tape.embeddings(), &items, config)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    let grads = backward_batch(params, &tape, upstream.view())?;
    update_running_stats(params, &tape);
    adam_step(params.values_mut(), &grads, adam, lr, config.clip)?;
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(loss)
}

/// Trains from fresh parameters initialized with `config.seed`.
pub fn train(
    data: &[TrainingCloud],
    embed_config: &EmbedderConfig,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(EmbedderParams, TrainLog)> {
    let params = init_params(config.seed, embed_config)?;
    let start = Checkpoint {
        adam: AdamState::new(params.num_parameters()),
        params,
        epochs_done: 0,
    };
    let (ck, log) = resume(data, start, config, checkpoint)?;
    Ok((ck.params, log))
}

/// Continues training from a checkpoint up to `config.epochs`, writing the checkpoint after
/// every epoch when a path is given.
pub fn resume(
    data: &[TrainingCloud],
    mut ck: Checkpoint,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if data.is_empty() {
        return arg_err("no training clouds");
    }
    let d = ck.params.config().radiometry_dim;
    for (i, tc) in data.iter().enumerate() {
        if tc.cloud.object_ids().is_none() {
            return arg_err(format!("training cloud {i} has no object ids"));
        }
        if tc.cloud.radiometry_dim() != d {
            return arg_err(format!(
                "training cloud {i} has {} radiometry channels, model expects {d}",
                tc.cloud.radiometry_dim()
            ));
        }
        if tc.table.len() != tc.cloud.len() || tc.graph.num_vertices() != tc.cloud.len() {
            return arg_err(format!("training cloud {i}: table or graph size mismatch"));
        }
    }
    let steps = if config.steps_per_epoch > 0 {
        config.steps_per_epoch
    } else {
        data.len().div_ceil(config.batch_clouds)
    };
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    for epoch in ck.epochs_done..config.epochs {
        // one stream per epoch so resumed runs match uninterrupted ones
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0000_0000_0000 ^ epoch as u64);
        let lr = learning_rate(config, epoch);
        let mut sum = 0.0;
        for _ in 0..steps {
            let mut picks = Vec::with_capacity(config.batch_clouds);
            for _ in 0..config.batch_clouds.min(data.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                picks.push(order[cursor]);
                cursor += 1;
            }
            sum += train_step(
                &mut ck.params,
                &mut ck.adam,
                data,
                &picks,
                lr,
                config,
                &mut rng,
            )?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: sum / steps as f64,
            lr,
        };
        log::info!(
            "epoch {} loss {:.6} lr {:.3e}",
            record.epoch,
            record.loss,
            record.lr
        );
        log.epochs.push(record);
        ck.epochs_done = epoch + 1;
        // restart the shuffle each epoch, again for resumability
        cursor = order.len();
        order.sort_unstable();
        if let Some(path) = checkpoint {
            save_checkpoint(&ck, path)?;
        }
    }
    Ok((ck, log))
}
