//! Spatial transform and local point embedder.
//!
//! Each point is described by its `k` nearest neighbors. The neighborhood is centered on the
//! point, scaled to unit RMS radius, and rotated in the horizontal plane by a 2×2 matrix
//! predicted by a small PointNet. A second PointNet maps the transformed neighborhood plus a
//! point descriptor to a unit-norm embedding.

mod layers;
mod params;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

pub use layers::Phase;
pub use params::{
    init_params, load_params, load_params_for, read_params, save_params, write_params,
    EmbedderConfig, EmbedderParams, NormMode,
};

use crate::cloud::{Neighborhood, NeighborhoodTable, PointCloud};
use crate::error::{arg_err, Result};
use layers::{maxpool, maxpool_backward, mlp_backward, mlp_forward, update_running, Mlp, MlpTape};

/// Floor on the neighborhood radius, in meters.
pub const RADIUS_EPS: f64 = 1e-8;

const NORM_FLOOR: f64 = 1e-12;
const EMBED_CHUNK: usize = 1024;

/// Per-point embeddings, one unit-norm row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingField {
    e: Array2<f64>,
}

impl EmbeddingField {
    pub fn new(e: Array2<f64>) -> Self {
        Self { e }
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.e
    }

    pub fn into_array(self) -> Array2<f64> {
        self.e
    }

    pub fn len(&self) -> usize {
        self.e.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.e.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.e.row(i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformedNeighborhood {
    /// k×3 rotated, normalized neighbor positions
    pub p_tilde: Array2<f64>,
    /// [elevation, radius, Ω00, Ω01, Ω10, Ω11]
    pub point_feature: [f64; 6],
    pub rad: f64,
    pub omega: [[f64; 2]; 2],
}

/// Network inputs for a batch of neighborhoods, rows grouped by point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodBatch {
    pub k: usize,
    /// (B·k)×3 positions relative to the center, divided by the radius
    pub normalized: Array2<f64>,
    /// (B·k)×d neighbor radiometry
    pub set_radiometry: Array2<f64>,
    /// B×d radiometry of the center points
    pub point_radiometry: Array2<f64>,
    pub elevation: Vec<f64>,
    pub radius: Vec<f64>,
}

fn normalize_neighborhood(center: [f64; 3], positions: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
    let k = positions.len() as f64;
    let rel: Vec<[f64; 3]> = positions
        .iter()
        .map(|p| [p[0] - center[0], p[1] - center[1], p[2] - center[2]])
        .collect();
    let ms = rel
        .iter()
        .map(|r| r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
        .sum::<f64>()
        / k;
    let rad = ms.sqrt().max(RADIUS_EPS);
    let scaled = rel
        .iter()
        .map(|r| [r[0] / rad, r[1] / rad, r[2] / rad])
        .collect();
    (rad, scaled)
}

impl NeighborhoodBatch {
    pub fn len(&self) -> usize {
        self.elevation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elevation.is_empty()
    }

    /// Stacks batches with equal `k` and radiometry width.
    pub fn concat(parts: &[NeighborhoodBatch]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return arg_err("no batches to concatenate");
        };
        let d = first.point_radiometry.ncols();
        if parts
            .iter()
            .any(|p| p.k != first.k || p.point_radiometry.ncols() != d)
        {
            return arg_err("batches differ in neighborhood size or radiometry width");
        }
        let stack = |f: &dyn Fn(&NeighborhoodBatch) -> ArrayView2<f64>| {
            let views: Vec<ArrayView2<f64>> = parts.iter().map(f).collect();
            concatenate(Axis(0), &views).expect("column counts checked")
        };
        Ok(Self {
            k: first.k,
            normalized: stack(&|p| p.normalized.view()),
            set_radiometry: stack(&|p| p.set_radiometry.view()),
            point_radiometry: stack(&|p| p.point_radiometry.view()),
            elevation: parts
                .iter()
                .flat_map(|p| p.elevation.iter().copied())
                .collect(),
            radius: parts
                .iter()
                .flat_map(|p| p.radius.iter().copied())
                .collect(),
        })
    }

    /// Gathers and normalizes the neighborhoods of `indices`.
    pub fn from_cloud(
        cloud: &PointCloud,
        table: &NeighborhoodTable,
        indices: &[usize],
    ) -> Result<Self> {
        Self::from_cloud_positions(cloud, cloud.positions(), table, indices)
    }

    /// Like [`from_cloud`](Self::from_cloud) with positions overridden (e.g. rotated copies).
    pub fn from_cloud_positions(
        cloud: &PointCloud,
        positions: &[[f64; 3]],
        table: &NeighborhoodTable,
        indices: &[usize],
    ) -> Result<Self> {
        if table.len() != cloud.len() || positions.len() != cloud.len() {
            return arg_err(format!(
                "neighborhood table has {} rows for {} points",
                table.len(),
                cloud.len()
            ));
        }
        let k = table.k();
        let d = cloud.radiometry_dim();
        let b = indices.len();
        let mut normalized = Array2::zeros((b * k, 3));
        let mut set_radiometry = Array2::zeros((b * k, d));
        let mut point_radiometry = Array2::zeros((b, d));
        let mut elevation = Vec::with_capacity(b);
        let mut radius = Vec::with_capacity(b);
        let mut nbr = vec![[0.0; 3]; k];
        for (bi, &i) in indices.iter().enumerate() {
            if i >= cloud.len() {
                return arg_err(format!("point index {i} out of range"));
            }
            for (slot, &j) in nbr.iter_mut().zip(table.row(i)) {
                *slot = positions[j as usize];
            }
            let (rad, scaled) = normalize_neighborhood(positions[i], &nbr);
            for (r, (p, &j)) in scaled.iter().zip(table.row(i)).enumerate() {
                let row = bi * k + r;
                for a in 0..3 {
                    normalized[[row, a]] = p[a];
                }
                set_radiometry
                    .row_mut(row)
                    .assign(&cloud.radiometry().row(j as usize));
            }
            point_radiometry
                .row_mut(bi)
                .assign(&cloud.radiometry().row(i));
            elevation.push(positions[i][2]);
            radius.push(rad);
        }
        Ok(Self {
            k,
            normalized,
            set_radiometry,
            point_radiometry,
            elevation,
            radius,
        })
    }
}

/// Forward state needed by [`backward_batch`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    k: usize,
    normalized: Array2<f64>,
    stn_set: MlpTape,
    stn_arg: Vec<usize>,
    stn_point: MlpTape,
    omega: Array2<f64>,
    lpe: LpeTape,
}

impl ForwardTape {
    /// B×m unit-norm embeddings.
    pub fn embeddings(&self) -> &Array2<f64> {
        &self.lpe.out
    }

    /// B×4 flattened spatial transforms.
    pub fn omega(&self) -> &Array2<f64> {
        &self.omega
    }

    /// Distance of the current inputs to the nearest ReLU kink or maxpool tie, for
    /// finite-difference checks.
    pub fn kink_margin(&self, params: &EmbedderParams) -> f64 {
        let l = &params.layout;
        let v = &params.values;
        [
            self.stn_set.relu_margin(&l.stn_set, v),
            self.stn_point.relu_margin(&l.stn_point, v),
            self.lpe.set.relu_margin(&l.lpe_set, v),
            self.lpe.point.relu_margin(&l.lpe_point, v),
            self.lpe.set.pool_margin,
            self.stn_set.pool_margin,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
struct LpeTape {
    set: MlpTape,
    pool_arg: Vec<usize>,
    set_rows: usize,
    pooled_cols: usize,
    point: MlpTape,
    norms: Vec<f64>,
    out: Array2<f64>,
}

fn l2_rows(raw: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut out = raw.clone();
    let mut norms = Vec::with_capacity(raw.nrows());
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt().max(NORM_FLOOR);
        row /= n;
        norms.push(n);
    }
    (out, norms)
}

#[allow(clippy::too_many_arguments)]
fn lpe_apply(
    set_mlp: &Mlp,
    point_mlp: &Mlp,
    values: &[f64],
    running: &[f64],
    set_in: Array2<f64>,
    point_in: ArrayView2<f64>,
    k: usize,
    phase: Phase,
) -> LpeTape {
    let set_rows = set_in.nrows();
    let (h, set) = mlp_forward(set_mlp, values, running, set_in, k, phase);
    let (pooled, pool_arg) = maxpool(&h, k);
    let pool_margin = layers::maxpool_margin(&h, k);
    let pooled_cols = pooled.ncols();
    let cat = concatenate![Axis(1), pooled, point_in];
    let (raw, point) = mlp_forward(point_mlp, values, running, cat, 1, phase);
    let (out, norms) = l2_rows(&raw);
    LpeTape {
        set: set.with_pool_margin(pool_margin),
        pool_arg,
        set_rows,
        pooled_cols,
        point,
        norms,
        out,
    }
}

/// Returns gradients with respect to the set-feature and point-feature inputs.
fn lpe_backward(
    set_mlp: &Mlp,
    point_mlp: &Mlp,
    values: &[f64],
    tape: &LpeTape,
    upstream: ArrayView2<f64>,
    grads: &mut [f64],
) -> (Array2<f64>, Array2<f64>) {
    let mut draw = upstream.to_owned();
    for ((mut g, e), &n) in draw
        .rows_mut()
        .into_iter()
        .zip(tape.out.rows())
        .zip(&tape.norms)
    {
        if n > NORM_FLOOR {
            let proj = g.dot(&e);
            g.scaled_add(-proj, &e);
        }
        g /= n;
    }
    let dcat = mlp_backward(point_mlp, values, &tape.point, draw, grads, true).expect("input grad");
    let dpooled = dcat.slice(s![.., ..tape.pooled_cols]).to_owned();
    let dpoint = dcat.slice(s![.., tape.pooled_cols..]).to_owned();
    let dh = maxpool_backward(&dpooled, &tape.pool_arg, tape.set_rows);
    let dset = mlp_backward(set_mlp, values, &tape.set, dh, grads, true).expect("input grad");
    (dset, dpoint)
}

fn check_batch(params: &EmbedderParams, batch: &NeighborhoodBatch) -> Result<()> {
    let b = batch.len();
    let d = params.config().radiometry_dim;
    let k = batch.k;
    if k == 0 {
        return arg_err("empty neighborhood");
    }
    let ok = batch.normalized.dim() == (b * k, 3)
        && batch.set_radiometry.dim() == (b * k, d)
        && batch.point_radiometry.dim() == (b, d)
        && batch.radius.len() == b;
    if !ok {
        return arg_err(format!(
            "batch shapes do not match k={k}, d={d} for {b} points"
        ));
    }
    Ok(())
}

/// Runs the full network on a batch.
pub fn forward_batch(
    params: &EmbedderParams,
    batch: &NeighborhoodBatch,
    phase: Phase,
) -> Result<ForwardTape> {
    check_batch(params, batch)?;
    let l = &params.layout;
    let (v, run) = (&params.values[..], &params.running[..]);
    let k = batch.k;
    let b = batch.len();
    let d = params.config().radiometry_dim;

    let (stn_h, stn_set) = mlp_forward(&l.stn_set, v, run, batch.normalized.clone(), k, phase);
    let (stn_pooled, stn_arg) = maxpool(&stn_h, k);
    let stn_margin = layers::maxpool_margin(&stn_h, k);
    let (omega, stn_point) = mlp_forward(&l.stn_point, v, run, stn_pooled, 1, phase);

    let mut set_in = Array2::zeros((b * k, 3 + d));
    for r in 0..b * k {
        let o = omega.row(r / k);
        let (x, y, z) = (
            batch.normalized[[r, 0]],
            batch.normalized[[r, 1]],
            batch.normalized[[r, 2]],
        );
        set_in[[r, 0]] = x * o[0] + y * o[2];
        set_in[[r, 1]] = x * o[1] + y * o[3];
        set_in[[r, 2]] = z;
        set_in
            .slice_mut(s![r, 3..])
            .assign(&batch.set_radiometry.row(r));
    }
    let mut point_in = Array2::zeros((b, 6 + d));
    for bi in 0..b {
        point_in[[bi, 0]] = batch.elevation[bi];
        point_in[[bi, 1]] = batch.radius[bi];
        for c in 0..4 {
            point_in[[bi, 2 + c]] = omega[[bi, c]];
        }
        point_in
            .slice_mut(s![bi, 6..])
            .assign(&batch.point_radiometry.row(bi));
    }
    let lpe = lpe_apply(
        &l.lpe_set,
        &l.lpe_point,
        v,
        run,
        set_in,
        point_in.view(),
        k,
        phase,
    );
    Ok(ForwardTape {
        k,
        normalized: batch.normalized.clone(),
        stn_set: stn_set.with_pool_margin(stn_margin),
        stn_arg,
        stn_point,
        omega,
        lpe,
    })
}

/// Gradient of `Σ_i ⟨upstream_i, e_i⟩` with respect to every trainable value.
pub fn backward_batch(
    params: &EmbedderParams,
    tape: &ForwardTape,
    upstream: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    if upstream.dim() != tape.lpe.out.dim() {
        return arg_err(format!(
            "upstream gradient is {:?}, embeddings are {:?}",
            upstream.dim(),
            tape.lpe.out.dim()
        ));
    }
    let l = &params.layout;
    let v = &params.values[..];
    let mut grads = vec![0.0; v.len()];
    let (dset, dpoint) = lpe_backward(&l.lpe_set, &l.lpe_point, v, &tape.lpe, upstream, &mut grads);

    let k = tape.k;
    let b = tape.omega.nrows();
    let mut domega = Array2::zeros((b, 4));
    for bi in 0..b {
        for c in 0..4 {
            domega[[bi, c]] = dpoint[[bi, 2 + c]];
        }
    }
    for r in 0..b * k {
        let bi = r / k;
        let (x, y) = (tape.normalized[[r, 0]], tape.normalized[[r, 1]]);
        let (gx, gy) = (dset[[r, 0]], dset[[r, 1]]);
        domega[[bi, 0]] += gx * x;
        domega[[bi, 2]] += gx * y;
        domega[[bi, 1]] += gy * x;
        domega[[bi, 3]] += gy * y;
    }
    let dpool = mlp_backward(&l.stn_point, v, &tape.stn_point, domega, &mut grads, true)
        .expect("input grad");
    let dh = maxpool_backward(&dpool, &tape.stn_arg, b * k);
    mlp_backward(&l.stn_set, v, &tape.stn_set, dh, &mut grads, false);
    Ok(grads)
}

/// Folds the batch statistics of a training-phase forward pass into the running statistics.
pub fn update_running_stats(params: &mut EmbedderParams, tape: &ForwardTape) {
    let l = params.layout.clone();
    update_running(&l.stn_set, &tape.stn_set, &mut params.running);
    update_running(&l.stn_point, &tape.stn_point, &mut params.running);
    update_running(&l.lpe_set, &tape.lpe.set, &mut params.running);
    update_running(&l.lpe_point, &tape.lpe.point, &mut params.running);
}

/// Normalizes a neighborhood and applies the predicted horizontal transform.
pub fn spatial_transform(
    nbhd: &Neighborhood,
    params: &EmbedderParams,
) -> Result<TransformedNeighborhood> {
    let k = nbhd.positions.len();
    if k == 0 {
        return arg_err("empty neighborhood");
    }
    let (rad, scaled) = normalize_neighborhood(nbhd.center, &nbhd.positions);
    let normalized = Array2::from_shape_fn((k, 3), |(r, a)| scaled[r][a]);
    let l = &params.layout;
    let (h, _) = mlp_forward(
        &l.stn_set,
        &params.values,
        &params.running,
        normalized.clone(),
        k,
        Phase::Eval,
    );
    let (pooled, _) = maxpool(&h, k);
    let (o, _) = mlp_forward(
        &l.stn_point,
        &params.values,
        &params.running,
        pooled,
        1,
        Phase::Eval,
    );
    let o = o.row(0);
    let p_tilde = Array2::from_shape_fn((k, 3), |(r, a)| {
        let (x, y, z) = (normalized[[r, 0]], normalized[[r, 1]], normalized[[r, 2]]);
        match a {
            0 => x * o[0] + y * o[2],
            1 => x * o[1] + y * o[3],
            _ => z,
        }
    });
    Ok(TransformedNeighborhood {
        p_tilde,
        point_feature: [nbhd.center[2], rad, o[0], o[1], o[2], o[3]],
        rad,
        omega: [[o[0], o[1]], [o[2], o[3]]],
    })
}

/// Embeds one point from its set-feature `X` (k×(3+d)) and point-feature `x` (6+d).
pub fn lpe_forward(
    set_feature: ArrayView2<f64>,
    point_feature: ArrayView1<f64>,
    params: &EmbedderParams,
) -> Result<Array1<f64>> {
    let c = params.config();
    if set_feature.nrows() == 0
        || set_feature.ncols() != c.set_feature_dim()
        || point_feature.len() != c.point_feature_dim()
    {
        return arg_err(format!(
            "expected k×{} set-feature and {}-vector point-feature, got {:?} and {}",
            c.set_feature_dim(),
            c.point_feature_dim(),
            set_feature.dim(),
            point_feature.len()
        ));
    }
    let l = &params.layout;
    let k = set_feature.nrows();
    let point = point_feature.insert_axis(Axis(0));
    let tape = lpe_apply(
        &l.lpe_set,
        &l.lpe_point,
        &params.values,
        &params.running,
        set_feature.to_owned(),
        point,
        k,
        Phase::Eval,
    );
    Ok(tape.out.row(0).to_owned())
}

/// Embeds every point of the cloud with inference-phase normalization.
pub fn embed_cloud(
    cloud: &PointCloud,
    table: &NeighborhoodTable,
    params: &EmbedderParams,
) -> Result<EmbeddingField> {
    if cloud.radiometry_dim() != params.config().radiometry_dim {
        return arg_err(format!(
            "cloud has {} radiometry channels, embedder expects {}",
            cloud.radiometry_dim(),
            params.config().radiometry_dim
        ));
    }
    let m = params.config().embedding_dim();
    let mut e = Array2::zeros((cloud.len(), m));
    let all: Vec<usize> = (0..cloud.len()).collect();
    for chunk in all.chunks(EMBED_CHUNK) {
        let batch = NeighborhoodBatch::from_cloud(cloud, table, chunk)?;
        let tape = forward_batch(params, &batch, Phase::Eval)?;
        e.slice_mut(s![chunk[0]..chunk[0] + chunk.len(), ..])
            .assign(tape.embeddings());
    }
    Ok(EmbeddingField { e })
}

/// Parameter gradient of `Σ_i ⟨upstream_i, e_i⟩` over the whole cloud, evaluated in one batch.
pub fn backward(
    cloud: &PointCloud,
    table: &NeighborhoodTable,
    params: &EmbedderParams,
    upstream: ArrayView2<f64>,
    phase: Phase,
) -> Result<Vec<f64>> {
    let m = params.config().embedding_dim();
    if upstream.dim() != (cloud.len(), m) {
        return arg_err(format!(
            "upstream gradient is {:?}, expected ({}, {m})",
            upstream.dim(),
            cloud.len()
        ));
    }
    let all: Vec<usize> = (0..cloud.len()).collect();
    let batch = NeighborhoodBatch::from_cloud(cloud, table, &all)?;
    let tape = forward_batch(params, &batch, phase)?;
    backward_batch(params, &tape, upstream)
}
